#include "picar/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace picar {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                          "#9467bd", "#ff7f0e", "#8c564b"};
constexpr int kColors = 6;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_line_plot(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<PlotSeries>& series) {
  constexpr double width = 640, height = 420;
  constexpr double left = 64, right = 18, top = 42, bottom = 48;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;

  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_min = x_min, y_max = -x_min;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size())
      throw std::invalid_argument("write_line_plot: x/y length mismatch in '" +
                                  s.label + "'");
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x_min = std::min(x_min, s.x[i]);
      x_max = std::max(x_max, s.x[i]);
      y_min = std::min(y_min, s.y[i]);
      y_max = std::max(y_max, s.y[i]);
    }
  }
  if (!(x_min <= x_max)) { x_min = 0; x_max = 1; }
  if (!(y_min <= y_max)) { y_min = 0; y_max = 1; }
  if (x_max == x_min) { x_min -= 1; x_max += 1; }
  if (y_max == y_min) { y_min -= 1; y_max += 1; }
  const double x_pad = 0.04 * (x_max - x_min);
  const double y_pad = 0.06 * (y_max - y_min);
  x_min -= x_pad; x_max += x_pad;
  y_min -= y_pad; y_max += y_pad;

  auto sx = [&](double v) { return left + (v - x_min) / (x_max - x_min) * plot_w; };
  auto sy = [&](double v) { return top + plot_h - (v - y_min) / (y_max - y_min) * plot_h; };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_line_plot: cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' '
      << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">"
      << escape(title) << "</text>\n";

  // Axes with 5 linear ticks each.
  out << "<g stroke=\"#333\" stroke-width=\"1\">\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\""
      << left + plot_w << "\" y2=\"" << top + plot_h << "\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left
      << "\" y2=\"" << top + plot_h << "\"/>\n";
  out << "</g>\n";
  out << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x_min + (x_max - x_min) * t / 4.0;
    const double yv = y_min + (y_max - y_min) * t / 4.0;
    out << "<line x1=\"" << sx(xv) << "\" y1=\"" << top + plot_h << "\" x2=\""
        << sx(xv) << "\" y2=\"" << top + plot_h + 4
        << "\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << sx(xv) << "\" y=\"" << top + plot_h + 16
        << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
    out << "<line x1=\"" << left - 4 << "\" y1=\"" << sy(yv) << "\" x2=\""
        << left << "\" y2=\"" << sy(yv) << "\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << left - 7 << "\" y=\"" << sy(yv) + 4
        << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
  }
  out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(x_label)
      << "</text>\n";
  out << "<text x=\"16\" y=\"" << top + plot_h / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
      << top + plot_h / 2 << ")\">" << escape(y_label) << "</text>\n";
  out << "</g>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % kColors];
    if (s.x.size() > 1) {
      out << "<polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.7\" points=\"";
      for (size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        out << fmt(sx(s.x[i])) << ',' << fmt(sy(s.y[i])) << ' ';
      }
      out << "\"/>\n";
    }
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      out << "<circle cx=\"" << fmt(sx(s.x[i])) << "\" cy=\""
          << fmt(sy(s.y[i])) << "\" r=\"2.6\" fill=\"" << color << "\"/>\n";
    }
  }

  // Legend, top right inside the plot area.
  out << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (size_t si = 0; si < series.size(); ++si) {
    const double ly = top + 10 + 16 * static_cast<double>(si);
    out << "<line x1=\"" << left + plot_w - 120 << "\" y1=\"" << ly
        << "\" x2=\"" << left + plot_w - 100 << "\" y2=\"" << ly
        << "\" stroke=\"" << kPalette[si % kColors]
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + plot_w - 94 << "\" y=\"" << ly + 4 << "\">"
        << escape(series[si].label) << "</text>\n";
  }
  out << "</g>\n</svg>\n";
}

}  // namespace picar
