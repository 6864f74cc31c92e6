#pragma once

#include <string>
#include <vector>

namespace picar {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Writes a self-contained static SVG line plot (markers + polylines, axes,
// legend). Series with a single point render as markers only.
void write_line_plot(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<PlotSeries>& series);

}  // namespace picar
