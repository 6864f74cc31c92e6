#include "picar/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "picar/rng.hpp"

namespace picar {

namespace {

constexpr double kWeightTol = 1e-9;  // barycentric containment slack

struct Circum {
  double cx, cy, r2;
};

// Circumcircle through a, b, c; computed relative to a for stability.
Circum circumcircle(const Point2& a, const Point2& b, const Point2& c) {
  const double bx = b.x - a.x, by = b.y - a.y;
  const double cx = c.x - a.x, cy = c.y - a.y;
  const double d = 2.0 * (bx * cy - by * cx);
  if (d == 0.0) return {a.x, a.y, std::numeric_limits<double>::infinity()};
  const double b2 = bx * bx + by * by;
  const double c2 = cx * cx + cy * cy;
  const double ux = (cy * b2 - by * c2) / d;
  const double uy = (bx * c2 - cx * b2) / d;
  return {a.x + ux, a.y + uy, ux * ux + uy * uy};
}

bool in_circumcircle(const Circum& cc, const Point2& p) {
  const double dx = p.x - cc.cx, dy = p.y - cc.cy;
  // Strict containment with a relative squeeze so cocircular sets
  // (regular grids, square corners) resolve deterministically by
  // insertion order instead of flapping on rounding.
  return dx * dx + dy * dy < cc.r2 * (1.0 - 1e-12);
}

double signed_area2(const Point2& a, const Point2& b, const Point2& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// Barycentric coordinates of p in triangle (a, b, c) via Cramer's rule.
std::array<double, 3> barycentric(const Point2& a, const Point2& b,
                                  const Point2& c, const Point2& p) {
  const double det = signed_area2(a, b, c);
  const double w0 = signed_area2(p, b, c) / det;
  const double w1 = signed_area2(a, p, c) / det;
  return {w0, w1, 1.0 - w0 - w1};
}

bool contains(const std::array<double, 3>& w) {
  return w[0] >= -kWeightTol && w[1] >= -kWeightTol && w[2] >= -kWeightTol;
}

struct BwTriangle {
  std::array<int, 3> v;
  Circum cc;
  bool alive = true;
};

void compute_neighbors(Mesh& mesh) {
  mesh.neighbors.assign(mesh.triangles.size(), {-1, -1, -1});
  std::map<std::pair<int, int>, std::pair<int, int>> open;  // edge -> (tri, slot)
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const auto& tri = mesh.triangles[t];
    for (int i = 0; i < 3; ++i) {
      int u = tri[(i + 1) % 3], v = tri[(i + 2) % 3];
      auto key = std::minmax(u, v);
      auto it = open.find(key);
      if (it == open.end()) {
        open.emplace(key, std::make_pair(t, i));
      } else {
        mesh.neighbors[t][i] = it->second.first;
        mesh.neighbors[it->second.first][it->second.second] = t;
        open.erase(it);
      }
    }
  }
}

}  // namespace

Mesh triangulate(std::span<const Point2> nodes) {
  const int m = static_cast<int>(nodes.size());
  if (m < 3) throw std::invalid_argument("triangulate: need at least 3 nodes");

  double x0 = nodes[0].x, x1 = nodes[0].x, y0 = nodes[0].y, y1 = nodes[0].y;
  for (const auto& p : nodes) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double span = std::max({x1 - x0, y1 - y0, 1e-12});
  const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);

  std::vector<Point2> pts(nodes.begin(), nodes.end());
  // Super-triangle far outside the data so its circumcircles do not
  // interfere with interior structure.
  pts.push_back({cx - 30.0 * span, cy - 15.0 * span});
  pts.push_back({cx + 30.0 * span, cy - 15.0 * span});
  pts.push_back({cx, cy + 30.0 * span});

  std::vector<BwTriangle> tris;
  tris.push_back({{m, m + 1, m + 2},
                  circumcircle(pts[m], pts[m + 1], pts[m + 2]),
                  true});

  std::vector<int> bad;
  std::map<std::pair<int, int>, std::pair<int, int>> edge_count;

  for (int i = 0; i < m; ++i) {
    Point2 p = pts[i];
    for (int attempt = 0;; ++attempt) {
      bad.clear();
      for (int t = 0; t < static_cast<int>(tris.size()); ++t)
        if (tris[t].alive && in_circumcircle(tris[t].cc, p)) bad.push_back(t);

      // Cavity boundary: edges of bad triangles seen exactly once.
      edge_count.clear();
      bool manifold = true;
      for (int t : bad) {
        for (int e = 0; e < 3; ++e) {
          int u = tris[t].v[e], v = tris[t].v[(e + 1) % 3];
          auto key = std::minmax(u, v);
          auto it = edge_count.find(key);
          if (it == edge_count.end()) {
            edge_count.emplace(key, std::make_pair(u, v));
          } else if (it->second.first == -1) {
            manifold = false;  // same edge in three bad triangles
          } else {
            it->second.first = -1;  // interior edge, drop
          }
        }
      }
      if (!bad.empty() && manifold) {
        for (int t : bad) tris[t].alive = false;
        for (const auto& [key, dir] : edge_count) {
          if (dir.first == -1) continue;
          int u = dir.first, v = dir.second;
          BwTriangle nt{{u, v, i}, circumcircle(pts[u], pts[v], p), true};
          if (signed_area2(pts[u], pts[v], p) < 0.0) std::swap(nt.v[0], nt.v[1]);
          tris.push_back(nt);
        }
        pts[i] = p;
        break;
      }
      if (attempt >= 6)
        throw std::runtime_error("triangulate: degenerate node configuration");
      // Deterministic symbolic-style nudge to break exact degeneracy.
      const double eps = span * 1e-9 * (attempt + 1);
      p.x = pts[i].x + eps * ((i % 3) - 1 == 0 ? 1.0 : (i % 3) - 1);
      p.y = pts[i].y + eps * ((i % 2) == 0 ? 1.0 : -1.0);
    }
  }

  Mesh mesh;
  mesh.vertices.assign(pts.begin(), pts.begin() + m);
  for (const auto& t : tris) {
    if (!t.alive) continue;
    if (t.v[0] >= m || t.v[1] >= m || t.v[2] >= m) continue;
    auto tri = t.v;
    if (signed_area2(pts[tri[0]], pts[tri[1]], pts[tri[2]]) < 0.0)
      std::swap(tri[1], tri[2]);
    mesh.triangles.push_back(tri);
  }
  if (mesh.triangles.empty())
    throw std::runtime_error("triangulate: all nodes collinear");
  mesh.bounds = {x0, y0, x1, y1};
  compute_neighbors(mesh);
  return mesh;
}

Mesh build_mesh(std::span<const Point2> locations, int target_nodes,
                double buffer_fraction, std::uint64_t seed) {
  if (locations.empty())
    throw std::invalid_argument("build_mesh: no locations");
  if (target_nodes < 4)
    throw std::invalid_argument("build_mesh: target_nodes must be >= 4");
  if (buffer_fraction < 0.0)
    throw std::invalid_argument("build_mesh: negative buffer_fraction");

  double x0 = locations[0].x, x1 = locations[0].x;
  double y0 = locations[0].y, y1 = locations[0].y;
  for (const auto& p : locations) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double w = x1 - x0, h = y1 - y0;
  const double pad_x = buffer_fraction * (w > 0.0 ? w : std::max(h, 1.0));
  const double pad_y = buffer_fraction * (h > 0.0 ? h : std::max(w, 1.0));
  const double X0 = x0 - pad_x, X1 = x1 + pad_x;
  const double Y0 = y0 - pad_y, Y1 = y1 + pad_y;
  const double W = X1 - X0, H = Y1 - Y0;
  if (W <= 0.0 || H <= 0.0)
    throw std::runtime_error(
        "build_mesh: degenerate domain (locations span no area and "
        "buffer_fraction is zero)");

  const double aspect = W / H;
  int gx = std::max(2, static_cast<int>(std::lround(
                           std::sqrt(static_cast<double>(target_nodes) * aspect))));
  int gy = std::max(2, static_cast<int>(std::lround(
                           static_cast<double>(target_nodes) / gx)));

  const double dx = W / (gx - 1), dy = H / (gy - 1);
  Rng rng = Rng::derive(seed, "mesh-jitter");
  std::vector<Point2> nodes;
  nodes.reserve(static_cast<std::size_t>(gx) * gy);
  for (int iy = 0; iy < gy; ++iy) {
    for (int ix = 0; ix < gx; ++ix) {
      // Two draws per node regardless of use, so positions of other nodes
      // never depend on which jitter components apply.
      const double ux = rng.uniform(-0.25, 0.25);
      const double uy = rng.uniform(-0.25, 0.25);
      const bool bx = (ix == 0 || ix == gx - 1);
      const bool by = (iy == 0 || iy == gy - 1);
      double x = X0 + dx * ix, y = Y0 + dy * iy;
      // Corners stay exact and boundary nodes slide only along their edge:
      // the hull then always contains the extended box, hence every location.
      if (!bx) x += ux * dx;
      if (!by) y += uy * dy;
      nodes.push_back({x, y});
    }
  }

  Mesh mesh = triangulate(nodes);
  mesh.bounds = {X0, Y0, X1, Y1};
  return mesh;
}

Eigen::SparseMatrix<double> adjacency(const Mesh& mesh) {
  const int m = mesh.vertex_count();
  std::vector<Eigen::Triplet<double>> trip;
  std::map<std::pair<int, int>, bool> seen;
  for (const auto& tri : mesh.triangles) {
    for (int i = 0; i < 3; ++i) {
      int u = tri[i], v = tri[(i + 1) % 3];
      auto key = std::minmax(u, v);
      if (seen.emplace(key, true).second) {
        trip.emplace_back(key.first, key.second, 1.0);
        trip.emplace_back(key.second, key.first, 1.0);
      }
    }
  }
  Eigen::SparseMatrix<double> n(m, m);
  n.setFromTriplets(trip.begin(), trip.end());
  n.makeCompressed();
  return n;
}

MeshLocator::MeshLocator(const Mesh& mesh) : mesh_(&mesh) {
  if (mesh.triangles.empty())
    throw std::invalid_argument("MeshLocator: empty mesh");
}

LocateResult MeshLocator::locate(const Point2& p) {
  const Mesh& mesh = *mesh_;
  const int nt = mesh.triangle_count();
  int t = last_;
  int found = -1;
  std::array<double, 3> w{};
  for (int step = 0; step <= nt; ++step) {
    const auto& tri = mesh.triangles[t];
    w = barycentric(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                    mesh.vertices[tri[2]], p);
    if (contains(w)) {
      found = t;
      break;
    }
    int worst = 0;
    if (w[1] < w[worst]) worst = 1;
    if (w[2] < w[worst]) worst = 2;
    const int next = mesh.neighbors[t][worst];
    if (next < 0) break;  // walked off the hull; confirm by scan
    t = next;
  }
  if (found < 0) {
    // Brute-force fallback: walk can exit early near the hull or on
    // degenerate slivers. Scan ascending so ties pick the lowest index.
    for (int s = 0; s < nt; ++s) {
      const auto& tri = mesh.triangles[s];
      auto ws = barycentric(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                            mesh.vertices[tri[2]], p);
      if (contains(ws)) {
        found = s;
        w = ws;
        break;
      }
    }
    if (found < 0) {
      std::ostringstream msg;
      msg << "locate: point (" << p.x << ", " << p.y << ") is outside the mesh";
      throw std::runtime_error(msg.str());
    }
  } else if (w[0] <= kWeightTol || w[1] <= kWeightTol || w[2] <= kWeightTol) {
    // On an edge or vertex: deterministically resolve to the lowest
    // containing triangle index among this triangle and its neighbors.
    int best = found;
    auto bw = w;
    for (int i = 0; i < 3; ++i) {
      if (w[i] > kWeightTol) continue;
      const int nb = mesh.neighbors[found][i];
      if (nb < 0 || nb >= best) continue;
      const auto& tri = mesh.triangles[nb];
      auto ws = barycentric(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                            mesh.vertices[tri[2]], p);
      if (contains(ws)) {
        best = nb;
        bw = ws;
      }
    }
    found = best;
    w = bw;
  }
  last_ = found;
  const auto& tri = mesh.triangles[found];
  LocateResult r;
  r.triangle = found;
  r.vertices = tri;
  // Clip containment slack and renormalize: rows of the projector must be
  // nonnegative and sum to one exactly.
  double total = 0.0;
  for (int i = 0; i < 3; ++i) {
    r.weights[i] = std::max(w[i], 0.0);
    total += r.weights[i];
  }
  for (int i = 0; i < 3; ++i) r.weights[i] /= total;
  return r;
}

LocateResult locate(const Mesh& mesh, const Point2& p) {
  MeshLocator loc(mesh);
  return loc.locate(p);
}

Eigen::SparseMatrix<double> projector(const Mesh& mesh,
                                      std::span<const Point2> locations) {
  const int n = static_cast<int>(locations.size());
  MeshLocator loc(mesh);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n) * 3);
  for (int i = 0; i < n; ++i) {
    const LocateResult r = loc.locate(locations[i]);
    for (int k = 0; k < 3; ++k)
      if (r.weights[k] > 0.0) trip.emplace_back(i, r.vertices[k], r.weights[k]);
  }
  Eigen::SparseMatrix<double> a(n, mesh.vertex_count());
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  return a;
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_mesh: cannot open " + path.string());
  out << mesh.vertex_count() << " " << mesh.triangle_count() << "\n";
  char buf[80];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", v.x, v.y);
    out << buf;
  }
  for (const auto& t : mesh.triangles)
    out << t[0] << " " << t[1] << " " << t[2] << "\n";
  if (!out) throw std::runtime_error("save_mesh: write failed");
}

Mesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_mesh: cannot open " + path.string());
  int m = 0, t = 0;
  if (!(in >> m >> t) || m < 3 || t < 1)
    throw std::runtime_error("load_mesh: bad header in " + path.string());
  Mesh mesh;
  mesh.vertices.resize(m);
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  for (int i = 0; i < m; ++i) {
    if (!(in >> mesh.vertices[i].x >> mesh.vertices[i].y))
      throw std::runtime_error("load_mesh: truncated vertex list");
    if (i == 0) {
      x0 = x1 = mesh.vertices[i].x;
      y0 = y1 = mesh.vertices[i].y;
    } else {
      x0 = std::min(x0, mesh.vertices[i].x);
      x1 = std::max(x1, mesh.vertices[i].x);
      y0 = std::min(y0, mesh.vertices[i].y);
      y1 = std::max(y1, mesh.vertices[i].y);
    }
  }
  mesh.triangles.resize(t);
  for (int i = 0; i < t; ++i) {
    auto& tri = mesh.triangles[i];
    if (!(in >> tri[0] >> tri[1] >> tri[2]))
      throw std::runtime_error("load_mesh: truncated triangle list");
    for (int k = 0; k < 3; ++k)
      if (tri[k] < 0 || tri[k] >= m)
        throw std::runtime_error("load_mesh: vertex index out of range");
  }
  mesh.bounds = {x0, y0, x1, y1};
  compute_neighbors(mesh);
  return mesh;
}

}  // namespace picar
