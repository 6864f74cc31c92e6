#pragma once

#include <Eigen/Sparse>
#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace picar {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Triangulated planar mesh. Triangles are counter-clockwise index triples
// into `vertices`. `neighbors[t][i]` is the triangle sharing the edge
// opposite vertex i of triangle t, or -1 on the hull.
struct Mesh {
  std::vector<Point2> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<std::array<int, 3>> neighbors;
  // Extended bounding box the node grid was laid over: xmin, ymin, xmax, ymax.
  std::array<double, 4> bounds{0, 0, 0, 0};

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int triangle_count() const { return static_cast<int>(triangles.size()); }
};

// Builds a Delaunay mesh over a quasi-uniform jittered node grid covering
// the bounding box of `locations` expanded by `buffer_fraction` per side.
// The four box corners are kept exact and edge nodes jitter only along
// their edge, so the mesh hull always contains every location. The node
// count comes out within a few percent of `target_nodes`. Deterministic
// given (locations, target_nodes, buffer_fraction, seed).
Mesh build_mesh(std::span<const Point2> locations, int target_nodes,
                double buffer_fraction = 0.1, std::uint64_t seed = 0);

// Delaunay triangulation of explicit nodes (no grid generation).
Mesh triangulate(std::span<const Point2> nodes);

// Symmetric 0/1 first-order adjacency of mesh vertices (shared triangle edge).
Eigen::SparseMatrix<double> adjacency(const Mesh& mesh);

struct LocateResult {
  int triangle = -1;
  std::array<int, 3> vertices{-1, -1, -1};
  std::array<double, 3> weights{0, 0, 0};  // barycentric, sum to 1
};

// Point location by walking across triangle neighbors, with a brute-force
// scan fallback. Keeps the last hit as the next walk start, which makes
// streams of nearby queries cheap. Points on shared edges resolve to the
// lowest containing triangle index. Throws if the point is outside the hull.
class MeshLocator {
 public:
  explicit MeshLocator(const Mesh& mesh);
  LocateResult locate(const Point2& p);

 private:
  const Mesh* mesh_;
  int last_ = 0;
};

LocateResult locate(const Mesh& mesh, const Point2& p);

// n x m sparse interpolation matrix: row i holds the barycentric weights of
// locations[i] in its containing triangle. Rows are nonnegative, have at
// most three nonzeros and sum to one.
Eigen::SparseMatrix<double> projector(const Mesh& mesh,
                                      std::span<const Point2> locations);

// Text format: "m t" header, m "x y" lines, t "i j k" lines (0-based).
void save_mesh(const Mesh& mesh, const std::filesystem::path& path);
Mesh load_mesh(const std::filesystem::path& path);

}  // namespace picar
