#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "picar/mesh.hpp"

namespace picar {

// Centered-adjacency spectral operator (I - 11'/m) N (I - 11'/m), applied
// implicitly; only the sparse adjacency is stored.
class MoranOperator {
 public:
  explicit MoranOperator(Eigen::SparseMatrix<double> adjacency);

  int size() const { return static_cast<int>(n_.rows()); }
  const Eigen::SparseMatrix<double>& adjacency() const { return n_; }

  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& v) const;
  // Dense materialization; rows are computed independently so the result is
  // identical for any worker count.
  Eigen::MatrixXd dense(int workers = 1) const;

 private:
  Eigen::SparseMatrix<double> n_;
  Eigen::VectorXd colsum_;
};

// Row-partitioned dense assembly of the centered operator in `blocks`
// stacked pieces. Bitwise identical for every block count.
Eigen::MatrixXd parallel_moran_blocks(const Eigen::SparseMatrix<double>& n,
                                      int blocks);

struct SpectralBasis {
  Eigen::MatrixXd vectors;     // column-orthonormal, sign-normalized
  Eigen::VectorXd eigenvalues; // strictly positive, nonincreasing
  int requested = 0;           // rank asked for before the positive filter
};

enum class EigenMethod { kAuto, kLanczos, kDense };

// Leading eigenpairs of the Moran operator. Only strictly positive
// eigenvalues are kept (there are at most m-1 and typically about m/2).
// kAuto uses the dense path up to m = 2000 and Lanczos beyond. The solver
// internally asks for a few extra pairs and truncates, so trailing
// eigenvalues are as converged as leading ones. Vectors have their first
// nonvanishing entry positive; exact ties order by entry comparison.
SpectralBasis leading_eigenpairs(const MoranOperator& op, int p_max,
                                 EigenMethod method = EigenMethod::kAuto,
                                 std::uint64_t seed = 0);

enum class PrecisionKind { kIdentity, kIcar, kCar };

PrecisionKind precision_kind_from_string(const std::string& name);
std::string to_string(PrecisionKind kind);

struct PrecisionKernel {
  PrecisionKind kind = PrecisionKind::kIcar;
  double rho = 0.0;          // only meaningful for kCar
  Eigen::MatrixXd matrix;    // p x p reduced precision, symmetric PD
  Eigen::MatrixXd chol;      // lower Cholesky factor of `matrix`
};

// Reduced precision K = B' Q B for the graph kernel Q built from the mesh
// adjacency: identity (K = I exactly), intrinsic autoregression
// Q = diag(N1) - N, or proper autoregression Q = diag(N1) - rho N.
// Throws if the reduction is not positive definite.
PrecisionKernel precision_kernel(PrecisionKind kind,
                                 const Eigen::SparseMatrix<double>& n,
                                 const Eigen::Ref<const Eigen::MatrixXd>& basis,
                                 double rho = 0.5);

// Radial bases over explicit knots, evaluated at `locations`.
Eigen::MatrixXd bisquare_basis(std::span<const Point2> locations,
                               std::span<const Point2> knots, double radius);
Eigen::MatrixXd thin_plate_basis(std::span<const Point2> locations,
                                 std::span<const Point2> knots);

// Evenly spaced side x side knot grid over a bounding box.
std::vector<Point2> knot_grid(int side, const std::array<double, 4>& bounds);

// Leading eigenvectors of a Matern covariance over the given nodes
// (dense solve; intended for node sets up to a few thousand).
struct MaternParams;  // defined in randfield.hpp
SpectralBasis matern_eigenbasis(std::span<const Point2> nodes,
                                const MaternParams& params, int p);

// Text format: "m p" header, m rows of p entries, one trailing line of p
// eigenvalues.
void save_basis(const SpectralBasis& basis, const std::filesystem::path& path);
SpectralBasis load_basis(const std::filesystem::path& path);

}  // namespace picar
