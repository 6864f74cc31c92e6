#include "picar/basis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "picar/randfield.hpp"
#include "picar/rng.hpp"

namespace picar {

MoranOperator::MoranOperator(Eigen::SparseMatrix<double> adjacency)
    : n_(std::move(adjacency)) {
  if (n_.rows() != n_.cols())
    throw std::invalid_argument("MoranOperator: adjacency must be square");
  n_.makeCompressed();
  colsum_ = Eigen::VectorXd::Zero(n_.rows());
  for (int j = 0; j < n_.outerSize(); ++j)
    for (Eigen::SparseMatrix<double>::InnerIterator it(n_, j); it; ++it)
      colsum_[j] += it.value();
}

Eigen::VectorXd MoranOperator::apply(
    const Eigen::Ref<const Eigen::VectorXd>& v) const {
  const double m = static_cast<double>(size());
  Eigen::VectorXd u = v.array() - v.mean();
  Eigen::VectorXd y = n_ * u;
  y.array() -= y.sum() / m;
  return y;
}

namespace {

// One dense row of the centered operator. Every row is produced by this
// exact sequence of operations, which is what makes the blocked assembly
// invariant in the partition.
void moran_row(const Eigen::SparseMatrix<double>& n,
               const Eigen::VectorXd& colsum, int i, Eigen::VectorXd& row) {
  const int m = static_cast<int>(n.rows());
  row = colsum * (-1.0 / m);
  for (Eigen::SparseMatrix<double>::InnerIterator it(n, i); it; ++it)
    row[it.row()] += it.value();  // symmetric: column i doubles as row i
  const double rmean = row.sum() / m;
  row.array() -= rmean;
}

}  // namespace

Eigen::MatrixXd parallel_moran_blocks(const Eigen::SparseMatrix<double>& n,
                                      int blocks) {
  if (n.rows() != n.cols())
    throw std::invalid_argument("parallel_moran_blocks: matrix must be square");
  const int m = static_cast<int>(n.rows());
  if (blocks < 1) blocks = 1;
  blocks = std::min(blocks, m);

  Eigen::SparseMatrix<double> nc = n;
  nc.makeCompressed();
  Eigen::VectorXd colsum = Eigen::VectorXd::Zero(m);
  for (int j = 0; j < nc.outerSize(); ++j)
    for (Eigen::SparseMatrix<double>::InnerIterator it(nc, j); it; ++it)
      colsum[j] += it.value();

  Eigen::MatrixXd out(m, m);
  auto run_block = [&](int lo, int hi) {
    Eigen::VectorXd row(m);
    for (int i = lo; i < hi; ++i) {
      moran_row(nc, colsum, i, row);
      out.row(i) = row.transpose();
    }
  };
  if (blocks == 1) {
    run_block(0, m);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(blocks);
    const int chunk = (m + blocks - 1) / blocks;
    for (int b = 0; b < blocks; ++b) {
      const int lo = b * chunk, hi = std::min(m, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(run_block, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

Eigen::MatrixXd MoranOperator::dense(int workers) const {
  return parallel_moran_blocks(n_, workers);
}

namespace {

struct EigenPairs {
  Eigen::MatrixXd vectors;
  Eigen::VectorXd values;
};

// Thick-restart Lanczos for the largest eigenvalues of a symmetric
// operator, with full reorthogonalization on every step. The projected
// matrix is tridiagonal plus an arrowhead row coupling the restarted Ritz
// prefix to the continuation vector.
EigenPairs lanczos_largest(const MoranOperator& op, int nev,
                           std::uint64_t seed) {
  const int m = op.size();
  nev = std::min(nev, m - 1);
  const int ncv = std::min(m, std::max(2 * nev, nev + 16));
  const int max_restarts = 600;
  const double rel_tol = 1e-11;

  Eigen::MatrixXd v_basis(m, ncv);
  Eigen::MatrixXd t_proj = Eigen::MatrixXd::Zero(ncv, ncv);
  Eigen::VectorXd arrow = Eigen::VectorXd::Zero(ncv);
  Eigen::VectorXd resvec(m), w(m);

  Rng rng = Rng::derive(seed, "lanczos-start");
  Eigen::VectorXd v(m);
  for (int i = 0; i < m; ++i) v[i] = rng.normal();
  v.normalize();

  int locked = 0;
  double beta_last = 0.0;

  for (int restart = 0; restart < max_restarts; ++restart) {
    v_basis.col(locked) = v;
    double beta_prev = 0.0;
    for (int j = locked; j < ncv; ++j) {
      w = op.apply(v_basis.col(j));
      if (j == locked && locked > 0)
        w.noalias() -= v_basis.leftCols(locked) * arrow.head(locked);
      if (j > locked) w.noalias() -= beta_prev * v_basis.col(j - 1);
      const double alpha = v_basis.col(j).dot(w);
      w.noalias() -= alpha * v_basis.col(j);
      for (int pass = 0; pass < 2; ++pass)
        w.noalias() -= v_basis.leftCols(j + 1) *
                       (v_basis.leftCols(j + 1).transpose() * w);
      double beta = w.norm();
      t_proj(j, j) = alpha;
      if (beta < 1e-13) {
        // Invariant subspace hit: continue in a fresh random direction.
        for (int i = 0; i < m; ++i) w[i] = rng.normal();
        for (int pass = 0; pass < 2; ++pass)
          w.noalias() -= v_basis.leftCols(j + 1) *
                         (v_basis.leftCols(j + 1).transpose() * w);
        beta = w.norm();
        if (beta < 1e-300) beta = 1.0;
        w /= beta;
        beta = 0.0;  // no actual coupling
        if (j < ncv - 1) {
          v_basis.col(j + 1) = w;
          t_proj(j, j + 1) = t_proj(j + 1, j) = 0.0;
        } else {
          resvec = w;
          beta_last = 0.0;
        }
        beta_prev = 0.0;
        continue;
      }
      if (j < ncv - 1) {
        t_proj(j, j + 1) = t_proj(j + 1, j) = beta;
        v_basis.col(j + 1) = w / beta;
      } else {
        resvec = w / beta;
        beta_last = beta;
      }
      beta_prev = beta;
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t_proj);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("leading_eigenpairs: projected solve failed");
    // Ascending from Eigen; view descending.
    const auto& theta = es.eigenvalues();
    const auto& s = es.eigenvectors();
    const double scale = std::max(std::abs(theta[ncv - 1]), std::abs(theta[0]));

    bool converged = true;
    for (int r = 0; r < nev; ++r) {
      const int idx = ncv - 1 - r;
      const double resid = std::abs(beta_last * s(ncv - 1, idx));
      if (resid > rel_tol * std::max(scale, 1e-300)) {
        converged = false;
        break;
      }
    }

    if (converged || restart == max_restarts - 1) {
      if (!converged)
        throw std::runtime_error(
            "leading_eigenpairs: Lanczos did not converge within restart "
            "budget");
      EigenPairs out;
      out.values.resize(nev);
      out.vectors.resize(m, nev);
      for (int r = 0; r < nev; ++r) {
        const int idx = ncv - 1 - r;
        out.values[r] = theta[idx];
        out.vectors.col(r) = v_basis * s.col(idx);
      }
      return out;
    }

    // Thick restart: keep a Ritz prefix beyond nev, continue from the
    // residual direction.
    const int keep = std::min(ncv - 2, nev + std::max(4, (ncv - nev) / 2));
    Eigen::MatrixXd kept(m, keep);
    Eigen::VectorXd kept_theta(keep), kept_arrow(keep);
    for (int r = 0; r < keep; ++r) {
      const int idx = ncv - 1 - r;
      kept.col(r) = v_basis * s.col(idx);
      kept_theta[r] = theta[idx];
      kept_arrow[r] = beta_last * s(ncv - 1, idx);
    }
    v_basis.leftCols(keep) = kept;
    t_proj.setZero();
    for (int r = 0; r < keep; ++r) t_proj(r, r) = kept_theta[r];
    for (int r = 0; r < keep; ++r)
      t_proj(r, keep) = t_proj(keep, r) = kept_arrow[r];
    arrow.head(keep) = kept_arrow;
    v = resvec;
    locked = keep;
  }
  throw std::runtime_error("leading_eigenpairs: unreachable");
}

EigenPairs dense_largest(const MoranOperator& op, int nev) {
  const int m = op.size();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(op.dense());
  if (es.info() != Eigen::Success)
    throw std::runtime_error("leading_eigenpairs: dense solve failed");
  nev = std::min(nev, m);
  EigenPairs out;
  out.values.resize(nev);
  out.vectors.resize(m, nev);
  for (int r = 0; r < nev; ++r) {
    out.values[r] = es.eigenvalues()[m - 1 - r];
    out.vectors.col(r) = es.eigenvectors().col(m - 1 - r);
  }
  return out;
}

void normalize_signs(Eigen::MatrixXd& vectors) {
  for (int c = 0; c < vectors.cols(); ++c) {
    for (int i = 0; i < vectors.rows(); ++i) {
      if (std::abs(vectors(i, c)) > 1e-10) {
        if (vectors(i, c) < 0.0) vectors.col(c) = -vectors.col(c);
        break;
      }
    }
  }
}

// Exact-tie ordering: descending eigenvalue, ties broken byantisymmetric
// entrywise comparison so repeated runs agree.
void order_ties(Eigen::MatrixXd& vectors, Eigen::VectorXd& values) {
  const double tol = 1e-12 * std::max(1.0, std::abs(values.size() ? values[0] : 0.0));
  for (int i = 0; i + 1 < values.size(); ++i) {
    if (std::abs(values[i] - values[i + 1]) > tol) continue;
    const auto a = vectors.col(i), b = vectors.col(i + 1);
    for (int r = 0; r < vectors.rows(); ++r) {
      if (a[r] == b[r]) continue;
      if (a[r] > b[r]) break;
      vectors.col(i).swap(vectors.col(i + 1));
      std::swap(values[i], values[i + 1]);
      break;
    }
  }
}

SpectralBasis finalize_positive(EigenPairs pairs, int p_max) {
  const double lam_max = pairs.values.size() ? pairs.values[0] : 0.0;
  if (!(lam_max > 0.0))
    throw std::runtime_error(
        "leading_eigenpairs: operator has no positive spectrum");
  const double floor = 1e-10 * lam_max;
  int count = 0;
  while (count < pairs.values.size() && pairs.values[count] > floor) ++count;
  count = std::min(count, p_max);
  SpectralBasis basis;
  basis.requested = p_max;
  basis.eigenvalues = pairs.values.head(count);
  basis.vectors = pairs.vectors.leftCols(count);
  normalize_signs(basis.vectors);
  order_ties(basis.vectors, basis.eigenvalues);
  return basis;
}

}  // namespace

SpectralBasis leading_eigenpairs(const MoranOperator& op, int p_max,
                                 EigenMethod method, std::uint64_t seed) {
  const int m = op.size();
  if (p_max < 1)
    throw std::invalid_argument("leading_eigenpairs: p_max must be >= 1");
  if (p_max >= m)
    throw std::invalid_argument(
        "leading_eigenpairs: p_max must be below the node count");
  // Extra pairs sharpen the trailing requested ones and absorb the
  // positive-spectrum filter.
  const int nev = std::min(m - 1, p_max + 10);
  if (method == EigenMethod::kAuto)
    method = (m <= 2000) ? EigenMethod::kDense : EigenMethod::kLanczos;
  if (method == EigenMethod::kLanczos && nev + 16 >= m)
    method = EigenMethod::kDense;  // subspace would not fit; tiny problem
  EigenPairs pairs = (method == EigenMethod::kDense)
                         ? dense_largest(op, nev)
                         : lanczos_largest(op, nev, seed);
  return finalize_positive(std::move(pairs), p_max);
}

PrecisionKind precision_kind_from_string(const std::string& name) {
  if (name == "ind" || name == "identity") return PrecisionKind::kIdentity;
  if (name == "icar") return PrecisionKind::kIcar;
  if (name == "car") return PrecisionKind::kCar;
  throw std::invalid_argument("unknown precision kind: " + name +
                              " (expected ind, icar or car)");
}

std::string to_string(PrecisionKind kind) {
  switch (kind) {
    case PrecisionKind::kIdentity: return "ind";
    case PrecisionKind::kIcar: return "icar";
    case PrecisionKind::kCar: return "car";
  }
  return "?";
}

PrecisionKernel precision_kernel(PrecisionKind kind,
                                 const Eigen::SparseMatrix<double>& n,
                                 const Eigen::Ref<const Eigen::MatrixXd>& basis,
                                 double rho) {
  const int p = static_cast<int>(basis.cols());
  PrecisionKernel kernel;
  kernel.kind = kind;
  kernel.rho = (kind == PrecisionKind::kCar) ? rho : 0.0;
  if (kind == PrecisionKind::kIdentity) {
    // The basis is column-orthonormal, so the reduction of the identity is
    // the identity exactly; build it as such rather than forming B'B.
    kernel.matrix = Eigen::MatrixXd::Identity(p, p);
    kernel.chol = kernel.matrix;
    return kernel;
  }
  if (n.rows() != basis.rows())
    throw std::invalid_argument("precision_kernel: adjacency/basis mismatch");
  if (kind == PrecisionKind::kCar && !(rho > -1.0 && rho < 1.0))
    throw std::invalid_argument("precision_kernel: rho must lie in (-1, 1)");
  Eigen::VectorXd degree = n * Eigen::VectorXd::Ones(n.rows());
  const double r = (kind == PrecisionKind::kIcar) ? 1.0 : rho;
  Eigen::MatrixXd qb = degree.asDiagonal() * basis;
  qb.noalias() -= r * (n * basis);
  Eigen::MatrixXd k = basis.transpose() * qb;
  k = 0.5 * (k + k.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "precision_kernel: reduced kernel is not positive definite");
  kernel.matrix = std::move(k);
  kernel.chol = llt.matrixL();
  return kernel;
}

Eigen::MatrixXd bisquare_basis(std::span<const Point2> locations,
                               std::span<const Point2> knots, double radius) {
  if (!(radius > 0.0))
    throw std::invalid_argument("bisquare_basis: radius must be positive");
  Eigen::MatrixXd b(locations.size(), knots.size());
  for (std::size_t i = 0; i < locations.size(); ++i) {
    for (std::size_t k = 0; k < knots.size(); ++k) {
      const double dx = locations[i].x - knots[k].x;
      const double dy = locations[i].y - knots[k].y;
      const double d2 = (dx * dx + dy * dy) / (radius * radius);
      b(i, k) = d2 < 1.0 ? (1.0 - d2) * (1.0 - d2) : 0.0;
    }
  }
  return b;
}

Eigen::MatrixXd thin_plate_basis(std::span<const Point2> locations,
                                 std::span<const Point2> knots) {
  Eigen::MatrixXd b(locations.size(), knots.size());
  for (std::size_t i = 0; i < locations.size(); ++i) {
    for (std::size_t k = 0; k < knots.size(); ++k) {
      const double dx = locations[i].x - knots[k].x;
      const double dy = locations[i].y - knots[k].y;
      const double d2 = dx * dx + dy * dy;
      b(i, k) = d2 > 0.0 ? 0.5 * d2 * std::log(d2) : 0.0;  // d^2 log d
    }
  }
  return b;
}

std::vector<Point2> knot_grid(int side, const std::array<double, 4>& bounds) {
  if (side < 2) throw std::invalid_argument("knot_grid: side must be >= 2");
  std::vector<Point2> knots;
  knots.reserve(static_cast<std::size_t>(side) * side);
  const double w = bounds[2] - bounds[0], h = bounds[3] - bounds[1];
  for (int iy = 0; iy < side; ++iy)
    for (int ix = 0; ix < side; ++ix)
      knots.push_back({bounds[0] + w * ix / (side - 1),
                       bounds[1] + h * iy / (side - 1)});
  return knots;
}

SpectralBasis matern_eigenbasis(std::span<const Point2> nodes,
                                const MaternParams& params, int p) {
  const int m = static_cast<int>(nodes.size());
  if (p < 1 || p >= m)
    throw std::invalid_argument("matern_eigenbasis: rank out of range");
  Eigen::MatrixXd c = matern_covariance(nodes, params);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("matern_eigenbasis: eigensolve failed");
  EigenPairs pairs;
  pairs.values.resize(p);
  pairs.vectors.resize(m, p);
  for (int r = 0; r < p; ++r) {
    pairs.values[r] = es.eigenvalues()[m - 1 - r];
    pairs.vectors.col(r) = es.eigenvectors().col(m - 1 - r);
  }
  return finalize_positive(std::move(pairs), p);
}

void save_basis(const SpectralBasis& basis, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_basis: cannot open " + path.string());
  const int m = static_cast<int>(basis.vectors.rows());
  const int p = static_cast<int>(basis.vectors.cols());
  out << m << " " << p << "\n";
  char buf[40];
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < p; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", basis.vectors(i, j));
      out << buf << (j + 1 == p ? "\n" : " ");
    }
  }
  for (int j = 0; j < p; ++j) {
    std::snprintf(buf, sizeof buf, "%.17g", basis.eigenvalues[j]);
    out << buf << (j + 1 == p ? "\n" : " ");
  }
  if (!out) throw std::runtime_error("save_basis: write failed");
}

SpectralBasis load_basis(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_basis: cannot open " + path.string());
  int m = 0, p = 0;
  if (!(in >> m >> p) || m < 1 || p < 1)
    throw std::runtime_error("load_basis: bad header in " + path.string());
  SpectralBasis basis;
  basis.requested = p;
  basis.vectors.resize(m, p);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < p; ++j)
      if (!(in >> basis.vectors(i, j)))
        throw std::runtime_error("load_basis: truncated entries");
  basis.eigenvalues.resize(p);
  for (int j = 0; j < p; ++j)
    if (!(in >> basis.eigenvalues[j]))
      throw std::runtime_error("load_basis: missing eigenvalue line");
  return basis;
}

}  // namespace picar
