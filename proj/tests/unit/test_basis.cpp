#include "picar/basis.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "picar/mesh.hpp"
#include "picar/randfield.hpp"
#include "picar/rng.hpp"

using picar::build_mesh;
using picar::leading_eigenpairs;
using picar::Mesh;
using picar::MoranOperator;
using picar::Point2;
using picar::PrecisionKind;
using picar::Rng;
using picar::SpectralBasis;

namespace {

std::vector<Point2> random_points(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Point2> pts(n);
  for (auto& p : pts) {
    p.x = rng.uniform();
    p.y = rng.uniform();
  }
  return pts;
}

Eigen::SparseMatrix<double> mesh_adjacency(int points, int nodes,
                                           std::uint64_t seed) {
  const auto pts = random_points(points, seed);
  return picar::adjacency(build_mesh(pts, nodes, 0.1, seed));
}

// Random symmetric 0/1 matrix with zero diagonal.
Eigen::SparseMatrix<double> random_graph(int m, double density,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      if (rng.uniform() < density) {
        trip.emplace_back(i, j, 1.0);
        trip.emplace_back(j, i, 1.0);
      }
  Eigen::SparseMatrix<double> n(m, m);
  n.setFromTriplets(trip.begin(), trip.end());
  return n;
}

}  // namespace

TEST_CASE("centered operator matches dense algebra on a three-node path") {
  Eigen::SparseMatrix<double> n(3, 3);
  n.insert(0, 1) = 1.0;
  n.insert(1, 0) = 1.0;
  n.insert(1, 2) = 1.0;
  n.insert(2, 1) = 1.0;
  const MoranOperator op(n);
  const Eigen::MatrixXd want = oracle::dense_moran(n);
  CHECK((op.dense() - want).cwiseAbs().maxCoeff() < 1e-14);
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(trial + 1);
    Eigen::VectorXd v(3);
    for (int i = 0; i < 3; ++i) v[i] = rng.normal();
    CHECK((op.apply(v) - want * v).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("centering annihilates the constant vector") {
  const auto n = random_graph(50, 0.1, 5);
  const MoranOperator op(n);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(50);
  CHECK(op.apply(ones).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("implicit application agrees with the dense operator") {
  const auto n = random_graph(200, 0.05, 7);
  const MoranOperator op(n);
  const Eigen::MatrixXd dense = oracle::dense_moran(n);
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd v(200);
    for (int i = 0; i < 200; ++i) v[i] = rng.normal();
    CHECK((op.apply(v) - dense * v).cwiseAbs().maxCoeff() < 1e-12);
    // Symmetry as an operator.
    Eigen::VectorXd u(200);
    for (int i = 0; i < 200; ++i) u[i] = rng.normal();
    CHECK(u.dot(op.apply(v)) ==
          doctest::Approx(v.dot(op.apply(u))).epsilon(1e-10));
  }
}

TEST_CASE("row-blocked assembly is invariant in the block count") {
  const auto n = mesh_adjacency(120, 200, 13);
  const Eigen::MatrixXd one = picar::parallel_moran_blocks(n, 1);
  CHECK((one - oracle::dense_moran(n)).cwiseAbs().maxCoeff() < 1e-12);
  for (int blocks : {2, 4, 7, 64}) {
    const Eigen::MatrixXd many = picar::parallel_moran_blocks(n, blocks);
    // Identical row recipe regardless of the partition, so bitwise equal.
    CHECK((many - one).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("restarted solver matches the dense eigensolver") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto n = mesh_adjacency(200, 300, seed);
    const MoranOperator op(n);
    const int p = 40;
    const SpectralBasis lan =
        leading_eigenpairs(op, p, picar::EigenMethod::kLanczos, seed);
    const SpectralBasis den =
        leading_eigenpairs(op, p, picar::EigenMethod::kDense, seed);
    REQUIRE(lan.eigenvalues.size() == den.eigenvalues.size());
    for (int j = 0; j < lan.eigenvalues.size(); ++j)
      CHECK(std::abs(lan.eigenvalues[j] - den.eigenvalues[j]) <=
            1e-8 * std::abs(den.eigenvalues[j]));
    CHECK(oracle::max_principal_angle(lan.vectors, den.vectors) < 1e-6);
  }
}

TEST_CASE("spectral basis invariants") {
  const auto n = mesh_adjacency(250, 350, 21);
  const MoranOperator op(n);
  const SpectralBasis basis =
      leading_eigenpairs(op, 50, picar::EigenMethod::kLanczos, 3);
  const int p = static_cast<int>(basis.eigenvalues.size());
  REQUIRE(p > 0);

  SUBCASE("columns are orthonormal and orthogonal to constants") {
    const Eigen::MatrixXd gram =
        basis.vectors.transpose() * basis.vectors;
    CHECK((gram - Eigen::MatrixXd::Identity(p, p)).cwiseAbs().maxCoeff() <
          1e-8);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(basis.vectors.rows());
    for (int j = 0; j < p; ++j)
      CHECK(std::abs(basis.vectors.col(j).dot(ones)) < 1e-8);
  }

  SUBCASE("eigenvalues are positive and nonincreasing, residuals small") {
    for (int j = 0; j < p; ++j) {
      CHECK(basis.eigenvalues[j] > 0.0);
      if (j > 0) CHECK(basis.eigenvalues[j] <= basis.eigenvalues[j - 1]);
      const Eigen::VectorXd resid =
          op.apply(basis.vectors.col(j)) -
          basis.eigenvalues[j] * basis.vectors.col(j);
      CHECK(resid.norm() <= 1e-6);
    }
  }

  SUBCASE("sign convention and determinism") {
    for (int j = 0; j < p; ++j) {
      for (int i = 0; i < basis.vectors.rows(); ++i) {
        if (basis.vectors(i, j) != 0.0) {
          CHECK(basis.vectors(i, j) > 0.0);
          break;
        }
      }
    }
    const SpectralBasis again =
        leading_eigenpairs(op, 50, picar::EigenMethod::kLanczos, 3);
    CHECK((again.vectors - basis.vectors).cwiseAbs().maxCoeff() == 0.0);
    CHECK((again.eigenvalues - basis.eigenvalues).cwiseAbs().maxCoeff() ==
          0.0);
  }

  SUBCASE("rank bounds are enforced") {
    CHECK_THROWS_AS(leading_eigenpairs(op, 0), std::invalid_argument);
    CHECK_THROWS_AS(leading_eigenpairs(op, op.size()), std::invalid_argument);
  }
}

TEST_CASE("precision kernels reduce correctly") {
  const auto n = mesh_adjacency(150, 200, 31);
  const MoranOperator op(n);
  const SpectralBasis basis = leading_eigenpairs(op, 20);
  const Eigen::MatrixXd m = basis.vectors;
  const int p = static_cast<int>(m.cols());
  const int mm = static_cast<int>(n.rows());

  const Eigen::VectorXd degree = n * Eigen::VectorXd::Ones(mm);
  const Eigen::MatrixXd q_icar =
      Eigen::MatrixXd(degree.asDiagonal()) - Eigen::MatrixXd(n);

  SUBCASE("icar graph laplacian rows sum to zero") {
    CHECK((q_icar * Eigen::VectorXd::Ones(mm)).cwiseAbs().maxCoeff() <
          1e-12);
    const auto kernel =
        picar::precision_kernel(PrecisionKind::kIcar, n, m);
    const Eigen::MatrixXd want = m.transpose() * q_icar * m;
    CHECK((kernel.matrix - want).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("identity kind reduces to the identity") {
    const auto kernel =
        picar::precision_kernel(PrecisionKind::kIdentity, n, m);
    CHECK((kernel.matrix - Eigen::MatrixXd::Identity(p, p))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }

  SUBCASE("car interpolates between independence and the laplacian") {
    const double rho = 0.5;
    const auto kernel =
        picar::precision_kernel(PrecisionKind::kCar, n, m, rho);
    const Eigen::MatrixXd q_car =
        Eigen::MatrixXd(degree.asDiagonal()) - rho * Eigen::MatrixXd(n);
    // Row sums of the full-rank kernel: (1 - rho) * degree.
    const Eigen::VectorXd rowsum = q_car * Eigen::VectorXd::Ones(mm);
    CHECK((rowsum - (1.0 - rho) * degree).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::MatrixXd want = m.transpose() * q_car * m;
    CHECK((kernel.matrix - want).cwiseAbs().maxCoeff() < 1e-10);

    const auto near_one =
        picar::precision_kernel(PrecisionKind::kCar, n, m, 1.0 - 1e-6);
    const auto icar = picar::precision_kernel(PrecisionKind::kIcar, n, m);
    CHECK((near_one.matrix - icar.matrix).cwiseAbs().maxCoeff() <= 1e-4);
  }

  SUBCASE("every kind yields a symmetric positive definite kernel") {
    for (const auto kind : {PrecisionKind::kIdentity, PrecisionKind::kIcar,
                            PrecisionKind::kCar}) {
      const auto kernel = picar::precision_kernel(kind, n, m, 0.5);
      CHECK((kernel.matrix - kernel.matrix.transpose()).cwiseAbs().maxCoeff() <
            1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kernel.matrix);
      CHECK(es.eigenvalues().minCoeff() > 0.0);
      const Eigen::MatrixXd recon =
          kernel.chol * kernel.chol.transpose();
      CHECK((recon - kernel.matrix).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  SUBCASE("kind names round-trip and reject junk") {
    CHECK(picar::precision_kind_from_string("ind") == PrecisionKind::kIdentity);
    CHECK(picar::precision_kind_from_string("identity") ==
          PrecisionKind::kIdentity);
    CHECK(picar::precision_kind_from_string("icar") == PrecisionKind::kIcar);
    CHECK(picar::precision_kind_from_string("car") == PrecisionKind::kCar);
    CHECK(picar::to_string(PrecisionKind::kIdentity) == "ind");
    CHECK(picar::to_string(PrecisionKind::kIcar) == "icar");
    CHECK(picar::to_string(PrecisionKind::kCar) == "car");
    CHECK_THROWS_AS(picar::precision_kind_from_string("banana"),
                    std::invalid_argument);
    CHECK_THROWS_AS(picar::precision_kernel(PrecisionKind::kCar, n, m, 1.5),
                    std::invalid_argument);
  }
}

TEST_CASE("radial and spline bases follow their closed forms") {
  const std::array<double, 4> bounds = {0.0, 0.0, 1.0, 1.0};
  const auto knots = picar::knot_grid(8, bounds);
  REQUIRE(knots.size() == 64);
  CHECK(knots.front().x == 0.0);
  CHECK(knots.back().x == 1.0);
  CHECK(knots.back().y == 1.0);

  const double omega = 0.3;
  const std::vector<Point2> locs = {
      knots[0],                // on a knot
      {omega, 0.0},            // exactly at the radius of knot 0
      {0.5 * omega, 0.0},      // inside
      {0.9, 0.9}};
  const Eigen::MatrixXd bs = picar::bisquare_basis(locs, knots, omega);
  CHECK(bs(0, 0) == 1.0);
  CHECK(bs(1, 0) == 0.0);
  const double half = (1.0 - 0.25) * (1.0 - 0.25);
  CHECK(bs(2, 0) == doctest::Approx(half).epsilon(1e-12));
  CHECK(bs.minCoeff() >= 0.0);
  CHECK(bs.maxCoeff() <= 1.0);
  // Support is exactly the open disk of radius omega.
  for (int i = 0; i < bs.rows(); ++i)
    for (int k = 0; k < bs.cols(); ++k) {
      const double dx = locs[i].x - knots[k].x;
      const double dy = locs[i].y - knots[k].y;
      const bool inside = dx * dx + dy * dy < omega * omega;
      CHECK((bs(i, k) > 0.0) == inside);
    }

  const std::vector<Point2> tlocs = {{0.0, 0.0}, {1.0, 0.0}, {0.5, 0.0}};
  const std::vector<Point2> tknots = {{0.0, 0.0}};
  const Eigen::MatrixXd tp = picar::thin_plate_basis(tlocs, tknots);
  CHECK(tp(0, 0) == 0.0);                      // r = 0 limit
  CHECK(tp(1, 0) == doctest::Approx(0.0));     // r = 1, log 1 = 0
  CHECK(tp(2, 0) ==
        doctest::Approx(0.25 * std::log(0.5)).epsilon(1e-12));  // r^2 log r
}

TEST_CASE("matern eigenvector basis is orthonormal") {
  const auto nodes = random_points(120, 4040);
  picar::MaternParams params;
  params.sigma2 = 1.0;
  params.phi = 0.2;
  params.nu = 2.5;
  const SpectralBasis basis = picar::matern_eigenbasis(nodes, params, 30);
  REQUIRE(basis.eigenvalues.size() == 30);
  const Eigen::MatrixXd gram = basis.vectors.transpose() * basis.vectors;
  CHECK((gram - Eigen::MatrixXd::Identity(30, 30)).cwiseAbs().maxCoeff() <
        1e-10);
  for (int j = 1; j < 30; ++j)
    CHECK(basis.eigenvalues[j] <= basis.eigenvalues[j - 1]);
  CHECK(basis.eigenvalues.minCoeff() > 0.0);
}
