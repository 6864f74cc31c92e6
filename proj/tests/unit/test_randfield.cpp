#include "picar/randfield.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "picar/rng.hpp"

using picar::Dataset;
using picar::Family;
using picar::GenConfig;
using picar::matern;
using picar::MaternParams;
using picar::Point2;
using picar::Rng;

namespace {

// Matern covariance through the Bessel form, the definition the closed
// forms specialize.
double matern_bessel(double h, double sigma2, double phi, double nu) {
  if (h == 0.0) return sigma2;
  const double s = std::sqrt(2.0 * nu) * h / phi;
  return sigma2 * std::pow(2.0, 1.0 - nu) / std::tgamma(nu) *
         std::pow(s, nu) * std::cyl_bessel_k(nu, s);
}

GenConfig small_config(std::uint64_t seed) {
  GenConfig config;
  config.n = 120;
  config.n_cv = 40;
  config.beta = Eigen::Vector2d(1.0, 1.0);
  config.seed = seed;
  return config;
}

}  // namespace

TEST_CASE("matern closed forms") {
  MaternParams p;
  p.sigma2 = 2.3;
  p.phi = 0.37;

  SUBCASE("zero distance returns the sill for every smoothness") {
    for (double nu : {0.5, 1.5, 2.5}) {
      p.nu = nu;
      CHECK(matern(0.0, p) == doctest::Approx(2.3).epsilon(1e-14));
    }
    p.nu = std::numeric_limits<double>::infinity();
    CHECK(matern(0.0, p) == doctest::Approx(2.3).epsilon(1e-14));
  }

  SUBCASE("exponential special case") {
    p.sigma2 = 1.0;
    p.phi = 0.2;
    p.nu = 0.5;
    CHECK(matern(0.2, p) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  }

  SUBCASE("closed forms match the Bessel form") {
    Rng rng(17);
    for (double nu : {0.5, 1.5, 2.5}) {
      p.nu = nu;
      for (int i = 0; i < 20; ++i) {
        const double h = rng.uniform(1e-3, 2.0);
        const double want = matern_bessel(h, p.sigma2, p.phi, nu);
        CHECK(matern(h, p) == doctest::Approx(want).epsilon(1e-8));
      }
    }
  }

  SUBCASE("squared exponential limit") {
    p.nu = std::numeric_limits<double>::infinity();
    for (double h : {0.1, 0.5, 1.0})
      CHECK(matern(h, p) ==
            doctest::Approx(p.sigma2 *
                            std::exp(-h * h / (2.0 * p.phi * p.phi)))
                .epsilon(1e-12));
  }

  SUBCASE("unsupported smoothness is rejected with the valid list") {
    p.nu = 1.7;
    CHECK_THROWS_WITH_AS(matern(0.3, p), doctest::Contains("0.5"),
                         std::invalid_argument);
  }
}

TEST_CASE("gaussian process sampler") {
  MaternParams p;
  p.sigma2 = 1.0;
  p.phi = 0.2;
  p.nu = 2.5;
  const std::vector<Point2> pts = {
      {0.1, 0.2}, {0.3, 0.9}, {0.55, 0.4}, {0.8, 0.15}, {0.95, 0.85}};

  SUBCASE("identical seeds give identical fields") {
    Rng a(5), b(5);
    const Eigen::VectorXd wa = picar::sample_gp(pts, p, a);
    const Eigen::VectorXd wb = picar::sample_gp(pts, p, b);
    CHECK((wa - wb).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("sill scaling is Cholesky-linear") {
    Rng a(5), b(5);
    const Eigen::VectorXd w1 = picar::sample_gp(pts, p, a);
    MaternParams doubled = p;
    doubled.sigma2 = 2.0;
    const Eigen::VectorXd w2 = picar::sample_gp(pts, doubled, b);
    CHECK((w2 - std::sqrt(2.0) * w1).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("empirical covariance reproduces the kernel") {
    const int reps = 2000;
    const int m = static_cast<int>(pts.size());
    Eigen::MatrixXd draws(reps, m);
    for (int r = 0; r < reps; ++r) {
      Rng rng = Rng::derive(777, "gp-rep", r);
      draws.row(r) = picar::sample_gp(pts, p, rng).transpose();
    }
    const Eigen::RowVectorXd mean = draws.colwise().mean();
    const Eigen::MatrixXd centered = draws.rowwise() - mean;
    const Eigen::MatrixXd emp =
        centered.transpose() * centered / (reps - 1);
    const Eigen::MatrixXd want = picar::matern_covariance(pts, p);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        const double se = std::sqrt(
            (want(i, i) * want(j, j) + want(i, j) * want(i, j)) / reps);
        CHECK(std::abs(emp(i, j) - want(i, j)) < 3.0 * se);
      }
  }

  SUBCASE("semivariance at the range distance is honest") {
    // Line of points exactly phi apart; adjacent increments estimate the
    // semivariogram at h = phi.
    std::vector<Point2> line(12);
    for (int i = 0; i < 12; ++i) line[i] = {0.2 * i, 0.0};
    double acc = 0.0;
    int count = 0;
    for (int r = 0; r < 50; ++r) {
      Rng rng = Rng::derive(4321, "vario", r);
      const Eigen::VectorXd w = picar::sample_gp(line, p, rng);
      for (int i = 0; i + 1 < 12; ++i) {
        const double d = w[i + 1] - w[i];
        acc += 0.5 * d * d;
        ++count;
      }
    }
    const double got = acc / count;
    const double want = p.sigma2 - matern(0.2, p);
    CHECK(got == doctest::Approx(want).epsilon(0.20));
  }
}

TEST_CASE("generators are bit-reproducible and well-typed") {
  const GenConfig config = small_config(2468);

  SUBCASE("binary") {
    const Dataset a = picar::gen_binary(config);
    const Dataset b = picar::gen_binary(config);
    CHECK(a.size() == 120);
    CHECK(a.cv_size() == 40);
    CHECK((a.z - b.z).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.x - b.x).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.latent - b.latent).cwiseAbs().maxCoeff() == 0.0);
    for (int i = 0; i < a.size(); ++i)
      CHECK((a.z[i] == 0.0 || a.z[i] == 1.0));
    for (const auto& q : a.fit_locations) {
      CHECK(q.x >= 0.0);
      CHECK(q.x < 1.0);
      CHECK(q.y >= 0.0);
      CHECK(q.y < 1.0);
    }
  }

  SUBCASE("count responses are nonnegative integers") {
    const Dataset d = picar::gen_count(config);
    for (int i = 0; i < d.size(); ++i) {
      CHECK(d.z[i] >= 0.0);
      CHECK(d.z[i] == std::floor(d.z[i]));
    }
  }

  SUBCASE("ordinal responses live in 1..J") {
    const std::vector<double> theta = {0.0, 1.0, 2.0};
    const Dataset d = picar::gen_ordinal(config, theta);
    CHECK(d.ordinal_categories == 4);
    CHECK(d.true_theta == theta);
    for (int i = 0; i < d.size(); ++i) {
      CHECK(d.z[i] >= 1.0);
      CHECK(d.z[i] <= 4.0);
      CHECK(d.z[i] == std::floor(d.z[i]));
    }
  }

  SUBCASE("a different seed moves the data") {
    GenConfig other = config;
    other.seed = config.seed + 1;
    const Dataset a = picar::gen_binary(config);
    const Dataset b = picar::gen_binary(other);
    CHECK((a.z - b.z).cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("flat predictor gives even binary odds") {
  GenConfig config = small_config(99);
  config.n = 4000;
  config.n_cv = 10;
  config.beta = Eigen::Vector2d(0.0, 0.0);
  config.matern.sigma2 = 1e-12;  // no spatial signal
  const Dataset d = picar::gen_binary(config);
  const double phat = d.z.mean();
  CHECK(std::abs(phat - 0.5) < 3.0 * 0.5 / std::sqrt(4000.0));
}

TEST_CASE("count responses match their recorded intensity") {
  GenConfig config = small_config(31415);
  config.n = 3000;
  config.n_cv = 10;
  const Dataset d = picar::gen_count(config);
  // Standardized residuals against the provenance predictor.
  const Eigen::VectorXd eta = d.x * d.true_beta + d.latent;
  double acc = 0.0;
  for (int i = 0; i < d.size(); ++i) {
    const double lambda = std::exp(eta[i]);
    acc += (d.z[i] - lambda) / std::sqrt(lambda);
  }
  CHECK(std::abs(acc / d.size()) < 4.0 / std::sqrt(3000.0));
}

TEST_CASE("ordinal category probabilities") {
  const std::vector<double> theta = {0.0, 1.0, 2.0};

  SUBCASE("known values at eta zero") {
    const auto probs = picar::ordinal_category_probs(theta, 0.0);
    REQUIRE(probs.size() == 4);
    const double g1 = 0.5;
    const double g2 = 1.0 / (1.0 + std::exp(-1.0));
    const double g3 = 1.0 / (1.0 + std::exp(-2.0));
    CHECK(probs[0] == doctest::Approx(g1).epsilon(1e-12));
    CHECK(probs[1] == doctest::Approx(g2 - g1).epsilon(1e-12));
    CHECK(probs[2] == doctest::Approx(g3 - g2).epsilon(1e-12));
    CHECK(probs[3] == doctest::Approx(1.0 - g3).epsilon(1e-12));
    // Rounded values for the record: 0.5, 0.231, 0.150, 0.119.
    CHECK(probs[1] == doctest::Approx(0.231).epsilon(5e-3));
    CHECK(probs[2] == doctest::Approx(0.150).epsilon(5e-3));
    CHECK(probs[3] == doctest::Approx(0.119).epsilon(5e-3));
  }

  SUBCASE("probabilities sum to one for random predictors") {
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
      const auto probs =
          picar::ordinal_category_probs(theta, rng.uniform(-8.0, 8.0));
      double sum = 0.0;
      for (double q : probs) {
        CHECK(q >= 0.0);
        sum += q;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("the lowest category absorbs a diverging predictor") {
    const auto probs = picar::ordinal_category_probs(theta, -50.0);
    CHECK(probs[0] == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("non-monotone cutpoints are rejected") {
    const std::vector<double> bad = {0.0, 2.0, 1.0};
    CHECK_THROWS(picar::gen_ordinal(small_config(1), bad));
    const std::vector<double> anchored_wrong = {1.0, 2.0, 3.0};
    CHECK_THROWS(picar::gen_ordinal(small_config(1), anchored_wrong));
  }
}

TEST_CASE("bivariate field generator") {
  Eigen::Matrix2d t;
  t << 1.0, 0.3, 0.3, 0.2;

  SUBCASE("non-positive-definite cross covariance is rejected") {
    Eigen::Matrix2d bad;
    bad << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(picar::gen_svc(small_config(1), bad),
                    std::invalid_argument);
  }

  SUBCASE("separable factorization equals the full dense one") {
    // chol(R) (x) chol(T) is a Cholesky-like factor of R (x) T; verify the
    // identity on a dense 2n x 2n build.
    Rng rng(606);
    std::vector<Point2> pts(50);
    for (auto& q : pts) {
      q.x = rng.uniform();
      q.y = rng.uniform();
    }
    MaternParams p;
    p.sigma2 = 1.0;
    p.phi = 0.2;
    p.nu = 2.5;
    Eigen::MatrixXd r = picar::matern_covariance(pts, p);
    const int n = 50;
    const Eigen::MatrixXd lr = r.llt().matrixL();
    const Eigen::MatrixXd lt = t.llt().matrixL();
    Eigen::MatrixXd lk(2 * n, 2 * n), full(2 * n, 2 * n);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        lk.block(a * n, b * n, n, n) = lt(a, b) * lr;
        full.block(a * n, b * n, n, n) = t(a, b) * r;
      }
    CHECK((lk * lk.transpose() - full).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("cross-correlation at matched sites follows the cross matrix") {
    GenConfig config = small_config(13);
    config.n = 100;
    config.n_cv = 10;
    double sw = 0.0, sb = 0.0, sww = 0.0, sbb = 0.0, swb = 0.0;
    long count = 0;
    for (int r = 0; r < 200; ++r) {
      config.seed = 5000 + r;
      const Dataset d = picar::gen_svc(config, t);
      for (int i = 0; i < d.size(); ++i) {
        const double w = d.latent[i], b = d.svc_coef[i];
        sw += w;
        sb += b;
        sww += w * w;
        sbb += b * b;
        swb += w * b;
        ++count;
      }
    }
    const double mw = sw / count, mb = sb / count;
    const double vw = sww / count - mw * mw;
    const double vb = sbb / count - mb * mb;
    const double cwb = swb / count - mw * mb;
    CHECK(vw == doctest::Approx(t(0, 0)).epsilon(0.10));
    CHECK(vb == doctest::Approx(t(1, 1)).epsilon(0.10));
    const double corr = cwb / std::sqrt(vw * vb);
    const double want = t(0, 1) / std::sqrt(t(0, 0) * t(1, 1));
    CHECK(std::abs(corr - want) < 0.06);
  }

  SUBCASE("a diagonal cross matrix decouples the fields") {
    Eigen::Matrix2d diag = Eigen::Matrix2d::Zero();
    diag(0, 0) = 1.0;
    diag(1, 1) = 0.2;
    GenConfig config = small_config(21);
    config.n = 100;
    config.n_cv = 10;
    double swb = 0.0, sww = 0.0, sbb = 0.0;
    long count = 0;
    for (int r = 0; r < 200; ++r) {
      config.seed = 9000 + r;
      const Dataset d = picar::gen_svc(config, diag);
      for (int i = 0; i < d.size(); ++i) {
        swb += d.latent[i] * d.svc_coef[i];
        sww += d.latent[i] * d.latent[i];
        sbb += d.svc_coef[i] * d.svc_coef[i];
        ++count;
      }
    }
    const double corr = swb / std::sqrt(sww * sbb);
    CHECK(std::abs(corr) < 0.06);
  }

  SUBCASE("responses are counts") {
    const Dataset d = picar::gen_svc(small_config(77), t);
    for (int i = 0; i < d.size(); ++i) {
      CHECK(d.z[i] >= 0.0);
      CHECK(d.z[i] == std::floor(d.z[i]));
    }
    CHECK(d.svc_coef.size() == d.size());
    CHECK(d.svc_coef_cv.size() == d.cv_size());
  }
}

TEST_CASE("optional nugget perturbs the predictor stream only") {
  GenConfig config = small_config(5150);
  const Dataset base = picar::gen_count(config);
  config.nugget_sd = 0.5;
  const Dataset noisy = picar::gen_count(config);
  // Same locations and covariates, different responses.
  CHECK((noisy.x - base.x).cwiseAbs().maxCoeff() == 0.0);
  CHECK(noisy.fit_locations[0].x == base.fit_locations[0].x);
  CHECK((noisy.z - base.z).cwiseAbs().maxCoeff() > 0.0);
}
