#include "picar/mcmc.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "picar/basis.hpp"
#include "picar/glm.hpp"
#include "picar/mesh.hpp"
#include "picar/randfield.hpp"
#include "picar/rng.hpp"

using picar::Chain;
using picar::ChainConfig;
using picar::ChainState;
using picar::Family;
using picar::McmcInit;
using picar::ModelSpec;
using picar::Rng;

namespace {

// Small well-posed spec with a random Gaussian basis and identity kernel.
ModelSpec toy_spec(Family family, int n, int k, int p, std::uint64_t seed) {
  Rng rng(seed);
  ModelSpec spec;
  spec.family = family;
  spec.x.resize(n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) spec.x(i, j) = rng.normal();
  spec.basis.resize(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) spec.basis(i, j) = rng.normal() / std::sqrt(n);
  spec.kernel = Eigen::MatrixXd::Identity(p, p);
  spec.z.resize(n);
  switch (family) {
    case Family::kBinary:
      for (int i = 0; i < n; ++i) spec.z[i] = rng.bernoulli(0.5);
      break;
    case Family::kCount:
    case Family::kSvc:
      for (int i = 0; i < n; ++i) spec.z[i] = static_cast<double>(rng.poisson(2.0));
      break;
    case Family::kOrdinal:
      spec.ordinal_categories = 4;
      for (int i = 0; i < n; ++i)
        spec.z[i] = 1.0 + (rng.next_u64() % 4);
      break;
  }
  return spec;
}

ChainState random_state(const ModelSpec& spec, std::uint64_t seed,
                        double scale = 0.5) {
  Rng rng(seed);
  ChainState st;
  st.beta.resize(spec.covariates());
  for (int i = 0; i < st.beta.size(); ++i) st.beta[i] = scale * rng.normal();
  st.delta.resize(spec.rank());
  for (int i = 0; i < st.delta.size(); ++i) st.delta[i] = scale * rng.normal();
  if (spec.family == Family::kSvc) {
    st.delta2.resize(spec.rank());
    for (int i = 0; i < st.delta2.size(); ++i)
      st.delta2[i] = scale * rng.normal();
  }
  if (spec.family == Family::kOrdinal) {
    st.alpha.resize(spec.ordinal_categories - 2);
    for (int i = 0; i < st.alpha.size(); ++i)
      st.alpha[i] = 0.3 * rng.normal();
  }
  st.tau = 1.0;
  st.tau2 = 1.0;
  return st;
}

// Per-site log-likelihood summed in extended precision.
long double loglik_extended(const ModelSpec& spec, const ChainState& st) {
  const Eigen::VectorXd ef = spec.x * st.beta;
  const Eigen::VectorXd ew = spec.basis * st.delta;
  Eigen::VectorXd eta = ef + ew;
  if (spec.family == Family::kSvc) {
    const Eigen::VectorXd eb = spec.basis * st.delta2;
    eta.array() += spec.x.col(0).array() * eb.array();
  }
  Eigen::VectorXd theta;
  if (spec.family == Family::kOrdinal)
    theta = picar::cutpoints_from_free(st.alpha);

  long double ll = 0.0L;
  for (int i = 0; i < eta.size(); ++i) {
    const long double e = eta[i];
    switch (spec.family) {
      case Family::kBinary:
        ll += static_cast<long double>(spec.z[i]) * e - logl(1.0L + expl(e));
        break;
      case Family::kCount:
      case Family::kSvc:
        ll += static_cast<long double>(spec.z[i]) * e -
              expl(std::min<long double>(e, 35.0L)) -
              lgammal(static_cast<long double>(spec.z[i]) + 1.0L);
        break;
      case Family::kOrdinal: {
        const int j = static_cast<int>(spec.z[i]);
        const int j_max = spec.ordinal_categories;
        const auto cum = [&](int idx) {
          // P(z <= idx) = logistic(theta[idx - 1] - eta)
          const long double u = static_cast<long double>(theta[idx - 1]) - e;
          return 1.0L / (1.0L + expl(-u));
        };
        long double prob;
        if (j == 1)
          prob = cum(1);
        else if (j == j_max)
          prob = 1.0L - cum(j_max - 1);
        else
          prob = cum(j) - cum(j - 1);
        ll += logl(prob);
        break;
      }
    }
  }
  return ll;
}

// The sampler's proposal scale round-trips through log space.
double effective_scale(double configured) {
  return std::exp(std::log(configured));
}

// Cholesky of the beta proposal exactly as the sampler prepares it.
Eigen::MatrixXd proposal_chol(Eigen::MatrixXd cov) {
  for (int i = 0; i < cov.rows(); ++i)
    cov(i, i) = std::max(cov(i, i), 1e-12);
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  REQUIRE(llt.info() == Eigen::Success);
  return llt.matrixL();
}

ModelSpec empty_data_spec(int k, int p) {
  ModelSpec spec;
  spec.family = Family::kBinary;
  spec.x = Eigen::MatrixXd::Zero(0, k);
  spec.z = Eigen::VectorXd::Zero(0);
  spec.basis = Eigen::MatrixXd::Zero(0, p);
  spec.kernel = Eigen::MatrixXd::Identity(p, p);
  return spec;
}

}  // namespace

TEST_CASE("log-likelihood closed forms") {
  SUBCASE("flat binary predictor") {
    const int n = 137;
    ModelSpec spec = toy_spec(Family::kBinary, n, 2, 3, 1);
    ChainState st = random_state(spec, 2);
    st.beta.setZero();
    st.delta.setZero();
    CHECK(picar::loglik(spec, st) ==
          doctest::Approx(-n * std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("two-category ordinal equals binary") {
    ModelSpec ord = toy_spec(Family::kOrdinal, 90, 2, 3, 3);
    ord.ordinal_categories = 2;
    for (int i = 0; i < ord.z.size(); ++i)
      ord.z[i] = 1.0 + static_cast<double>(i % 2);
    ModelSpec bin = ord;
    bin.family = Family::kBinary;
    bin.ordinal_categories = 4;  // ignored
    for (int i = 0; i < bin.z.size(); ++i) bin.z[i] = ord.z[i] - 1.0;

    ChainState st = random_state(ord, 4);
    st.alpha = Eigen::VectorXd();  // no free cutpoints at J = 2
    const double a = picar::loglik(ord, st);
    const double b = picar::loglik(bin, st);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }

  SUBCASE("matches an extended-precision per-site oracle") {
    for (const Family family : {Family::kBinary, Family::kCount, Family::kSvc,
                                Family::kOrdinal}) {
      const ModelSpec spec = toy_spec(family, 80, 2, 4, 7);
      for (std::uint64_t s = 1; s <= 5; ++s) {
        const ChainState st = random_state(spec, 100 + s);
        const double got = picar::loglik(spec, st);
        const long double want = loglik_extended(spec, st);
        CHECK(std::abs(got - static_cast<double>(want)) <=
              1e-10 * std::max(1.0, std::abs(static_cast<double>(want))));
      }
    }
  }

  SUBCASE("a poisoned state names the observation") {
    ModelSpec spec = toy_spec(Family::kBinary, 10, 2, 3, 9);
    ChainState st = random_state(spec, 10);
    st.delta[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(picar::loglik(spec, st),
                         doctest::Contains("observation"),
                         std::runtime_error);
  }
}

TEST_CASE("precision parameter conditional is the analytic gamma") {
  const ModelSpec spec = toy_spec(Family::kBinary, 50, 2, 6, 11);
  const double shape = 0.5, rate = 2000.0;

  SUBCASE("zero coefficients reduce the rate to the prior") {
    Rng rng(1);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(6);
    const int draws = 100000;
    double sum = 0.0;
    for (int i = 0; i < draws; ++i)
      sum += picar::gibbs_tau(zero, spec.kernel, shape, rate, rng);
    const double want = (shape + 3.0) / rate;  // shape + p/2 over prior rate
    CHECK(sum / draws == doctest::Approx(want).epsilon(0.01));
  }

  SUBCASE("fixed coefficients pass a KS test against the posterior gamma") {
    // Reduced graph-laplacian kernel from a real mesh.
    Rng prng(31);
    std::vector<picar::Point2> pts(80);
    for (auto& q : pts) {
      q.x = prng.uniform();
      q.y = prng.uniform();
    }
    const picar::Mesh mesh = picar::build_mesh(pts, 100, 0.1, 2);
    const auto graph = picar::adjacency(mesh);
    const auto spectral =
        picar::leading_eigenpairs(picar::MoranOperator(graph), 12);
    const auto kernel = picar::precision_kernel(picar::PrecisionKind::kIcar,
                                                graph, spectral.vectors);
    const int p = static_cast<int>(kernel.matrix.rows());
    Eigen::VectorXd delta(p);
    Rng drng(5);
    for (int i = 0; i < p; ++i) delta[i] = drng.normal();

    const double quad = delta.dot(kernel.matrix * delta);
    const double post_shape = shape + 0.5 * p;
    const double post_rate = rate + 0.5 * quad;

    Rng rng(17);
    std::vector<double> sample(10000);
    for (auto& v : sample)
      v = picar::gibbs_tau(delta, kernel.matrix, shape, rate, rng);
    const double d = oracle::ks_statistic(sample, [&](double x) {
      return oracle::gamma_cdf(x, post_shape, post_rate);
    });
    const double pval = oracle::ks_pvalue(d, sample.size());
    CHECK(pval > 0.01);

    double sum = 0.0;
    Rng rng2(18);
    for (int i = 0; i < 100000; ++i)
      sum += picar::gibbs_tau(delta, kernel.matrix, shape, rate, rng2);
    CHECK(sum / 100000 ==
          doctest::Approx(post_shape / post_rate).epsilon(0.01));
  }
}

TEST_CASE("random-walk blocks without data sample their priors") {
  // Flat likelihood: acceptance is governed by the prior alone.
  const ModelSpec spec = empty_data_spec(1, 1);

  SUBCASE("single-step acceptance matches numerical integration") {
    const Eigen::MatrixXd chol = Eigen::MatrixXd::Identity(1, 1);
    const double start = 2.0;
    const int trials = 20000;
    int accepted = 0;
    for (int t = 0; t < trials; ++t) {
      ChainState st;
      st.beta = Eigen::VectorXd::Constant(1, start);
      st.delta = Eigen::VectorXd::Zero(1);
      st.tau = 1.0;
      Rng rng(900000 + t);
      if (picar::mh_beta(st, chol, 1.0, spec, rng)) ++accepted;
    }
    // E_u[min(1, p(start + u) / p(start))] under u ~ N(0, 1), prior N(0, 100).
    double want = 0.0;
    const int grid = 200001;
    const double lo = -9.0, hi = 9.0;
    const double step = (hi - lo) / (grid - 1);
    for (int i = 0; i < grid; ++i) {
      const double u = lo + i * step;
      const double phi = std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
      const double prop = start + u;
      const double ratio =
          std::exp(-0.5 * (prop * prop - start * start) / 100.0);
      want += phi * std::min(1.0, ratio) * step;
    }
    const double got = static_cast<double>(accepted) / trials;
    const double se = std::sqrt(want * (1.0 - want) / trials);
    CHECK(std::abs(got - want) < 3.5 * se);
  }

  SUBCASE("long-run coefficient marginal is the prior") {
    ChainState st;
    st.beta = Eigen::VectorXd::Zero(1);
    st.delta = Eigen::VectorXd::Zero(1);
    st.tau = 1.0;
    const Eigen::MatrixXd chol = 10.0 * Eigen::MatrixXd::Identity(1, 1);
    Rng rng(71);
    std::vector<double> kept;
    for (int it = 0; it < 100000; ++it) {
      picar::mh_beta(st, chol, 1.0, spec, rng);
      if (it >= 2000 && it % 100 == 0) kept.push_back(st.beta[0]);
    }
    const double d = oracle::ks_statistic(kept, [](double x) {
      return oracle::normal_cdf(x / 10.0);
    });
    CHECK(oracle::ks_pvalue(d, kept.size()) > 0.01);
  }

  SUBCASE("long-run field marginal is its conditional prior") {
    // tau fixed at 1 with identity kernel: delta ~ N(0, 1).
    ChainState st;
    st.beta = Eigen::VectorXd::Zero(1);
    st.delta = Eigen::VectorXd::Zero(1);
    st.tau = 1.0;
    Rng rng(72);
    std::vector<double> kept;
    for (int it = 0; it < 100000; ++it) {
      picar::mh_delta(st, 2.4, spec, rng);
      if (it >= 2000 && it % 100 == 0) kept.push_back(st.delta[0]);
    }
    const double d = oracle::ks_statistic(
        kept, [](double x) { return oracle::normal_cdf(x); });
    CHECK(oracle::ks_pvalue(d, kept.size()) > 0.01);
  }

  SUBCASE("one stationary step is exchangeable in time") {
    // Reversibility: for X0 drawn from the target and X1 one update later,
    // crossing counts over any threshold match in both directions.
    Rng init_rng(73);
    const std::vector<double> thresholds = {-0.5, 0.0, 0.7};
    std::vector<long> ab(thresholds.size(), 0), ba(thresholds.size(), 0);
    for (int rep = 0; rep < 40000; ++rep) {
      ChainState st;
      st.beta = Eigen::VectorXd::Zero(1);
      st.delta = Eigen::VectorXd::Constant(1, init_rng.normal());
      st.tau = 1.0;
      const double x0 = st.delta[0];
      Rng rng(777000 + rep);
      picar::mh_delta(st, 2.0, spec, rng);
      const double x1 = st.delta[0];
      for (std::size_t a = 0; a < thresholds.size(); ++a) {
        const double c = thresholds[a];
        if (x0 < c && x1 >= c) ++ab[a];
        if (x1 < c && x0 >= c) ++ba[a];
      }
    }
    for (std::size_t a = 0; a < thresholds.size(); ++a) {
      const double total = static_cast<double>(ab[a] + ba[a]);
      REQUIRE(total > 100);
      CHECK(std::abs(ab[a] - ba[a]) / std::sqrt(total) < 3.5);
    }
  }
}

TEST_CASE("cutpoint block keeps the reconstruction monotone") {
  ModelSpec spec = toy_spec(Family::kOrdinal, 120, 2, 3, 21);
  ChainState st = random_state(spec, 22);
  Rng rng(23);
  for (int it = 0; it < 2000; ++it) {
    picar::mh_alpha(st, it % 2, 0.3, spec, rng);
    const Eigen::VectorXd theta = picar::cutpoints_from_free(st.alpha);
    CHECK(theta[0] == 0.0);
    for (int j = 1; j < theta.size(); ++j) CHECK(theta[j] > theta[j - 1]);
  }

  // Three categories leave a single positive cutpoint.
  ModelSpec spec3 = toy_spec(Family::kOrdinal, 60, 2, 3, 24);
  spec3.ordinal_categories = 3;
  for (int i = 0; i < spec3.z.size(); ++i)
    spec3.z[i] = 1.0 + (i % 3);
  ChainState st3 = random_state(spec3, 25);
  st3.alpha = Eigen::VectorXd::Zero(1);
  for (int it = 0; it < 500; ++it) {
    picar::mh_alpha(st3, 0, 0.4, spec3, rng);
    const Eigen::VectorXd theta = picar::cutpoints_from_free(st3.alpha);
    REQUIRE(theta.size() == 2);
    CHECK(theta[1] > 0.0);
  }
}

TEST_CASE("chain runner") {
  const ModelSpec spec = toy_spec(Family::kBinary, 100, 2, 5, 41);
  ChainConfig config;
  config.iterations = 3000;
  config.burn_in = 1000;
  config.thin = 4;
  config.seed = 99;

  SUBCASE("bookkeeping invariants") {
    const Chain chain = picar::run_chain(spec, config);
    CHECK(chain.kept() == 500);
    CHECK(chain.beta.cols() == 2);
    CHECK(chain.delta.cols() == 5);
    CHECK(chain.accept_beta >= 0.0);
    CHECK(chain.accept_beta <= 1.0);
    CHECK(chain.accept_delta >= 0.0);
    CHECK(chain.accept_delta <= 1.0);
    CHECK(chain.tau.minCoeff() > 0.0);
    CHECK(chain.wall_seconds >= 0.0);
    CHECK(chain.iteration_of(0) == 1004);
    CHECK(chain.iteration_of(499) == 3000);
  }

  SUBCASE("identical configuration replays byte for byte") {
    const Chain a = picar::run_chain(spec, config);
    const Chain b = picar::run_chain(spec, config);
    CHECK((a.beta - b.beta).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.delta - b.delta).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.tau - b.tau).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.accept_beta == b.accept_beta);

    ChainConfig other = config;
    other.seed = 100;
    const Chain c = picar::run_chain(spec, other);
    CHECK((a.beta - c.beta).cwiseAbs().maxCoeff() > 0.0);
  }

  SUBCASE("log posterior is finite at every kept state") {
    const Chain chain = picar::run_chain(spec, config);
    for (int s = 0; s < chain.kept(); ++s) {
      ChainState st;
      st.beta = chain.beta.row(s).transpose();
      st.delta = chain.delta.row(s).transpose();
      st.tau = chain.tau[s];
      const double ll = picar::loglik(spec, st);
      CHECK(std::isfinite(ll));
    }
  }

  SUBCASE("frozen-scale run equals a hand-rolled block loop") {
    const McmcInit init = picar::init_from_glm(spec);
    ChainConfig frozen = config;
    frozen.adapt = false;
    frozen.beta_scale = 1.0;
    frozen.delta_scale = 0.05;
    const Chain chain = picar::run_chain(spec, frozen, init);

    ChainState st;
    st.beta = init.beta;
    st.delta = init.delta;
    st.tau = 1.0;
    const Eigen::MatrixXd chol = proposal_chol(init.beta_proposal);
    const double sb = effective_scale(frozen.beta_scale);
    const double sd = effective_scale(frozen.delta_scale);
    Rng rng = Rng::derive(frozen.seed, "mcmc");
    int stored = 0;
    for (int it = 1; it <= frozen.iterations; ++it) {
      picar::mh_beta(st, chol, sb, spec, rng);
      picar::mh_delta(st, sd, spec, rng);
      st.tau = picar::gibbs_tau(st.delta, spec.kernel, spec.tau_shape,
                                spec.tau_rate, rng);
      if (it > frozen.burn_in && (it - frozen.burn_in) % frozen.thin == 0) {
        CHECK((chain.beta.row(stored).transpose() - st.beta)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
        CHECK((chain.delta.row(stored).transpose() - st.delta)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
        CHECK(chain.tau[stored] == st.tau);
        ++stored;
      }
    }
    CHECK(stored == chain.kept());
  }

  SUBCASE("ordinal chains keep cutpoints ordered in every stored draw") {
    const ModelSpec ospec = toy_spec(Family::kOrdinal, 120, 2, 4, 51);
    ChainConfig oconfig = config;
    oconfig.iterations = 2000;
    oconfig.burn_in = 500;
    oconfig.thin = 3;
    const Chain chain = picar::run_chain(ospec, oconfig);
    REQUIRE(chain.alpha.cols() == 2);
    for (int s = 0; s < chain.kept(); ++s) {
      const Eigen::VectorXd theta =
          picar::cutpoints_from_free(chain.alpha.row(s).transpose());
      CHECK(theta[0] == 0.0);
      CHECK(theta[1] > 0.0);
      CHECK(theta[2] > theta[1]);
    }
  }

  SUBCASE("varying-coefficient chains carry the second block") {
    const ModelSpec sspec = toy_spec(Family::kSvc, 90, 2, 4, 61);
    ChainConfig sconfig = config;
    sconfig.iterations = 1500;
    sconfig.burn_in = 500;
    sconfig.thin = 2;
    const Chain chain = picar::run_chain(sspec, sconfig);
    CHECK(chain.delta2.cols() == 4);
    CHECK(chain.tau2.size() == chain.kept());
    CHECK(chain.tau2.minCoeff() > 0.0);
  }

  SUBCASE("bad configurations are rejected with every problem listed") {
    ChainConfig bad = config;
    bad.burn_in = 5000;   // exceeds iterations
    bad.thin = 0;
    try {
      picar::run_chain(spec, bad);
      FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
      const std::string msg = e.what();
      CHECK(msg.find("iterations") != std::string::npos);
      CHECK(msg.find("thin") != std::string::npos);
    }
  }
}

TEST_CASE("posterior without data reproduces the prior") {
  ModelSpec spec = empty_data_spec(2, 2);
  spec.tau_shape = 2.0;   // gentler prior keeps the check well-mixed
  spec.tau_rate = 2.0;
  McmcInit init;
  init.beta = Eigen::VectorXd::Zero(2);
  init.delta = Eigen::VectorXd::Zero(2);
  init.beta_proposal = 100.0 * Eigen::MatrixXd::Identity(2, 2);

  ChainConfig config;
  config.iterations = 60000;
  config.burn_in = 10000;
  config.thin = 25;
  config.seed = 7;
  const Chain chain = picar::run_chain(spec, config, init);
  const int kept = chain.kept();
  REQUIRE(kept == 2000);

  for (int j = 0; j < 2; ++j) {
    const Eigen::VectorXd draws = chain.beta.col(j);
    const double mean = oracle::mean_of(draws);
    const double var = oracle::var_of(draws);
    const double ess = picar::ess(draws);
    CHECK(std::abs(mean) < 3.0 * 10.0 / std::sqrt(ess));
    CHECK(var == doctest::Approx(100.0).epsilon(0.25));
  }

  // tau marginal equals its gamma prior.
  std::vector<double> tau(chain.tau.data(), chain.tau.data() + kept);
  const double d = oracle::ks_statistic(
      tau, [](double x) { return oracle::gamma_cdf(x, 2.0, 2.0); });
  CHECK(oracle::ks_pvalue(d, tau.size()) > 0.01);
}

TEST_CASE("rank of truth is uniform under self-generated data") {
  // Simulation-based calibration smoke test on the binary family.
  const int reps = 100;
  const int bins = 10;
  std::vector<int> counts(bins, 0);
  int total = 0;
  for (int rep = 0; rep < reps; ++rep) {
    Rng gen = Rng::derive(515151, "sbc", rep);
    const int n = 60, p = 3;
    ModelSpec spec;
    spec.family = Family::kBinary;
    spec.beta_cov = Eigen::MatrixXd::Identity(1, 1);
    spec.tau_shape = 2.0;
    spec.tau_rate = 2.0;
    spec.x.resize(n, 1);
    spec.basis.resize(n, p);
    for (int i = 0; i < n; ++i) {
      spec.x(i, 0) = gen.normal();
      for (int j = 0; j < p; ++j) spec.basis(i, j) = gen.normal();
    }
    spec.kernel = Eigen::MatrixXd::Identity(p, p);

    const double beta_true = gen.normal();
    const double tau_true = gen.gamma(2.0, 2.0);
    Eigen::VectorXd delta_true(p);
    for (int j = 0; j < p; ++j)
      delta_true[j] = gen.normal() / std::sqrt(tau_true);
    spec.z.resize(n);
    for (int i = 0; i < n; ++i) {
      const double eta =
          spec.x(i, 0) * beta_true + spec.basis.row(i) * delta_true;
      spec.z[i] = gen.bernoulli(1.0 / (1.0 + std::exp(-eta)));
    }

    ChainConfig config;
    config.iterations = 6000;
    config.burn_in = 2000;
    config.thin = 20;   // 200 kept draws
    config.seed = Rng::derive_seed(515151, "sbc-chain", rep);
    Chain chain;
    try {
      chain = picar::run_chain(spec, config);
    } catch (const std::exception&) {
      continue;  // separation can break the GLM initializer; skip the rep
    }
    int rank = 0;
    for (int s = 0; s < chain.kept(); ++s)
      if (chain.beta(s, 0) < beta_true) ++rank;
    const int bin = std::min(bins - 1, rank * bins / (chain.kept() + 1));
    ++counts[bin];
    ++total;
  }
  REQUIRE(total >= 90);
  const double expected = static_cast<double>(total) / bins;
  double stat = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double diff = counts[b] - expected;
    stat += diff * diff / expected;
  }
  // Chi-squared with nine degrees of freedom; generous to stay stable.
  CHECK(oracle::chi2_cdf(stat, 9.0) < 0.999);
}

TEST_CASE("initializer seeds the chain inside the typical set") {
  picar::GenConfig config;
  config.n = 150;
  config.n_cv = 20;
  config.beta = Eigen::Vector2d(1.0, 1.0);
  config.seed = 3131;
  const picar::Dataset data = picar::gen_binary(config);
  ModelSpec spec;
  spec.family = Family::kBinary;
  spec.x = data.x;
  spec.z = data.z;
  Rng rng(5);
  spec.basis.resize(150, 4);
  for (int i = 0; i < 150; ++i)
    for (int j = 0; j < 4; ++j) spec.basis(i, j) = rng.normal() / 12.0;
  spec.kernel = Eigen::MatrixXd::Identity(4, 4);

  const McmcInit init = picar::init_from_glm(spec);
  CHECK(init.beta.allFinite());
  CHECK(init.delta.allFinite());
  CHECK(init.beta_proposal.rows() == 2);
  for (int i = 0; i < 2; ++i) CHECK(init.beta_proposal(i, i) >= 1e-12);
  // The GLM start is within a few units of the truth.
  CHECK(std::abs(init.beta[0] - 1.0) < 3.0);
}

TEST_CASE("effective sample size estimator") {
  SUBCASE("independent draws") {
    Rng rng(8080);
    Eigen::VectorXd draws(10000);
    for (int i = 0; i < draws.size(); ++i) draws[i] = rng.normal();
    const double got = picar::ess(draws);
    CHECK(got > 8500.0);
    CHECK(got < 11500.0);
  }

  SUBCASE("autoregressive draws match the analytic rate") {
    const double rho = 0.9;
    const int n = 100000;
    const Eigen::VectorXd draws = oracle::ar1_series(n, rho, 4242);
    const double want = n * (1.0 - rho) / (1.0 + rho);
    const double got = picar::ess(draws);
    CHECK(std::abs(got - want) < 0.20 * want);
  }

  SUBCASE("a constant series collapses to one") {
    const Eigen::VectorXd draws = Eigen::VectorXd::Constant(500, 3.25);
    CHECK(picar::ess(draws) == 1.0);
  }
}
