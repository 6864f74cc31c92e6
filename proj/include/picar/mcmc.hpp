#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "picar/randfield.hpp"
#include "picar/rng.hpp"

namespace picar {

// Everything a sampler needs to evaluate the posterior. `basis` holds the
// projected spatial basis (projector times eigenvectors) evaluated at the
// fit locations; `kernel` is the prior precision kernel on its coefficients.
struct ModelSpec {
  Family family = Family::kBinary;
  Eigen::MatrixXd x;       // n x k covariates
  Eigen::VectorXd z;       // n responses
  Eigen::MatrixXd basis;   // n x p projected basis
  Eigen::MatrixXd kernel;  // p x p SPD coefficient precision kernel
  int ordinal_categories = 4;

  Eigen::VectorXd beta_mean;  // empty means zero
  Eigen::MatrixXd beta_cov;   // empty means 100 * identity
  double tau_shape = 0.5;
  double tau_rate = 2000.0;
  double tau2_shape = 0.5;  // second field (varying-coefficient models)
  double tau2_rate = 2000.0;

  int size() const { return static_cast<int>(x.rows()); }
  int covariates() const { return static_cast<int>(x.cols()); }
  int rank() const { return static_cast<int>(basis.cols()); }
  // Resolved prior moments (defaults applied).
  Eigen::VectorXd prior_mean() const;
  Eigen::MatrixXd prior_cov() const;
  // Throws listing every violated constraint at once.
  void validate() const;
};

struct ChainState {
  Eigen::VectorXd beta;
  Eigen::VectorXd delta;   // intercept-field coefficients
  Eigen::VectorXd delta2;  // coefficient-field block, svc only (else empty)
  Eigen::VectorXd alpha;   // free cutpoints, ordinal only (else empty)
  double tau = 1.0;
  double tau2 = 1.0;
};

struct ChainConfig {
  int iterations = 300000;
  int burn_in = 100000;
  int thin = 20;
  std::uint64_t seed = 1;
  bool adapt = true;
  // Initial proposal scales; adaptation retunes them during burn-in.
  double beta_scale = 1.0;  // multiplier on the GLM covariance factor
  double delta_scale = 0.05;
  double alpha_scale = 0.1;
};

struct Chain {
  Family family = Family::kBinary;
  int ordinal_categories = 0;
  ChainConfig config;
  // One row per stored draw.
  Eigen::MatrixXd beta;
  Eigen::MatrixXd delta;
  Eigen::MatrixXd delta2;  // zero columns unless svc
  Eigen::MatrixXd alpha;   // zero columns unless ordinal
  Eigen::VectorXd tau;
  Eigen::VectorXd tau2;  // zero length unless svc
  // Post burn-in acceptance rates.
  double accept_beta = 0.0;
  double accept_delta = 0.0;
  double accept_delta2 = 0.0;
  Eigen::VectorXd accept_alpha;
  // Proposal scales in force after the adaptation freeze.
  double beta_scale_final = 0.0;
  double delta_scale_final = 0.0;
  double delta2_scale_final = 0.0;
  Eigen::VectorXd alpha_scale_final;
  double wall_seconds = 0.0;

  int kept() const { return static_cast<int>(beta.rows()); }
  int iteration_of(int draw) const {
    return config.burn_in + (draw + 1) * config.thin;
  }
};

// Starting point and beta proposal covariance, normally taken from the
// classical GLM on the augmented design [X | basis].
struct McmcInit {
  Eigen::VectorXd beta;
  Eigen::VectorXd delta;
  Eigen::VectorXd delta2;
  Eigen::VectorXd alpha;
  Eigen::MatrixXd beta_proposal;  // k x k, diagonal floored at 1e-12
};

McmcInit init_from_glm(const ModelSpec& spec);

// Log-likelihood of the data given the state (prior terms excluded).
// Throws on a non-finite result, naming the offending observation.
double loglik(const ModelSpec& spec, const ChainState& state);

// Single-block samplers, exposed so tests can drive them directly. Each
// consumes randomness in a fixed order (proposal draws, then one uniform),
// so a sweep replayed with the same stream matches run_chain exactly.
double gibbs_tau(const Eigen::Ref<const Eigen::VectorXd>& delta,
                 const Eigen::Ref<const Eigen::MatrixXd>& kernel, double shape,
                 double rate, Rng& rng);
bool mh_beta(ChainState& state, const Eigen::Ref<const Eigen::MatrixXd>& proposal_chol,
             double scale, const ModelSpec& spec, Rng& rng);
// which = 0 updates delta, 1 updates delta2 (svc coefficient field).
bool mh_delta(ChainState& state, double step_scale, const ModelSpec& spec,
              Rng& rng, int which = 0);
// Componentwise update of one free cutpoint (flat prior).
bool mh_alpha(ChainState& state, int index, double step_scale,
              const ModelSpec& spec, Rng& rng);

Chain run_chain(const ModelSpec& spec, const ChainConfig& config,
                const McmcInit& init);
Chain run_chain(const ModelSpec& spec, const ChainConfig& config);

// Effective sample size via the initial monotone positive sequence
// estimator. Requires at least 100 draws; a constant series reports 1.
double ess(const Eigen::Ref<const Eigen::VectorXd>& draws);

// Chain files: one CSV per parameter block plus manifest.json.
void save_chain(const Chain& chain, const std::string& directory);
Chain load_chain(const std::string& directory);

}  // namespace picar
