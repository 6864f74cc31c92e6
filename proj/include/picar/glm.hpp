#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "picar/randfield.hpp"

namespace picar {

enum class GlmFamily { kLogit, kLog };

struct GlmFit {
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;  // inverse observed information at the optimum
  bool converged = false;
  int iterations = 0;
  double deviance = 0.0;
  double loglik = 0.0;
};

// Iteratively reweighted least squares for canonical-link binary (logit)
// or count (log) regression. Step-halving keeps the deviance monotone;
// a small ridge backs up the normal equations if they go singular.
GlmFit irls_fit(GlmFamily family, const Eigen::Ref<const Eigen::MatrixXd>& x,
                const Eigen::Ref<const Eigen::VectorXd>& z, int max_iter = 100,
                double tol = 1e-8);

// Proportional-odds fit with J ordered categories (responses in 1..J).
// Coefficients are [alpha_2..alpha_{J-1}, beta]: the J-2 free cutpoint
// increments on log scale (first cutpoint pinned at 0) followed by the
// regression block. Joint Newton with Levenberg damping.
GlmFit cumlogit_fit(const Eigen::Ref<const Eigen::MatrixXd>& x,
                    const Eigen::Ref<const Eigen::VectorXd>& z, int categories,
                    int max_iter = 200, double tol = 1e-10);

// Cutpoints theta_1..theta_{J-1} from unconstrained increments:
// theta_1 = 0, theta_j = sum_{i<=j} exp(alpha_i) over the free entries.
Eigen::VectorXd cutpoints_from_free(const Eigen::Ref<const Eigen::VectorXd>& alpha);

// Log-likelihood and gradient of the proportional-odds model at
// params = [alpha_free, beta]; exposed for optimizer verification.
double cumlogit_loglik(const Eigen::Ref<const Eigen::MatrixXd>& x,
                       const Eigen::Ref<const Eigen::VectorXd>& z,
                       int categories,
                       const Eigen::Ref<const Eigen::VectorXd>& params,
                       Eigen::VectorXd* grad = nullptr,
                       Eigen::MatrixXd* hess = nullptr);

struct RankSelection {
  std::vector<int> grid;
  std::vector<double> score;  // held-out squared error (misprediction rate
                              // for ordinal); +inf where the fit diverged
  int chosen = 0;             // rank, not index
  int chosen_index = 0;
};

std::vector<int> default_rank_grid(int max_rank);
std::vector<int> full_rank_grid(int max_rank);

// Maximum-likelihood rank heuristic: for each rank p in the grid fit the
// family GLM on [X | first p basis columns], score held-out prediction
// error, and take the argmin (lowest rank wins ties). `fit_basis` and
// `cv_basis` hold the projected basis at fit and held-out locations.
RankSelection select_rank(const Dataset& dataset,
                          const Eigen::Ref<const Eigen::MatrixXd>& fit_basis,
                          const Eigen::Ref<const Eigen::MatrixXd>& cv_basis,
                          std::span<const int> grid, int jobs = 1);

}  // namespace picar
