#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "picar/mcmc.hpp"

namespace picar {

// Posterior predictive summary at held-out locations. `prediction` is the
// reported point prediction: mean probability (binary), mean rate (count,
// svc) or modal category (ordinal). `sd` is the posterior standard
// deviation of the per-draw family mean (expected category for ordinal).
struct PredictionSummary {
  Eigen::VectorXd prediction;
  Eigen::VectorXd sd;
  Eigen::VectorXd classification;  // binary only: 1{prediction > threshold}
  Eigen::MatrixXd ordinal_probs;   // ordinal only: posterior mean per category
  double threshold = 0.5;
};

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double lower = 0.0;  // 95% equal-tailed credible bounds
  double upper = 0.0;
};

// Applies every stored draw to the held-out design and summarizes. cv_basis
// is the projected basis at the held-out locations.
PredictionSummary predict(const Chain& chain, const ModelSpec& spec,
                          const Eigen::Ref<const Eigen::MatrixXd>& cv_basis,
                          const Eigen::Ref<const Eigen::MatrixXd>& x_cv,
                          double threshold = 0.5);

double cvmspe(const Eigen::Ref<const Eigen::VectorXd>& z,
              const Eigen::Ref<const Eigen::VectorXd>& zhat);
double mpr(const Eigen::Ref<const Eigen::VectorXd>& z,
           const Eigen::Ref<const Eigen::VectorXd>& zhat);

// Mean and 95% equal-tailed interval of one series.
ParameterSummary summarize(const std::string& name,
                           const Eigen::Ref<const Eigen::VectorXd>& draws);

// Summaries for the interpretable blocks: beta components, tau (and tau2),
// and for ordinal chains the free cutpoints plus the implied theta.
std::vector<ParameterSummary> summarize_chain(const Chain& chain);

}  // namespace picar
