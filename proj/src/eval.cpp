#include "picar/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "picar/glm.hpp"

namespace picar {

namespace {

constexpr double kEtaClamp = 35.0;

double logistic(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

PredictionSummary predict(const Chain& chain, const ModelSpec& spec,
                          const Eigen::Ref<const Eigen::MatrixXd>& cv_basis,
                          const Eigen::Ref<const Eigen::MatrixXd>& x_cv,
                          double threshold) {
  const int draws = chain.kept();
  const int n_cv = static_cast<int>(x_cv.rows());
  const int k = static_cast<int>(chain.beta.cols());
  const int p = static_cast<int>(chain.delta.cols());
  if (draws < 1) throw std::invalid_argument("predict: chain has no draws");
  if (spec.family != chain.family)
    throw std::invalid_argument("predict: chain family differs from model");
  if (spec.covariates() != k)
    throw std::invalid_argument("predict: chain covariates differ from model");
  if (cv_basis.cols() != p)
    throw std::invalid_argument("predict: cv basis rank differs from chain");
  if (x_cv.cols() != k)
    throw std::invalid_argument("predict: covariate count differs from chain");
  if (cv_basis.rows() != n_cv)
    throw std::invalid_argument("predict: cv basis rows differ from covariates");
  const bool svc = chain.family == Family::kSvc;
  const bool ordinal = chain.family == Family::kOrdinal;
  if (svc && chain.delta2.cols() != p)
    throw std::invalid_argument("predict: svc chain missing second block");

  PredictionSummary out;
  out.threshold = threshold;
  const int j_max = ordinal ? chain.ordinal_categories : 0;

  // Welford accumulation of the per-draw family mean.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n_cv);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(n_cv);
  Eigen::MatrixXd prob_sum;
  if (ordinal) prob_sum = Eigen::MatrixXd::Zero(n_cv, j_max);

  Eigen::VectorXd eta(n_cv), value(n_cv);
  for (int s = 0; s < draws; ++s) {
    eta.noalias() = x_cv * chain.beta.row(s).transpose();
    eta.noalias() += cv_basis * chain.delta.row(s).transpose();
    if (svc) {
      const Eigen::VectorXd field = cv_basis * chain.delta2.row(s).transpose();
      eta.array() += x_cv.col(0).array() * field.array();
    }
    switch (chain.family) {
      case Family::kBinary:
        for (int i = 0; i < n_cv; ++i) value[i] = logistic(eta[i]);
        break;
      case Family::kCount:
      case Family::kSvc:
        for (int i = 0; i < n_cv; ++i)
          value[i] = std::exp(std::min(eta[i], kEtaClamp));
        break;
      case Family::kOrdinal: {
        const Eigen::VectorXd theta =
            cutpoints_from_free(chain.alpha.row(s).transpose());
        const std::span<const double> tspan(theta.data(),
                                            static_cast<size_t>(theta.size()));
        for (int i = 0; i < n_cv; ++i) {
          const auto probs = ordinal_category_probs(tspan, eta[i]);
          double expected = 0.0;
          for (int j = 0; j < j_max; ++j) {
            prob_sum(i, j) += probs[j];
            expected += (j + 1) * probs[j];
          }
          value[i] = expected;
        }
        break;
      }
    }
    const Eigen::VectorXd delta_vec = value - mean;
    mean += delta_vec / (s + 1);
    m2.array() += delta_vec.array() * (value - mean).array();
  }

  if (draws > 1)
    out.sd = (m2 / (draws - 1)).array().max(0.0).sqrt();
  else
    out.sd = Eigen::VectorXd::Zero(n_cv);
  if (ordinal) {
    out.ordinal_probs = prob_sum / draws;
    out.prediction.resize(n_cv);
    for (int i = 0; i < n_cv; ++i) {
      int best = 0;
      for (int j = 1; j < j_max; ++j)
        if (out.ordinal_probs(i, j) > out.ordinal_probs(i, best)) best = j;
      out.prediction[i] = best + 1;
    }
  } else {
    out.prediction = mean;
  }
  if (chain.family == Family::kBinary) {
    out.classification.resize(n_cv);
    for (int i = 0; i < n_cv; ++i)
      out.classification[i] = out.prediction[i] > threshold ? 1.0 : 0.0;
  }
  return out;
}

double cvmspe(const Eigen::Ref<const Eigen::VectorXd>& z,
              const Eigen::Ref<const Eigen::VectorXd>& zhat) {
  if (z.size() == 0) throw std::invalid_argument("cvmspe: empty input");
  if (z.size() != zhat.size())
    throw std::invalid_argument("cvmspe: length mismatch");
  return (z - zhat).squaredNorm() / z.size();
}

double mpr(const Eigen::Ref<const Eigen::VectorXd>& z,
           const Eigen::Ref<const Eigen::VectorXd>& zhat) {
  if (z.size() == 0) throw std::invalid_argument("mpr: empty input");
  if (z.size() != zhat.size())
    throw std::invalid_argument("mpr: length mismatch");
  int wrong = 0;
  for (int i = 0; i < z.size(); ++i)
    if (z[i] != zhat[i]) ++wrong;
  return static_cast<double>(wrong) / z.size();
}

ParameterSummary summarize(const std::string& name,
                           const Eigen::Ref<const Eigen::VectorXd>& draws) {
  const int n = static_cast<int>(draws.size());
  if (n == 0) throw std::invalid_argument("summarize: empty draws");
  ParameterSummary s;
  s.name = name;
  s.mean = draws.mean();
  std::vector<double> sorted(draws.data(), draws.data() + n);
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * (n - 1);
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = static_cast<int>(std::ceil(pos));
    const double w = pos - lo;
    return (1.0 - w) * sorted[lo] + w * sorted[hi];
  };
  s.lower = quantile(0.025);
  s.upper = quantile(0.975);
  return s;
}

std::vector<ParameterSummary> summarize_chain(const Chain& chain) {
  std::vector<ParameterSummary> out;
  for (int c = 0; c < chain.beta.cols(); ++c)
    out.push_back(summarize("beta" + std::to_string(c + 1), chain.beta.col(c)));
  out.push_back(summarize("tau", chain.tau));
  if (chain.tau2.size() > 0) out.push_back(summarize("tau2", chain.tau2));
  if (chain.alpha.cols() > 0) {
    for (int c = 0; c < chain.alpha.cols(); ++c)
      out.push_back(
          summarize("alpha" + std::to_string(c + 2), chain.alpha.col(c)));
    // Implied cutpoints. theta1 = 0 is structural, so start at theta2.
    const int kept = chain.kept();
    Eigen::MatrixXd theta(kept, chain.alpha.cols() + 1);
    for (int s = 0; s < kept; ++s)
      theta.row(s) = cutpoints_from_free(chain.alpha.row(s).transpose())
                         .transpose();
    for (int c = 1; c < theta.cols(); ++c)
      out.push_back(
          summarize("theta" + std::to_string(c + 1), theta.col(c)));
  }
  return out;
}

}  // namespace picar
