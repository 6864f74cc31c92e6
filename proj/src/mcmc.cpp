#include "picar/mcmc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "picar/digest.hpp"
#include "picar/glm.hpp"

namespace picar {

namespace {

constexpr double kEtaClamp = 35.0;
const double kNegInf = -std::numeric_limits<double>::infinity();

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Log probability of ordinal category zi (1-based) given cutpoints theta
// (length J-1, theta[0] = 0) and linear predictor eta. Degenerate cutpoint
// spacing yields -inf, which callers treat as a rejected proposal.
double log_ordinal_prob(const Eigen::VectorXd& theta, double eta, int zi,
                        int j_max) {
  if (zi == 1) return -softplus(-(theta[0] - eta));
  if (zi == j_max) return -softplus(theta[j_max - 2] - eta);
  const double ua = theta[zi - 1] - eta;
  const double ub = theta[zi - 2] - eta;
  const double diff = ua - ub;
  if (!(diff > 0.0)) return kNegInf;
  return ua + std::log1p(-std::exp(-diff)) - softplus(ua) - softplus(ub);
}

// Data log-likelihood at a given linear predictor. eta is clamped at +-35
// inside the exponentials only. Returns -inf for zero-probability states;
// NaN never escapes (callers check).
double ll_eta(const ModelSpec& spec, const Eigen::VectorXd& eta,
              const Eigen::VectorXd& theta, double lgamma_const) {
  switch (spec.family) {
    case Family::kBinary:
      return (spec.z.array() * eta.array()).sum() -
             (eta.array().max(0.0) +
              (-eta.array().abs()).exp().unaryExpr(
                  [](double v) { return std::log1p(v); }))
                 .sum();
    case Family::kCount:
    case Family::kSvc:
      return (spec.z.array() * eta.array()).sum() -
             eta.array().min(kEtaClamp).exp().sum() - lgamma_const;
    case Family::kOrdinal: {
      if (!theta.allFinite()) return kNegInf;
      double ll = 0.0;
      const int j_max = spec.ordinal_categories;
      for (int i = 0; i < eta.size(); ++i) {
        ll += log_ordinal_prob(theta, eta[i], static_cast<int>(spec.z[i]),
                               j_max);
        if (ll == kNegInf) return kNegInf;
      }
      return ll;
    }
  }
  return kNegInf;
}

// eta = ef + ew (+ x1 .* eb for svc). Shared by the cached sampler loop and
// the standalone block updates so both produce bitwise-equal predictors.
Eigen::VectorXd assemble_parts(const ModelSpec& spec, const Eigen::VectorXd& ef,
                               const Eigen::VectorXd& ew,
                               const Eigen::VectorXd& eb) {
  Eigen::VectorXd eta = ef + ew;
  if (spec.family == Family::kSvc)
    eta.array() += spec.x.col(0).array() * eb.array();
  return eta;
}

double quad_form(const Eigen::VectorXd& v, const Eigen::MatrixXd& m) {
  return v.dot(m * v);
}

// One uniform is always consumed, keeping replayed streams aligned whether
// or not the proposal was viable.
bool mh_accept(double ll_prop, double ll_cur, double dprior, Rng& rng) {
  const double u = rng.uniform();
  if (std::isnan(ll_prop))
    throw std::runtime_error("mh_accept: proposal log-likelihood is NaN");
  if (ll_prop == kNegInf) return false;
  if (ll_cur == kNegInf) return true;
  const double log_acc = ll_prop - ll_cur + dprior;
  if (std::isnan(log_acc)) return false;
  return std::log(u) < log_acc;
}

Eigen::VectorXd theta_of(const ChainState& state, const ModelSpec& spec) {
  if (spec.family != Family::kOrdinal) return Eigen::VectorXd();
  return cutpoints_from_free(state.alpha);
}

}  // namespace

Eigen::VectorXd ModelSpec::prior_mean() const {
  if (beta_mean.size() > 0) return beta_mean;
  return Eigen::VectorXd::Zero(covariates());
}

Eigen::MatrixXd ModelSpec::prior_cov() const {
  if (beta_cov.size() > 0) return beta_cov;
  return 100.0 * Eigen::MatrixXd::Identity(covariates(), covariates());
}

void ModelSpec::validate() const {
  std::vector<std::string> problems;
  const int n = size();
  const int k = covariates();
  const int p = rank();
  if (z.size() != n) problems.push_back("z length differs from design rows");
  if (basis.rows() != n) problems.push_back("basis rows differ from design rows");
  if (kernel.rows() != p || kernel.cols() != p)
    problems.push_back("kernel is not p x p for the basis rank");
  if (p > 0) {
    if (!kernel.isApprox(kernel.transpose(), 1e-8))
      problems.push_back("kernel is not symmetric");
    else if (Eigen::LLT<Eigen::MatrixXd>(kernel).info() != Eigen::Success)
      problems.push_back("kernel is not positive definite");
  }
  if (beta_cov.size() > 0) {
    if (beta_cov.rows() != k || beta_cov.cols() != k)
      problems.push_back("beta prior covariance is not k x k");
    else if (Eigen::LLT<Eigen::MatrixXd>(beta_cov).info() != Eigen::Success)
      problems.push_back("beta prior covariance is not positive definite");
  }
  if (beta_mean.size() > 0 && beta_mean.size() != k)
    problems.push_back("beta prior mean length differs from k");
  if (!(tau_shape > 0.0) || !(tau_rate > 0.0))
    problems.push_back("tau prior shape and rate must be positive");
  if (family == Family::kSvc && (!(tau2_shape > 0.0) || !(tau2_rate > 0.0)))
    problems.push_back("second-field prior shape and rate must be positive");
  if (family == Family::kSvc && k < 1)
    problems.push_back("svc needs at least one covariate");

  if (z.size() == n) {
    switch (family) {
      case Family::kBinary:
        for (int i = 0; i < n; ++i)
          if (z[i] != 0.0 && z[i] != 1.0) {
            problems.push_back("binary responses must be 0/1");
            break;
          }
        break;
      case Family::kCount:
      case Family::kSvc:
        for (int i = 0; i < n; ++i)
          if (z[i] < 0.0 || z[i] != std::floor(z[i])) {
            problems.push_back("count responses must be nonnegative integers");
            break;
          }
        break;
      case Family::kOrdinal: {
        if (ordinal_categories < 2) {
          problems.push_back("ordinal model needs at least 2 categories");
          break;
        }
        std::vector<int> counts(ordinal_categories, 0);
        bool in_range = true;
        for (int i = 0; i < n; ++i) {
          const int zi = static_cast<int>(z[i]);
          if (zi < 1 || zi > ordinal_categories || z[i] != zi) {
            in_range = false;
            break;
          }
          ++counts[zi - 1];
        }
        if (!in_range) {
          problems.push_back("ordinal responses must be integers in 1..J");
        } else {
          // The flat cutpoint prior is proper only when every category
          // appears.
          std::string missing;
          for (int j = 0; j < ordinal_categories; ++j)
            if (counts[j] == 0)
              missing += (missing.empty() ? "" : ", ") + std::to_string(j + 1);
          if (!missing.empty())
            problems.push_back("ordinal categories never observed: " + missing);
        }
        break;
      }
    }
  }

  if (!problems.empty()) {
    std::string msg = "invalid model spec:";
    for (const auto& s : problems) msg += "\n  - " + s;
    throw std::invalid_argument(msg);
  }
}

double loglik(const ModelSpec& spec, const ChainState& state) {
  Eigen::VectorXd ew = spec.basis * state.delta;
  Eigen::VectorXd eb;
  if (spec.family == Family::kSvc) eb = spec.basis * state.delta2;
  Eigen::VectorXd ef = spec.x * state.beta;
  const Eigen::VectorXd eta = assemble_parts(spec, ef, ew, eb);
  const Eigen::VectorXd theta = theta_of(state, spec);

  // Per-site scan so an error can name the offending observation.
  double ll = 0.0;
  for (int i = 0; i < eta.size(); ++i) {
    double term;
    switch (spec.family) {
      case Family::kBinary:
        term = spec.z[i] * eta[i] - softplus(eta[i]);
        break;
      case Family::kCount:
      case Family::kSvc:
        term = spec.z[i] * eta[i] - std::exp(std::min(eta[i], kEtaClamp)) -
               std::lgamma(spec.z[i] + 1.0);
        break;
      case Family::kOrdinal:
        term = log_ordinal_prob(theta, eta[i], static_cast<int>(spec.z[i]),
                                spec.ordinal_categories);
        break;
      default:
        term = kNegInf;
    }
    if (!std::isfinite(term))
      throw std::runtime_error("loglik: non-finite contribution at observation " +
                               std::to_string(i));
    ll += term;
  }
  return ll;
}

double gibbs_tau(const Eigen::Ref<const Eigen::VectorXd>& delta,
                 const Eigen::Ref<const Eigen::MatrixXd>& kernel, double shape,
                 double rate, Rng& rng) {
  const Eigen::VectorXd d = delta;
  const double quad = quad_form(d, kernel);
  return rng.gamma(shape + 0.5 * static_cast<double>(d.size()),
                   rate + 0.5 * quad);
}

bool mh_beta(ChainState& state,
             const Eigen::Ref<const Eigen::MatrixXd>& proposal_chol,
             double scale, const ModelSpec& spec, Rng& rng) {
  const int k = static_cast<int>(state.beta.size());
  Eigen::VectorXd u(k);
  for (int i = 0; i < k; ++i) u[i] = rng.normal();
  const Eigen::VectorXd prop = state.beta + scale * (proposal_chol * u);

  Eigen::VectorXd ew = spec.basis * state.delta;
  Eigen::VectorXd eb;
  if (spec.family == Family::kSvc) eb = spec.basis * state.delta2;
  const Eigen::VectorXd theta = theta_of(state, spec);
  Eigen::VectorXd ef = spec.x * state.beta;
  const double ll_cur =
      ll_eta(spec, assemble_parts(spec, ef, ew, eb), theta, 0.0);
  ef = spec.x * prop;
  const double ll_prop =
      ll_eta(spec, assemble_parts(spec, ef, ew, eb), theta, 0.0);

  const Eigen::VectorXd mu = spec.prior_mean();
  const Eigen::MatrixXd prec = spec.prior_cov().llt().solve(
      Eigen::MatrixXd::Identity(k, k));
  const double dprior = -0.5 * (quad_form(prop - mu, prec) -
                                quad_form(state.beta - mu, prec));
  if (mh_accept(ll_prop, ll_cur, dprior, rng)) {
    state.beta = prop;
    return true;
  }
  return false;
}

bool mh_delta(ChainState& state, double step_scale, const ModelSpec& spec,
              Rng& rng, int which) {
  Eigen::VectorXd& target = which == 0 ? state.delta : state.delta2;
  const double tau_block = which == 0 ? state.tau : state.tau2;
  const int p = static_cast<int>(target.size());
  Eigen::VectorXd u(p);
  for (int i = 0; i < p; ++i) u[i] = rng.normal();
  const Eigen::VectorXd prop = target + step_scale * u;

  const Eigen::VectorXd theta = theta_of(state, spec);
  const Eigen::VectorXd ef = spec.x * state.beta;
  Eigen::VectorXd ew = spec.basis * state.delta;
  Eigen::VectorXd eb;
  if (spec.family == Family::kSvc) eb = spec.basis * state.delta2;
  const double ll_cur =
      ll_eta(spec, assemble_parts(spec, ef, ew, eb), theta, 0.0);
  if (which == 0)
    ew = spec.basis * prop;
  else
    eb = spec.basis * prop;
  const double ll_prop =
      ll_eta(spec, assemble_parts(spec, ef, ew, eb), theta, 0.0);

  const double dprior =
      -0.5 * tau_block *
      (quad_form(prop, spec.kernel) - quad_form(target, spec.kernel));
  if (mh_accept(ll_prop, ll_cur, dprior, rng)) {
    target = prop;
    return true;
  }
  return false;
}

bool mh_alpha(ChainState& state, int index, double step_scale,
              const ModelSpec& spec, Rng& rng) {
  const double step = step_scale * rng.normal();
  Eigen::VectorXd alpha_prop = state.alpha;
  alpha_prop[index] += step;

  const Eigen::VectorXd ef = spec.x * state.beta;
  const Eigen::VectorXd ew = spec.basis * state.delta;
  Eigen::VectorXd eb;
  const Eigen::VectorXd eta = assemble_parts(spec, ef, ew, eb);
  const double ll_cur = ll_eta(spec, eta, cutpoints_from_free(state.alpha), 0.0);
  const double ll_prop = ll_eta(spec, eta, cutpoints_from_free(alpha_prop), 0.0);
  // Flat prior on the free cutpoints.
  if (mh_accept(ll_prop, ll_cur, 0.0, rng)) {
    state.alpha = alpha_prop;
    return true;
  }
  return false;
}

McmcInit init_from_glm(const ModelSpec& spec) {
  const int n = spec.size();
  const int k = spec.covariates();
  const int p = spec.rank();
  McmcInit init;
  init.delta2 = Eigen::VectorXd();
  init.alpha = Eigen::VectorXd();

  if (spec.family == Family::kOrdinal) {
    Eigen::MatrixXd design(n, k + p);
    design.leftCols(k) = spec.x;
    design.rightCols(p) = spec.basis;
    GlmFit fit = cumlogit_fit(design, spec.z, spec.ordinal_categories);
    const int n_alpha = spec.ordinal_categories - 2;
    init.alpha = fit.coefficients.head(n_alpha);
    init.beta = fit.coefficients.segment(n_alpha, k);
    init.delta = fit.coefficients.tail(p);
    init.beta_proposal = fit.covariance.block(n_alpha, n_alpha, k, k);
  } else if (spec.family == Family::kSvc) {
    Eigen::MatrixXd design(n, k + 2 * p);
    design.leftCols(k) = spec.x;
    design.middleCols(k, p) = spec.basis;
    design.rightCols(p) =
        spec.basis.array().colwise() * spec.x.col(0).array();
    GlmFit fit = irls_fit(GlmFamily::kLog, design, spec.z);
    init.beta = fit.coefficients.head(k);
    init.delta = fit.coefficients.segment(k, p);
    init.delta2 = fit.coefficients.tail(p);
    init.beta_proposal = fit.covariance.topLeftCorner(k, k);
  } else {
    Eigen::MatrixXd design(n, k + p);
    design.leftCols(k) = spec.x;
    design.rightCols(p) = spec.basis;
    const GlmFamily fam = spec.family == Family::kBinary ? GlmFamily::kLogit
                                                         : GlmFamily::kLog;
    GlmFit fit = irls_fit(fam, design, spec.z);
    init.beta = fit.coefficients.head(k);
    init.delta = fit.coefficients.tail(p);
    init.beta_proposal = fit.covariance.topLeftCorner(k, k);
  }

  if (!init.beta.allFinite()) init.beta = Eigen::VectorXd::Zero(k);
  if (!init.delta.allFinite()) init.delta = Eigen::VectorXd::Zero(p);
  if (init.delta2.size() > 0 && !init.delta2.allFinite())
    init.delta2 = Eigen::VectorXd::Zero(p);
  if (!init.beta_proposal.allFinite())
    init.beta_proposal = Eigen::MatrixXd::Identity(k, k);
  for (int i = 0; i < k; ++i)
    init.beta_proposal(i, i) = std::max(init.beta_proposal(i, i), 1e-12);
  return init;
}

namespace {

// Robbins-Monro drift of a log proposal scale toward a target acceptance
// rate. Only called during burn-in.
void adapt_scale(double& log_scale, bool accepted, double target, int t) {
  const double gain = std::pow(static_cast<double>(t), -0.6);
  log_scale += gain * ((accepted ? 1.0 : 0.0) - target);
  log_scale = std::clamp(log_scale, std::log(1e-8), std::log(1e4));
}

class Sampler {
 public:
  Sampler(const ModelSpec& spec, const ChainConfig& cfg, const McmcInit& init)
      : spec_(spec),
        cfg_(cfg),
        rng_(Rng::derive(cfg.seed, "mcmc")),
        svc_(spec.family == Family::kSvc),
        ordinal_(spec.family == Family::kOrdinal) {
    const int k = spec_.covariates();
    st_.beta = init.beta;
    st_.delta = init.delta;
    st_.delta2 = svc_ ? init.delta2 : Eigen::VectorXd();
    st_.alpha = ordinal_ ? init.alpha : Eigen::VectorXd();
    st_.tau = 1.0;
    st_.tau2 = 1.0;

    beta_mu_ = spec_.prior_mean();
    beta_prec_ = spec_.prior_cov().llt().solve(Eigen::MatrixXd::Identity(k, k));
    Eigen::MatrixXd prop_cov = init.beta_proposal;
    for (int i = 0; i < k; ++i)
      prop_cov(i, i) = std::max(prop_cov(i, i), 1e-12);
    Eigen::LLT<Eigen::MatrixXd> llt(prop_cov);
    if (llt.info() == Eigen::Success) {
      prop_chol_ = llt.matrixL();
    } else {
      prop_chol_ = prop_cov.diagonal().array().abs().sqrt().matrix().asDiagonal();
    }

    lgamma_const_ = 0.0;
    if (spec_.family == Family::kCount || svc_)
      for (int i = 0; i < spec_.z.size(); ++i)
        lgamma_const_ += std::lgamma(spec_.z[i] + 1.0);

    ls_beta_ = std::log(cfg_.beta_scale);
    ls_delta_ = std::log(cfg_.delta_scale);
    ls_delta2_ = std::log(cfg_.delta_scale);
    if (ordinal_)
      ls_alpha_ = Eigen::VectorXd::Constant(st_.alpha.size(),
                                            std::log(cfg_.alpha_scale));
    refresh();
    if (std::isnan(cur_ll_) || cur_ll_ == kNegInf)
      throw std::runtime_error("run_chain: starting state has zero likelihood");
  }

  Chain run() {
    const int kept = (cfg_.iterations - cfg_.burn_in) / cfg_.thin;
    Chain chain;
    chain.family = spec_.family;
    chain.ordinal_categories = ordinal_ ? spec_.ordinal_categories : 0;
    chain.config = cfg_;
    chain.beta.resize(kept, st_.beta.size());
    chain.delta.resize(kept, st_.delta.size());
    chain.delta2.resize(kept, st_.delta2.size());
    chain.alpha.resize(kept, st_.alpha.size());
    chain.tau.resize(kept);
    chain.tau2.resize(svc_ ? kept : 0);
    chain.accept_alpha = Eigen::VectorXd::Zero(st_.alpha.size());

    long acc_beta = 0, acc_delta = 0, acc_delta2 = 0;
    Eigen::VectorXd acc_alpha = Eigen::VectorXd::Zero(st_.alpha.size());
    int stored = 0;

    const auto t0 = std::chrono::steady_clock::now();
    for (int it = 1; it <= cfg_.iterations; ++it) {
      try {
        const bool adapting = cfg_.adapt && it <= cfg_.burn_in;

        const bool a_beta = step_beta();
        if (adapting) adapt_scale(ls_beta_, a_beta, 0.234, it);

        const bool a_delta = step_delta(0);
        if (adapting) adapt_scale(ls_delta_, a_delta, 0.234, it);

        bool a_delta2 = false;
        if (svc_) {
          a_delta2 = step_delta(1);
          if (adapting) adapt_scale(ls_delta2_, a_delta2, 0.234, it);
        }

        st_.tau = gibbs_tau(st_.delta, spec_.kernel, spec_.tau_shape,
                            spec_.tau_rate, rng_);
        if (svc_)
          st_.tau2 = gibbs_tau(st_.delta2, spec_.kernel, spec_.tau2_shape,
                               spec_.tau2_rate, rng_);

        if (ordinal_) {
          for (int j = 0; j < st_.alpha.size(); ++j) {
            const bool a = step_alpha(j);
            if (adapting) adapt_scale(ls_alpha_[j], a, 0.44, it);
            if (it > cfg_.burn_in && a) acc_alpha[j] += 1.0;
          }
          check_monotone();
        }

        if (it > cfg_.burn_in) {
          acc_beta += a_beta;
          acc_delta += a_delta;
          acc_delta2 += a_delta2;
          if ((it - cfg_.burn_in) % cfg_.thin == 0 && stored < kept) {
            chain.beta.row(stored) = st_.beta.transpose();
            chain.delta.row(stored) = st_.delta.transpose();
            if (svc_) {
              chain.delta2.row(stored) = st_.delta2.transpose();
              chain.tau2[stored] = st_.tau2;
            }
            if (ordinal_) chain.alpha.row(stored) = st_.alpha.transpose();
            chain.tau[stored] = st_.tau;
            ++stored;
          }
        }

        if (it % 50000 == 0) refresh();
      } catch (const std::exception& e) {
        throw std::runtime_error("mcmc iteration " + std::to_string(it) + ": " +
                                 e.what());
      }
    }
    const auto t1 = std::chrono::steady_clock::now();

    const double denom = cfg_.iterations - cfg_.burn_in;
    chain.accept_beta = acc_beta / denom;
    chain.accept_delta = acc_delta / denom;
    chain.accept_delta2 = svc_ ? acc_delta2 / denom : 0.0;
    chain.accept_alpha = acc_alpha / denom;
    chain.beta_scale_final = std::exp(ls_beta_);
    chain.delta_scale_final = std::exp(ls_delta_);
    chain.delta2_scale_final = svc_ ? std::exp(ls_delta2_) : 0.0;
    chain.alpha_scale_final = ls_alpha_.array().exp();
    chain.wall_seconds =
        std::chrono::duration<double>(t1 - t0).count();
    return chain;
  }

 private:
  void refresh() {
    ef_ = spec_.x * st_.beta;
    ew_ = spec_.basis * st_.delta;
    if (svc_) eb_ = spec_.basis * st_.delta2;
    eta_ = assemble_parts(spec_, ef_, ew_, eb_);
    theta_ = theta_of(st_, spec_);
    cur_ll_ = ll_eta(spec_, eta_, theta_, lgamma_const_);
  }

  bool step_beta() {
    const int k = static_cast<int>(st_.beta.size());
    Eigen::VectorXd u(k);
    for (int i = 0; i < k; ++i) u[i] = rng_.normal();
    const double scale = std::exp(ls_beta_);
    const Eigen::VectorXd prop = st_.beta + scale * (prop_chol_ * u);
    Eigen::VectorXd ef_prop = spec_.x * prop;
    Eigen::VectorXd eta_prop = assemble_parts(spec_, ef_prop, ew_, eb_);
    const double ll_prop = ll_eta(spec_, eta_prop, theta_, lgamma_const_);
    const double dprior = -0.5 * (quad_form(prop - beta_mu_, beta_prec_) -
                                  quad_form(st_.beta - beta_mu_, beta_prec_));
    if (mh_accept(ll_prop, cur_ll_, dprior, rng_)) {
      st_.beta = prop;
      ef_.swap(ef_prop);
      eta_.swap(eta_prop);
      cur_ll_ = ll_prop;
      return true;
    }
    return false;
  }

  bool step_delta(int which) {
    Eigen::VectorXd& target = which == 0 ? st_.delta : st_.delta2;
    const double tau_block = which == 0 ? st_.tau : st_.tau2;
    const double scale = std::exp(which == 0 ? ls_delta_ : ls_delta2_);
    const int p = static_cast<int>(target.size());
    Eigen::VectorXd u(p);
    for (int i = 0; i < p; ++i) u[i] = rng_.normal();
    const Eigen::VectorXd prop = target + scale * u;

    Eigen::VectorXd part_prop = spec_.basis * prop;
    Eigen::VectorXd eta_prop =
        which == 0 ? assemble_parts(spec_, ef_, part_prop, eb_)
                   : assemble_parts(spec_, ef_, ew_, part_prop);
    const double ll_prop = ll_eta(spec_, eta_prop, theta_, lgamma_const_);
    const double dprior =
        -0.5 * tau_block *
        (quad_form(prop, spec_.kernel) - quad_form(target, spec_.kernel));
    if (mh_accept(ll_prop, cur_ll_, dprior, rng_)) {
      target = prop;
      if (which == 0)
        ew_.swap(part_prop);
      else
        eb_.swap(part_prop);
      eta_.swap(eta_prop);
      cur_ll_ = ll_prop;
      return true;
    }
    return false;
  }

  bool step_alpha(int index) {
    const double scale = std::exp(ls_alpha_[index]);
    const double step = scale * rng_.normal();
    Eigen::VectorXd alpha_prop = st_.alpha;
    alpha_prop[index] += step;
    Eigen::VectorXd theta_prop = cutpoints_from_free(alpha_prop);
    const double ll_prop = ll_eta(spec_, eta_, theta_prop, lgamma_const_);
    if (mh_accept(ll_prop, cur_ll_, 0.0, rng_)) {
      st_.alpha = alpha_prop;
      theta_.swap(theta_prop);
      cur_ll_ = ll_prop;
      return true;
    }
    return false;
  }

  void check_monotone() const {
    // theta[0] = 0 and strict increase are structural; violation means a
    // numerical fault, so fail loudly.
    if (theta_.size() == 0 || theta_[0] != 0.0)
      throw std::logic_error("ordinal cutpoints lost their anchor");
    for (int j = 1; j < theta_.size(); ++j)
      if (!(theta_[j] > theta_[j - 1]))
        throw std::logic_error("ordinal cutpoints are not increasing");
  }

  const ModelSpec& spec_;
  ChainConfig cfg_;
  Rng rng_;
  bool svc_ = false;
  bool ordinal_ = false;
  ChainState st_;
  Eigen::VectorXd ef_, ew_, eb_, eta_, theta_;
  double cur_ll_ = 0.0;
  Eigen::VectorXd beta_mu_;
  Eigen::MatrixXd beta_prec_;
  Eigen::MatrixXd prop_chol_;
  double lgamma_const_ = 0.0;
  double ls_beta_ = 0.0, ls_delta_ = 0.0, ls_delta2_ = 0.0;
  Eigen::VectorXd ls_alpha_;
};

void validate_config(const ModelSpec& spec, const ChainConfig& cfg,
                     const McmcInit& init) {
  std::vector<std::string> problems;
  if (cfg.burn_in < 0) problems.push_back("burn_in must be >= 0");
  if (cfg.iterations <= cfg.burn_in)
    problems.push_back("iterations must exceed burn_in");
  if (cfg.thin < 1) problems.push_back("thin must be >= 1");
  if (cfg.iterations - cfg.burn_in < cfg.thin)
    problems.push_back("no draws would be stored after burn-in and thinning");
  if (!(cfg.beta_scale > 0.0) || !(cfg.delta_scale > 0.0) ||
      !(cfg.alpha_scale > 0.0))
    problems.push_back("proposal scales must be positive");
  const int k = spec.covariates();
  const int p = spec.rank();
  if (init.beta.size() != k) problems.push_back("init beta has wrong length");
  if (init.delta.size() != p) problems.push_back("init delta has wrong length");
  if (spec.family == Family::kSvc && init.delta2.size() != p)
    problems.push_back("init delta2 has wrong length");
  if (spec.family == Family::kOrdinal &&
      init.alpha.size() != spec.ordinal_categories - 2)
    problems.push_back("init alpha has wrong length");
  if (init.beta_proposal.rows() != k || init.beta_proposal.cols() != k)
    problems.push_back("beta proposal covariance is not k x k");
  if (!problems.empty()) {
    std::string msg = "invalid chain config:";
    for (const auto& s : problems) msg += "\n  - " + s;
    throw std::invalid_argument(msg);
  }
}

}  // namespace

Chain run_chain(const ModelSpec& spec, const ChainConfig& config,
                const McmcInit& init) {
  spec.validate();
  validate_config(spec, config, init);
  Sampler sampler(spec, config, init);
  return sampler.run();
}

Chain run_chain(const ModelSpec& spec, const ChainConfig& config) {
  spec.validate();
  return run_chain(spec, config, init_from_glm(spec));
}

double ess(const Eigen::Ref<const Eigen::VectorXd>& draws) {
  const int n = static_cast<int>(draws.size());
  if (n < 100) throw std::invalid_argument("ess: need at least 100 draws");
  const double mean = draws.mean();
  Eigen::VectorXd centered = draws.array() - mean;
  const double c0 = centered.squaredNorm() / n;
  if (!(c0 > 0.0) || !std::isfinite(c0)) return 1.0;

  auto autocov = [&](int lag) {
    return centered.head(n - lag).dot(centered.tail(n - lag)) / n;
  };

  // Initial monotone positive sequence over pair sums of autocovariances.
  double sum = 0.0;
  double prev = std::numeric_limits<double>::infinity();
  for (int j = 0; 2 * j + 1 < n; ++j) {
    double gamma = autocov(2 * j) + autocov(2 * j + 1);
    if (gamma <= 0.0) break;
    gamma = std::min(gamma, prev);
    prev = gamma;
    sum += gamma;
  }
  double sigma2 = 2.0 * sum - c0;
  if (!(sigma2 > 0.0)) sigma2 = c0;
  return std::max(1.0, n * c0 / sigma2);
}

namespace {

void write_block_csv(const std::string& path, const Chain& chain,
                     const Eigen::MatrixXd& block,
                     const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "iteration";
  for (const auto& s : names) out << ',' << s;
  out << '\n';
  for (int s = 0; s < block.rows(); ++s) {
    out << chain.iteration_of(s);
    for (int j = 0; j < block.cols(); ++j) out << ',' << fmt_g17(block(s, j));
    out << '\n';
  }
}

std::string chain_config_hash(const Chain& chain) {
  std::ostringstream os;
  os << to_string(chain.family) << '|' << chain.beta.cols() << '|'
     << chain.delta.cols() << '|' << chain.ordinal_categories << '|'
     << chain.config.iterations << '|' << chain.config.burn_in << '|'
     << chain.config.thin << '|' << chain.config.seed << '|'
     << chain.config.adapt << '|' << fmt_g17(chain.config.beta_scale) << '|'
     << fmt_g17(chain.config.delta_scale) << '|'
     << fmt_g17(chain.config.alpha_scale);
  return sha256_hex(os.str());
}

std::vector<std::string> numbered(const std::string& stem, int count,
                                  int start = 1) {
  std::vector<std::string> names;
  names.reserve(count);
  for (int i = 0; i < count; ++i)
    names.push_back(stem + std::to_string(start + i));
  return names;
}

Eigen::MatrixXd read_block_csv(const std::string& path, int rows, int cols) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty chain file " + path);
  Eigen::MatrixXd block(rows, cols);
  for (int s = 0; s < rows; ++s) {
    if (!std::getline(in, line))
      throw std::runtime_error("truncated chain file " + path);
    std::stringstream ss(line);
    std::string cell;
    if (!std::getline(ss, cell, ','))
      throw std::runtime_error("bad row in " + path);
    for (int j = 0; j < cols; ++j) {
      if (!std::getline(ss, cell, ','))
        throw std::runtime_error("short row in " + path);
      block(s, j) = std::stod(cell);
    }
  }
  return block;
}

}  // namespace

void save_chain(const Chain& chain, const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  const fs::path dir(directory);

  write_block_csv(dir / "beta.csv", chain, chain.beta,
                  numbered("beta", static_cast<int>(chain.beta.cols())));
  write_block_csv(dir / "delta.csv", chain, chain.delta,
                  numbered("delta", static_cast<int>(chain.delta.cols())));
  if (chain.delta2.cols() > 0)
    write_block_csv(dir / "delta2.csv", chain, chain.delta2,
                    numbered("delta2_", static_cast<int>(chain.delta2.cols())));
  if (chain.alpha.cols() > 0)
    write_block_csv(dir / "alpha.csv", chain, chain.alpha,
                    numbered("alpha", static_cast<int>(chain.alpha.cols()), 2));

  {
    std::ofstream out(dir / "tau.csv");
    if (!out) throw std::runtime_error("cannot write tau.csv");
    out << "iteration,tau";
    if (chain.tau2.size() > 0) out << ",tau2";
    out << '\n';
    for (int s = 0; s < chain.tau.size(); ++s) {
      out << chain.iteration_of(s) << ',' << fmt_g17(chain.tau[s]);
      if (chain.tau2.size() > 0) out << ',' << fmt_g17(chain.tau2[s]);
      out << '\n';
    }
  }

  nlohmann::json j;
  j["family"] = to_string(chain.family);
  j["ordinal_categories"] = chain.ordinal_categories;
  j["seed"] = chain.config.seed;
  j["iterations"] = chain.config.iterations;
  j["burn_in"] = chain.config.burn_in;
  j["thin"] = chain.config.thin;
  j["adapt"] = chain.config.adapt;
  j["kept"] = chain.kept();
  j["covariates"] = chain.beta.cols();
  j["rank"] = chain.delta.cols();
  j["config_hash"] = chain_config_hash(chain);
  j["wall_seconds"] = chain.wall_seconds;
  j["initial_scales"] = {{"beta", chain.config.beta_scale},
                         {"delta", chain.config.delta_scale},
                         {"alpha", chain.config.alpha_scale}};
  j["acceptance"] = {{"beta", chain.accept_beta},
                     {"delta", chain.accept_delta}};
  if (chain.delta2.cols() > 0) j["acceptance"]["delta2"] = chain.accept_delta2;
  if (chain.alpha.cols() > 0)
    j["acceptance"]["alpha"] = std::vector<double>(
        chain.accept_alpha.data(),
        chain.accept_alpha.data() + chain.accept_alpha.size());
  j["final_scales"] = {{"beta", chain.beta_scale_final},
                       {"delta", chain.delta_scale_final}};
  if (chain.delta2.cols() > 0)
    j["final_scales"]["delta2"] = chain.delta2_scale_final;
  if (chain.alpha_scale_final.size() > 0)
    j["final_scales"]["alpha"] = std::vector<double>(
        chain.alpha_scale_final.data(),
        chain.alpha_scale_final.data() + chain.alpha_scale_final.size());

  if (chain.kept() >= 100) {
    std::vector<double> beta_ess, beta_es_sec;
    for (int c = 0; c < chain.beta.cols(); ++c) {
      const double e = ess(chain.beta.col(c));
      beta_ess.push_back(e);
      beta_es_sec.push_back(chain.wall_seconds > 0.0 ? e / chain.wall_seconds
                                                     : 0.0);
    }
    const double tau_ess = ess(chain.tau);
    j["ess"] = {{"beta", beta_ess}, {"tau", tau_ess}};
    j["es_per_sec"] = {{"beta", beta_es_sec},
                       {"tau", chain.wall_seconds > 0.0
                                   ? tau_ess / chain.wall_seconds
                                   : 0.0}};
  }

  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest.json");
  out << j.dump(2) << '\n';
}

Chain load_chain(const std::string& directory) {
  namespace fs = std::filesystem;
  const fs::path dir(directory);
  std::ifstream in(dir / "manifest.json");
  if (!in)
    throw std::runtime_error("cannot read manifest.json in " + directory);
  nlohmann::json j;
  in >> j;

  Chain chain;
  chain.family = family_from_string(j.at("family").get<std::string>());
  chain.ordinal_categories = j.at("ordinal_categories").get<int>();
  chain.config.seed = j.at("seed").get<std::uint64_t>();
  chain.config.iterations = j.at("iterations").get<int>();
  chain.config.burn_in = j.at("burn_in").get<int>();
  chain.config.thin = j.at("thin").get<int>();
  chain.config.adapt = j.at("adapt").get<bool>();
  if (j.contains("initial_scales")) {
    chain.config.beta_scale = j["initial_scales"].value("beta", 1.0);
    chain.config.delta_scale = j["initial_scales"].value("delta", 0.05);
    chain.config.alpha_scale = j["initial_scales"].value("alpha", 0.1);
  }
  chain.wall_seconds = j.value("wall_seconds", 0.0);
  const int kept = j.at("kept").get<int>();
  const int k = j.at("covariates").get<int>();
  const int p = j.at("rank").get<int>();

  chain.beta = read_block_csv(dir / "beta.csv", kept, k);
  chain.delta = read_block_csv(dir / "delta.csv", kept, p);
  const bool svc = chain.family == Family::kSvc;
  chain.delta2 = svc ? read_block_csv(dir / "delta2.csv", kept, p)
                     : Eigen::MatrixXd(kept, 0);
  const int n_alpha =
      chain.family == Family::kOrdinal ? chain.ordinal_categories - 2 : 0;
  chain.alpha = n_alpha > 0 ? read_block_csv(dir / "alpha.csv", kept, n_alpha)
                            : Eigen::MatrixXd(kept, 0);
  Eigen::MatrixXd tau_block =
      read_block_csv(dir / "tau.csv", kept, svc ? 2 : 1);
  chain.tau = tau_block.col(0);
  chain.tau2 = svc ? Eigen::VectorXd(tau_block.col(1)) : Eigen::VectorXd();

  const auto& acc = j.at("acceptance");
  chain.accept_beta = acc.value("beta", 0.0);
  chain.accept_delta = acc.value("delta", 0.0);
  chain.accept_delta2 = acc.value("delta2", 0.0);
  chain.accept_alpha = Eigen::VectorXd::Zero(n_alpha);
  if (acc.contains("alpha")) {
    const auto v = acc["alpha"].get<std::vector<double>>();
    chain.accept_alpha =
        Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
  }
  const auto& scales = j.at("final_scales");
  chain.beta_scale_final = scales.value("beta", 0.0);
  chain.delta_scale_final = scales.value("delta", 0.0);
  chain.delta2_scale_final = scales.value("delta2", 0.0);
  chain.alpha_scale_final = Eigen::VectorXd::Zero(n_alpha);
  if (scales.contains("alpha")) {
    const auto v = scales["alpha"].get<std::vector<double>>();
    chain.alpha_scale_final =
        Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
  }
  return chain;
}

}  // namespace picar
