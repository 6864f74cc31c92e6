#include "picar/glm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace picar {

namespace {

constexpr double kEtaClamp = 35.0;

double softplus(double x) {
  // log(1 + e^x) without overflow
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double logistic(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double glm_loglik(GlmFamily family, const Eigen::VectorXd& eta,
                  const Eigen::VectorXd& z) {
  double ll = 0.0;
  if (family == GlmFamily::kLogit) {
    for (int i = 0; i < eta.size(); ++i)
      ll += z[i] * eta[i] - softplus(eta[i]);
  } else {
    for (int i = 0; i < eta.size(); ++i)
      ll += z[i] * eta[i] - std::exp(std::min(eta[i], kEtaClamp));
  }
  return ll;
}

}  // namespace

GlmFit irls_fit(GlmFamily family, const Eigen::Ref<const Eigen::MatrixXd>& x,
                const Eigen::Ref<const Eigen::VectorXd>& z, int max_iter,
                double tol) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  if (z.size() != n) throw std::invalid_argument("irls_fit: size mismatch");
  if (family == GlmFamily::kLogit) {
    for (int i = 0; i < n; ++i)
      if (z[i] != 0.0 && z[i] != 1.0)
        throw std::invalid_argument("irls_fit: binary responses must be 0/1");
  } else {
    for (int i = 0; i < n; ++i)
      if (z[i] < 0.0 || z[i] != std::floor(z[i]))
        throw std::invalid_argument(
            "irls_fit: count responses must be nonnegative integers");
  }

  GlmFit fit;
  fit.coefficients = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  double ll = glm_loglik(family, eta, z);

  Eigen::VectorXd mu(n), wdiag(n), grad(p), step(p);
  Eigen::MatrixXd info(p, p);
  bool ridged = false;

  int it = 0;
  for (; it < max_iter; ++it) {
    if (family == GlmFamily::kLogit) {
      for (int i = 0; i < n; ++i) {
        mu[i] = logistic(eta[i]);
        wdiag[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-12);
      }
    } else {
      for (int i = 0; i < n; ++i) {
        mu[i] = std::exp(std::min(eta[i], kEtaClamp));
        wdiag[i] = std::max(mu[i], 1e-12);
      }
    }
    grad.noalias() = x.transpose() * (z - mu);
    info.noalias() = x.transpose() * wdiag.asDiagonal() * x;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    step = ldlt.solve(grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      // Rank-deficient normal equations: retry with a small ridge.
      info.diagonal().array() += 1e-8;
      ridged = true;
      ldlt.compute(info);
      step = ldlt.solve(grad);
      if (!step.allFinite()) break;
    }

    // Step-halving keeps the log-likelihood monotone.
    double scale = 1.0;
    double ll_new = ll;
    Eigen::VectorXd eta_new;
    bool improved = false;
    for (int half = 0; half < 40; ++half) {
      eta_new = eta + scale * (x * step);
      ll_new = glm_loglik(family, eta_new, z);
      if (std::isfinite(ll_new) && ll_new >= ll - 1e-12 * (1.0 + std::abs(ll))) {
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;
    fit.coefficients += scale * step;
    eta = eta_new;
    const double delta = std::abs(ll_new - ll);
    ll = ll_new;
    if (delta <= tol * (std::abs(ll) + 1.0) && grad.lpNorm<Eigen::Infinity>() <= 1e-6) {
      fit.converged = true;
      ++it;
      break;
    }
  }

  fit.iterations = it;
  fit.loglik = ll;
  fit.deviance = -2.0 * ll;
  if (!fit.coefficients.allFinite()) fit.converged = false;

  // Asymptotic covariance at the final iterate.
  if (family == GlmFamily::kLogit) {
    for (int i = 0; i < n; ++i) {
      const double m = logistic(eta[i]);
      wdiag[i] = std::max(m * (1.0 - m), 1e-12);
    }
  } else {
    for (int i = 0; i < n; ++i)
      wdiag[i] = std::max(std::exp(std::min(eta[i], kEtaClamp)), 1e-12);
  }
  info.noalias() = x.transpose() * wdiag.asDiagonal() * x;
  if (ridged) info.diagonal().array() += 1e-8;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  fit.covariance = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  if (!fit.covariance.allFinite()) {
    info.diagonal().array() += 1e-8;
    fit.covariance =
        Eigen::LDLT<Eigen::MatrixXd>(info).solve(Eigen::MatrixXd::Identity(p, p));
  }
  return fit;
}

Eigen::VectorXd cutpoints_from_free(
    const Eigen::Ref<const Eigen::VectorXd>& alpha) {
  Eigen::VectorXd theta(alpha.size() + 1);
  theta[0] = 0.0;
  for (int j = 0; j < alpha.size(); ++j)
    theta[j + 1] = theta[j] + std::exp(alpha[j]);
  return theta;
}

double cumlogit_loglik(const Eigen::Ref<const Eigen::MatrixXd>& x,
                       const Eigen::Ref<const Eigen::VectorXd>& z,
                       int categories,
                       const Eigen::Ref<const Eigen::VectorXd>& params,
                       Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
  const int n = static_cast<int>(x.rows());
  const int k = static_cast<int>(x.cols());
  const int j_max = categories;
  const int n_alpha = j_max - 2;
  const int n_cut = j_max - 1;
  const int dim = n_alpha + k;
  if (params.size() != dim)
    throw std::invalid_argument("cumlogit_loglik: parameter size mismatch");

  const Eigen::VectorXd alpha = params.head(n_alpha);
  const Eigen::VectorXd beta = params.tail(k);
  const Eigen::VectorXd theta = cutpoints_from_free(alpha);
  const Eigen::VectorXd eta = x * beta;

  double ll = 0.0;
  // Accumulators in (theta, eta) space; mapped to alpha at the end.
  Eigen::VectorXd g_theta = Eigen::VectorXd::Zero(n_cut);
  Eigen::VectorXd g_eta_w = Eigen::VectorXd::Zero(n);  // per-obs d ll / d eta
  Eigen::MatrixXd h_theta = Eigen::MatrixXd::Zero(n_cut, n_cut);
  Eigen::MatrixXd s_cross;  // per-obs theta rows of the mixed block
  Eigen::VectorXd c_eta = Eigen::VectorXd::Zero(n);    // d2 ll / d eta2
  if (hess) s_cross = Eigen::MatrixXd::Zero(n, n_cut);

  for (int i = 0; i < n; ++i) {
    const int zi = static_cast<int>(z[i]);
    if (zi < 1 || zi > j_max || z[i] != zi)
      throw std::invalid_argument("cumlogit_loglik: responses must be 1..J");
    // Involved cutpoint indices (1-based): zi-1 and zi, clipped to [1, J-1].
    const double e = eta[i];
    double gval[2] = {0.0, 0.0};  // d ll / d u for lower, upper cut
    double hval[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
    int idx[2] = {-1, -1};

    if (zi == 1) {
      const double u = theta[0] - e;
      ll += -softplus(-u);
      const double gamma = logistic(u);
      idx[1] = 0;
      gval[1] = 1.0 - gamma;
      hval[1][1] = -gamma * (1.0 - gamma);
    } else if (zi == j_max) {
      const double u = theta[n_cut - 1] - e;
      ll += -softplus(u);
      const double gamma = logistic(u);
      idx[0] = n_cut - 1;
      gval[0] = -gamma;
      hval[0][0] = -gamma * (1.0 - gamma);
    } else {
      const double ua = theta[zi - 1] - e;  // upper cut
      const double ub = theta[zi - 2] - e;  // lower cut
      const double diff = ua - ub;          // > 0 by monotonicity
      const double lp = ua + std::log1p(-std::exp(-diff)) - softplus(ua) -
                        softplus(ub);
      if (!std::isfinite(lp)) {
        std::ostringstream msg;
        msg << "cumlogit_loglik: zero category probability at row " << i;
        throw std::runtime_error(msg.str());
      }
      ll += lp;
      const double ga = logistic(ua), gb = logistic(ub);
      const double pa = ga * (1.0 - ga), pb = gb * (1.0 - gb);
      const double pi = ga - gb;
      idx[0] = zi - 2;
      idx[1] = zi - 1;
      gval[0] = -pb / pi;
      gval[1] = pa / pi;
      hval[1][1] = pa * (1.0 - 2.0 * ga) / pi - (pa / pi) * (pa / pi);
      hval[0][0] = -pb * (1.0 - 2.0 * gb) / pi - (pb / pi) * (pb / pi);
      hval[0][1] = hval[1][0] = pa * pb / (pi * pi);
    }

    double gsum = 0.0, csum = 0.0;
    for (int a = 0; a < 2; ++a) {
      if (idx[a] < 0) continue;
      g_theta[idx[a]] += gval[a];
      gsum += gval[a];
      double row = 0.0;
      for (int b = 0; b < 2; ++b) {
        if (idx[b] < 0) continue;
        if (hess) h_theta(idx[a], idx[b]) += hval[a][b];
        row += hval[a][b];
      }
      if (hess) s_cross(i, idx[a]) = row;
      csum += row;
    }
    g_eta_w[i] = gsum;
    c_eta[i] = csum;
  }

  // u = theta - eta, so d u / d beta = -x.
  if (grad) {
    grad->resize(dim);
    // theta_a depends on alpha_l (l <= a, both over free entries).
    for (int l = 0; l < n_alpha; ++l) {
      double acc = 0.0;
      for (int a = l + 1; a < n_cut; ++a) acc += g_theta[a];
      (*grad)[l] = std::exp(alpha[l]) * acc;
    }
    grad->tail(k) = -x.transpose() * g_eta_w;
  }
  if (hess) {
    hess->setZero(dim, dim);
    // Jacobian of theta (rows, cut index) in alpha (cols): e^{alpha_l} for l < a.
    Eigen::MatrixXd t_jac = Eigen::MatrixXd::Zero(n_cut, n_alpha);
    for (int a = 1; a < n_cut; ++a)
      for (int l = 0; l < a; ++l) t_jac(a, l) = std::exp(alpha[l]);
    hess->topLeftCorner(n_alpha, n_alpha) =
        t_jac.transpose() * h_theta * t_jac;
    // Curvature of the theta(alpha) map.
    for (int l = 0; l < n_alpha; ++l) {
      double acc = 0.0;
      for (int a = l + 1; a < n_cut; ++a) acc += g_theta[a];
      (*hess)(l, l) += std::exp(alpha[l]) * acc;
    }
    Eigen::MatrixXd cross = -(s_cross * t_jac).transpose() * x;  // alpha x beta
    hess->topRightCorner(n_alpha, k) = cross;
    hess->bottomLeftCorner(k, n_alpha) = cross.transpose();
    hess->bottomRightCorner(k, k) = x.transpose() * c_eta.asDiagonal() * x;
  }
  return ll;
}

GlmFit cumlogit_fit(const Eigen::Ref<const Eigen::MatrixXd>& x,
                    const Eigen::Ref<const Eigen::VectorXd>& z, int categories,
                    int max_iter, double tol) {
  const int n = static_cast<int>(x.rows());
  const int k = static_cast<int>(x.cols());
  if (categories < 2)
    throw std::invalid_argument("cumlogit_fit: need at least 2 categories");
  if (z.size() != n) throw std::invalid_argument("cumlogit_fit: size mismatch");

  std::vector<int> counts(categories, 0);
  for (int i = 0; i < n; ++i) {
    const int zi = static_cast<int>(z[i]);
    if (zi < 1 || zi > categories || z[i] != zi)
      throw std::invalid_argument("cumlogit_fit: responses must be 1..J");
    ++counts[zi - 1];
  }
  std::ostringstream missing;
  for (int j = 0; j < categories; ++j)
    if (counts[j] == 0) missing << (missing.tellp() > 0 ? ", " : "") << (j + 1);
  if (missing.tellp() > 0)
    throw std::invalid_argument("cumlogit_fit: empty response categories: " +
                                missing.str());

  const int n_alpha = categories - 2;
  const int dim = n_alpha + k;
  Eigen::VectorXd params = Eigen::VectorXd::Zero(dim);
  // Cutpoint increments from marginal cumulative frequencies.
  double prev_logit = 0.0;
  double cum = 0.0;
  for (int j = 0; j < n_alpha + 1; ++j) {
    cum += counts[j];
    const double c = std::clamp(cum / n, 1e-3, 1.0 - 1e-3);
    const double lg = std::log(c / (1.0 - c));
    if (j > 0) params[j - 1] = std::log(std::max(lg - prev_logit, 0.05));
    prev_logit = lg;
  }

  GlmFit fit;
  Eigen::VectorXd grad(dim);
  Eigen::MatrixXd hess(dim, dim);
  double ll = cumlogit_loglik(x, z, categories, params, &grad, &hess);
  double damp = 0.0;

  int it = 0;
  for (; it < max_iter; ++it) {
    Eigen::MatrixXd a = -hess;
    a.diagonal().array() += damp;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    Eigen::VectorXd step = ldlt.solve(grad);
    bool ok = ldlt.info() == Eigen::Success && step.allFinite();
    double ll_new = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd cand;
    if (ok) {
      cand = params + step;
      ll_new = cumlogit_loglik(x, z, categories, cand);
    }
    if (!ok || !(ll_new >= ll - 1e-12 * (1.0 + std::abs(ll)))) {
      damp = std::max(1e-6, damp * 10.0);
      if (damp > 1e12) break;
      continue;
    }
    params = cand;
    const double delta = std::abs(ll_new - ll);
    ll = cumlogit_loglik(x, z, categories, params, &grad, &hess);
    damp = damp > 1e-8 ? damp * 0.1 : 0.0;
    if (grad.lpNorm<Eigen::Infinity>() <= 1e-6 &&
        delta <= tol * (std::abs(ll) + 1.0)) {
      fit.converged = true;
      ++it;
      break;
    }
  }

  fit.coefficients = params;
  fit.iterations = it;
  fit.loglik = ll;
  fit.deviance = -2.0 * ll;
  Eigen::MatrixXd a = -hess;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  fit.covariance = ldlt.solve(Eigen::MatrixXd::Identity(dim, dim));
  if (!fit.covariance.allFinite()) {
    a.diagonal().array() += 1e-8;
    fit.covariance =
        Eigen::LDLT<Eigen::MatrixXd>(a).solve(Eigen::MatrixXd::Identity(dim, dim));
  }
  return fit;
}

std::vector<int> default_rank_grid(int max_rank) {
  if (max_rank < 2)
    throw std::invalid_argument("rank grid: max_rank must be >= 2");
  std::vector<int> grid;
  for (int p = 2; p <= std::min(max_rank, 50); ++p) grid.push_back(p);
  for (int p = 55; p <= max_rank; p += 5) grid.push_back(p);
  return grid;
}

std::vector<int> full_rank_grid(int max_rank) {
  if (max_rank < 2)
    throw std::invalid_argument("rank grid: max_rank must be >= 2");
  std::vector<int> grid;
  for (int p = 2; p <= max_rank; ++p) grid.push_back(p);
  return grid;
}

namespace {

double score_one_rank(const Dataset& dataset,
                      const Eigen::MatrixXd& design,
                      const Eigen::MatrixXd& cv_design, int k, int p) {
  const auto x_fit = design.leftCols(k + p);
  const auto x_cv = cv_design.leftCols(k + p);
  const double inf = std::numeric_limits<double>::infinity();

  if (dataset.family == Family::kOrdinal) {
    GlmFit fit = cumlogit_fit(x_fit, dataset.z, dataset.ordinal_categories);
    if (!fit.converged) return inf;
    const int n_alpha = dataset.ordinal_categories - 2;
    const Eigen::VectorXd theta =
        cutpoints_from_free(fit.coefficients.head(n_alpha));
    const Eigen::VectorXd eta = x_cv * fit.coefficients.tail(k + p);
    int wrong = 0;
    std::vector<double> tv(theta.data(), theta.data() + theta.size());
    for (int i = 0; i < eta.size(); ++i) {
      const auto probs = ordinal_category_probs(tv, eta[i]);
      int best = 0;
      for (int j = 1; j < static_cast<int>(probs.size()); ++j)
        if (probs[j] > probs[best]) best = j;
      if (best + 1 != static_cast<int>(dataset.z_cv[i])) ++wrong;
    }
    return static_cast<double>(wrong) / eta.size();
  }

  const GlmFamily family =
      dataset.family == Family::kBinary ? GlmFamily::kLogit : GlmFamily::kLog;
  GlmFit fit = irls_fit(family, x_fit, dataset.z);
  if (!fit.converged) return inf;
  const Eigen::VectorXd eta = x_cv * fit.coefficients;
  double sse = 0.0;
  for (int i = 0; i < eta.size(); ++i) {
    const double zhat = family == GlmFamily::kLogit
                            ? logistic(eta[i])
                            : std::exp(std::min(eta[i], kEtaClamp));
    const double d = dataset.z_cv[i] - zhat;
    sse += d * d;
  }
  return sse / eta.size();
}

}  // namespace

RankSelection select_rank(const Dataset& dataset,
                          const Eigen::Ref<const Eigen::MatrixXd>& fit_basis,
                          const Eigen::Ref<const Eigen::MatrixXd>& cv_basis,
                          std::span<const int> grid, int jobs) {
  if (grid.empty()) throw std::invalid_argument("select_rank: empty grid");
  const int k = dataset.covariates();
  const int cap = static_cast<int>(fit_basis.cols());
  for (int p : grid)
    if (p < 1 || p > cap)
      throw std::invalid_argument(
          "select_rank: grid rank outside the available basis");
  if (dataset.cv_size() < 1)
    throw std::invalid_argument("select_rank: no held-out rows");

  // One shared augmented design; each rank reads a column prefix.
  Eigen::MatrixXd design(dataset.size(), k + cap);
  design.leftCols(k) = dataset.x;
  design.rightCols(cap) = fit_basis;
  Eigen::MatrixXd cv_design(dataset.cv_size(), k + cap);
  cv_design.leftCols(k) = dataset.x_cv;
  cv_design.rightCols(cap) = cv_basis;

  RankSelection sel;
  sel.grid.assign(grid.begin(), grid.end());
  sel.score.assign(grid.size(), 0.0);

  const int m = static_cast<int>(grid.size());
  jobs = std::max(1, std::min(jobs, m));
  if (jobs == 1) {
    for (int i = 0; i < m; ++i)
      sel.score[i] = score_one_rank(dataset, design, cv_design, k, grid[i]);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < jobs; ++t) {
      pool.emplace_back([&]() {
        for (int i = next.fetch_add(1); i < m; i = next.fetch_add(1))
          sel.score[i] = score_one_rank(dataset, design, cv_design, k, grid[i]);
      });
    }
    for (auto& th : pool) th.join();
  }

  int best = -1;
  for (int i = 0; i < m; ++i) {
    if (!std::isfinite(sel.score[i])) continue;
    if (best < 0 || sel.score[i] < sel.score[best]) best = i;
  }
  if (best < 0)
    throw std::runtime_error("select_rank: no rank in the grid produced a "
                             "converged fit");
  sel.chosen_index = best;
  sel.chosen = sel.grid[best];
  return sel;
}

}  // namespace picar
