#include "picar/randfield.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace picar {

double matern(double h, const MaternParams& params) {
  if (h < 0.0) throw std::invalid_argument("matern: negative distance");
  if (!(params.sigma2 >= 0.0) || !(params.phi > 0.0))
    throw std::invalid_argument("matern: need sigma2 >= 0 and phi > 0");
  const double s2 = params.sigma2, phi = params.phi, nu = params.nu;
  if (h == 0.0) return s2;
  if (std::isinf(nu)) return s2 * std::exp(-h * h / (2.0 * phi * phi));
  if (nu == 0.5) return s2 * std::exp(-h / phi);
  if (nu == 1.5) {
    const double a = std::sqrt(3.0) * h / phi;
    return s2 * (1.0 + a) * std::exp(-a);
  }
  if (nu == 2.5) {
    const double a = std::sqrt(5.0) * h / phi;
    return s2 * (1.0 + a + a * a / 3.0) * std::exp(-a);
  }
  throw std::invalid_argument(
      "matern: smoothness must be one of 0.5, 1.5, 2.5 or infinity");
}

Eigen::MatrixXd matern_covariance(std::span<const Point2> points,
                                  const MaternParams& params) {
  const int n = static_cast<int>(points.size());
  Eigen::MatrixXd c(n, n);
  for (int i = 0; i < n; ++i) {
    c(i, i) = params.sigma2;
    for (int j = i + 1; j < n; ++j) {
      const double dx = points[i].x - points[j].x;
      const double dy = points[i].y - points[j].y;
      c(i, j) = c(j, i) = matern(std::sqrt(dx * dx + dy * dy), params);
    }
  }
  return c;
}

Eigen::VectorXd sample_gp(std::span<const Point2> points,
                          const MaternParams& params, Rng& rng) {
  const int n = static_cast<int>(points.size());
  if (params.sigma2 == 0.0) return Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd c = matern_covariance(points, params);
  c.diagonal().array() += 1e-10;
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("sample_gp: covariance factorization failed");
  Eigen::VectorXd u(n);
  for (int i = 0; i < n; ++i) u[i] = rng.normal();
  return llt.matrixL() * u;
}

Family family_from_string(const std::string& name) {
  if (name == "binary") return Family::kBinary;
  if (name == "count") return Family::kCount;
  if (name == "svc") return Family::kSvc;
  if (name == "ordinal") return Family::kOrdinal;
  throw std::invalid_argument("unknown family: " + name +
                              " (expected binary, count, svc or ordinal)");
}

std::string to_string(Family family) {
  switch (family) {
    case Family::kBinary: return "binary";
    case Family::kCount: return "count";
    case Family::kSvc: return "svc";
    case Family::kOrdinal: return "ordinal";
  }
  return "?";
}

namespace {

double logistic(double x) {
  // Stable for any x.
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void check_theta(std::span<const double> theta) {
  if (theta.empty())
    throw std::invalid_argument("ordinal cutpoints: need at least one");
  if (theta[0] != 0.0)
    throw std::invalid_argument("ordinal cutpoints: first must be 0");
  for (std::size_t j = 1; j < theta.size(); ++j)
    if (!(theta[j] > theta[j - 1]))
      throw std::invalid_argument(
          "ordinal cutpoints: must be strictly increasing");
}

constexpr double kEtaClamp = 35.0;  // guards exp() overflow only

}  // namespace

std::vector<double> ordinal_category_probs(std::span<const double> theta,
                                           double eta) {
  check_theta(theta);
  const int j_max = static_cast<int>(theta.size()) + 1;
  std::vector<double> probs(j_max);
  double prev = 0.0;
  for (int j = 0; j < j_max - 1; ++j) {
    const double g = logistic(theta[j] - eta);
    probs[j] = g - prev;
    prev = g;
  }
  probs[j_max - 1] = 1.0 - prev;
  for (double& p : probs) p = std::max(p, 0.0);
  return probs;
}

Eigen::VectorXd draw_responses(Family family, const Eigen::VectorXd& eta,
                               Rng& rng, std::span<const double> theta) {
  Eigen::VectorXd z(eta.size());
  switch (family) {
    case Family::kBinary:
      for (int i = 0; i < eta.size(); ++i)
        z[i] = rng.bernoulli(logistic(eta[i]));
      break;
    case Family::kCount:
    case Family::kSvc:
      for (int i = 0; i < eta.size(); ++i)
        z[i] = static_cast<double>(
            rng.poisson(std::exp(std::min(eta[i], kEtaClamp))));
      break;
    case Family::kOrdinal: {
      check_theta(theta);
      for (int i = 0; i < eta.size(); ++i) {
        const auto probs = ordinal_category_probs(theta, eta[i]);
        z[i] = 1.0 + rng.categorical(probs.data(), static_cast<int>(probs.size()));
      }
      break;
    }
  }
  return z;
}

namespace {

struct SharedDraw {
  std::vector<Point2> locations;  // n + n_cv
  Eigen::MatrixXd x;              // (n + n_cv) x k
  Eigen::VectorXd w;              // latent field over all locations
};

double family_covariate_sd(Family family, double requested) {
  if (requested > 0.0) return requested;
  // Log-link families need tame covariates: with unit-scale x the intensity
  // exp(eta) explodes and squared prediction error is unbounded in practice.
  const bool log_link = family == Family::kCount || family == Family::kSvc;
  return log_link ? 0.2 : 1.0;
}

SharedDraw draw_shared(Family family, const GenConfig& config) {
  if (config.n < 1 || config.n_cv < 0)
    throw std::invalid_argument("gen: need n >= 1 and n_cv >= 0");
  if (config.beta.size() < 1)
    throw std::invalid_argument("gen: need at least one coefficient");
  const int total = config.n + config.n_cv;
  const int k = static_cast<int>(config.beta.size());
  SharedDraw d;
  Rng loc_rng = Rng::derive(config.seed, "gen-locations");
  d.locations.resize(total);
  for (auto& p : d.locations) {
    p.x = loc_rng.uniform();
    p.y = loc_rng.uniform();
  }
  Rng x_rng = Rng::derive(config.seed, "gen-covariates");
  const double sd = family_covariate_sd(family, config.covariate_sd);
  d.x.resize(total, k);
  for (int i = 0; i < total; ++i)
    for (int j = 0; j < k; ++j) d.x(i, j) = sd * x_rng.normal();
  Rng w_rng = Rng::derive(config.seed, "gen-field");
  d.w = sample_gp(d.locations, config.matern, w_rng);
  return d;
}

void split_common(Dataset& out, const SharedDraw& d, const GenConfig& config,
                  const Eigen::VectorXd& z_all) {
  const int n = config.n, n_cv = config.n_cv;
  out.fit_locations.assign(d.locations.begin(), d.locations.begin() + n);
  out.cv_locations.assign(d.locations.begin() + n, d.locations.end());
  out.x = d.x.topRows(n);
  out.x_cv = d.x.bottomRows(n_cv);
  out.z = z_all.head(n);
  out.z_cv = z_all.tail(n_cv);
  out.latent = d.w.head(n);
  out.latent_cv = d.w.tail(n_cv);
  out.true_beta = config.beta;
  out.params = config.matern;
  out.seed = config.seed;
}

Eigen::VectorXd add_nugget(Eigen::VectorXd eta, const GenConfig& config) {
  if (config.nugget_sd > 0.0) {
    Rng rng = Rng::derive(config.seed, "gen-nugget");
    for (int i = 0; i < eta.size(); ++i) eta[i] += config.nugget_sd * rng.normal();
  }
  return eta;
}

}  // namespace

Dataset gen_binary(const GenConfig& config) {
  SharedDraw d = draw_shared(Family::kBinary, config);
  Eigen::VectorXd eta = add_nugget(d.x * config.beta + d.w, config);
  Rng z_rng = Rng::derive(config.seed, "gen-response");
  Dataset out;
  out.family = Family::kBinary;
  split_common(out, d, config, draw_responses(Family::kBinary, eta, z_rng));
  return out;
}

Dataset gen_count(const GenConfig& config) {
  SharedDraw d = draw_shared(Family::kCount, config);
  Eigen::VectorXd eta = add_nugget(d.x * config.beta + d.w, config);
  Rng z_rng = Rng::derive(config.seed, "gen-response");
  Dataset out;
  out.family = Family::kCount;
  split_common(out, d, config, draw_responses(Family::kCount, eta, z_rng));
  return out;
}

Dataset gen_ordinal(const GenConfig& config, std::span<const double> theta) {
  check_theta(theta);
  SharedDraw d = draw_shared(Family::kOrdinal, config);
  Eigen::VectorXd eta = add_nugget(d.x * config.beta + d.w, config);
  Rng z_rng = Rng::derive(config.seed, "gen-response");
  Dataset out;
  out.family = Family::kOrdinal;
  out.ordinal_categories = static_cast<int>(theta.size()) + 1;
  out.true_theta.assign(theta.begin(), theta.end());
  split_common(out, d, config,
               draw_responses(Family::kOrdinal, eta, z_rng, theta));
  return out;
}

Dataset gen_svc(const GenConfig& config, const Eigen::Matrix2d& t) {
  if ((t - t.transpose()).norm() > 1e-12)
    throw std::invalid_argument("gen_svc: cross covariance must be symmetric");
  Eigen::LLT<Eigen::Matrix2d> tllt(t);
  if (tllt.info() != Eigen::Success)
    throw std::invalid_argument(
        "gen_svc: cross covariance must be positive definite");

  SharedDraw d;  // locations and covariates as usual, field drawn separately
  {
    GenConfig tmp = config;
    tmp.matern.sigma2 = 0.0;  // skip the scalar field; bivariate drawn below
    d = draw_shared(Family::kSvc, tmp);
  }
  const int total = config.n + config.n_cv;

  // Bivariate field with separable covariance R (x) T: F = L_R U L_T' where
  // R is the unit-sill Matern correlation over locations. Draws consume the
  // normal stream site-major, matching a direct Cholesky of the 2n x 2n
  // covariance in (site, component) ordering.
  MaternParams corr = config.matern;
  corr.sigma2 = 1.0;
  Eigen::MatrixXd r = matern_covariance(d.locations, corr);
  r.diagonal().array() += 1e-10;
  Eigen::LLT<Eigen::MatrixXd> rllt(r);
  if (rllt.info() != Eigen::Success)
    throw std::runtime_error("gen_svc: correlation factorization failed");
  Rng w_rng = Rng::derive(config.seed, "gen-field");
  Eigen::MatrixXd u(total, 2);
  for (int i = 0; i < total; ++i)
    for (int c = 0; c < 2; ++c) u(i, c) = w_rng.normal();
  Eigen::MatrixXd f = rllt.matrixL() * u * Eigen::MatrixXd(tllt.matrixL()).transpose();

  d.w = f.col(0);
  Eigen::VectorXd b = f.col(1);
  Eigen::VectorXd eta =
      d.x * config.beta + d.x.col(0).cwiseProduct(b) + d.w;
  eta = add_nugget(std::move(eta), config);
  Rng z_rng = Rng::derive(config.seed, "gen-response");
  Dataset out;
  out.family = Family::kSvc;
  split_common(out, d, config, draw_responses(Family::kSvc, eta, z_rng));
  out.svc_coef = b.head(config.n);
  out.svc_coef_cv = b.tail(config.n_cv);
  return out;
}

void save_dataset_csv(const Dataset& dataset,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("save_dataset_csv: cannot open " + path.string());
  const int k = dataset.covariates();
  out << "x,y";
  for (int j = 1; j <= k; ++j) out << ",x" << j;
  out << ",z,split\n";
  char buf[40];
  auto emit = [&](const std::vector<Point2>& locs, const Eigen::MatrixXd& x,
                  const Eigen::VectorXd& z, const char* split) {
    for (int i = 0; i < z.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", locs[i].x);
      out << buf;
      std::snprintf(buf, sizeof buf, ",%.17g", locs[i].y);
      out << buf;
      for (int j = 0; j < k; ++j) {
        std::snprintf(buf, sizeof buf, ",%.17g", x(i, j));
        out << buf;
      }
      std::snprintf(buf, sizeof buf, ",%.17g", z[i]);
      out << buf << "," << split << "\n";
    }
  };
  emit(dataset.fit_locations, dataset.x, dataset.z, "fit");
  emit(dataset.cv_locations, dataset.x_cv, dataset.z_cv, "cv");
  if (!out) throw std::runtime_error("save_dataset_csv: write failed");
}

Dataset load_dataset_csv(const std::filesystem::path& path, Family family,
                         int ordinal_categories) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("load_dataset_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_dataset_csv: empty file");
  // Header tells us k.
  int commas = static_cast<int>(std::count(line.begin(), line.end(), ','));
  const int k = commas - 3;
  if (k < 1 || line.rfind("x,y,", 0) != 0)
    throw std::runtime_error("load_dataset_csv: unexpected header: " + line);

  std::vector<Point2> floc, cloc;
  std::vector<std::vector<double>> fx, cx;
  std::vector<double> fz, cz;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (static_cast<int>(cells.size()) != k + 4) {
      std::ostringstream msg;
      msg << "load_dataset_csv: line " << lineno << ": expected " << (k + 4)
          << " fields, got " << cells.size();
      throw std::runtime_error(msg.str());
    }
    Point2 p{std::stod(cells[0]), std::stod(cells[1])};
    std::vector<double> xr(k);
    for (int j = 0; j < k; ++j) xr[j] = std::stod(cells[2 + j]);
    const double z = std::stod(cells[2 + k]);
    const std::string& split = cells[3 + k];
    if (split == "fit") {
      floc.push_back(p);
      fx.push_back(std::move(xr));
      fz.push_back(z);
    } else if (split == "cv") {
      cloc.push_back(p);
      cx.push_back(std::move(xr));
      cz.push_back(z);
    } else {
      std::ostringstream msg;
      msg << "load_dataset_csv: line " << lineno << ": split must be fit or cv";
      throw std::runtime_error(msg.str());
    }
  }
  if (floc.empty())
    throw std::runtime_error("load_dataset_csv: no fit rows in " + path.string());

  Dataset out;
  out.family = family;
  out.ordinal_categories =
      family == Family::kOrdinal ? ordinal_categories : 0;
  if (family == Family::kOrdinal && ordinal_categories < 2)
    throw std::invalid_argument(
        "load_dataset_csv: ordinal data needs the category count");
  out.fit_locations = std::move(floc);
  out.cv_locations = std::move(cloc);
  const int n = static_cast<int>(out.fit_locations.size());
  const int n_cv = static_cast<int>(out.cv_locations.size());
  out.x.resize(n, k);
  out.z.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) out.x(i, j) = fx[i][j];
    out.z[i] = fz[i];
  }
  out.x_cv.resize(n_cv, k);
  out.z_cv.resize(n_cv);
  for (int i = 0; i < n_cv; ++i) {
    for (int j = 0; j < k; ++j) out.x_cv(i, j) = cx[i][j];
    out.z_cv[i] = cz[i];
  }
  return out;
}

}  // namespace picar
