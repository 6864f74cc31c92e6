#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "picar/mesh.hpp"
#include "picar/rng.hpp"

namespace picar {

// Matern covariance with closed forms at smoothness 0.5, 1.5, 2.5 and the
// squared-exponential limit (pass infinity). sigma2 is the partial sill,
// phi the range.
struct MaternParams {
  double sigma2 = 1.0;
  double phi = 0.2;
  double nu = 2.5;
};

double matern(double h, const MaternParams& params);
Eigen::MatrixXd matern_covariance(std::span<const Point2> points,
                                  const MaternParams& params);

// Zero-mean Gaussian field draw at `points` by dense Cholesky with a 1e-10
// diagonal jitter. sigma2 == 0 yields the zero field.
Eigen::VectorXd sample_gp(std::span<const Point2> points,
                          const MaternParams& params, Rng& rng);

enum class Family { kBinary, kCount, kSvc, kOrdinal };

Family family_from_string(const std::string& name);
std::string to_string(Family family);

// Cumulative-logit category probabilities for cutpoints theta (theta[0]
// must be 0, strictly increasing) at linear predictor eta; J = theta.size()+1.
std::vector<double> ordinal_category_probs(std::span<const double> theta,
                                           double eta);

// Draws one response per eta entry: Bernoulli(logit^-1), Poisson(exp),
// or a cumulative-logit category in 1..J.
Eigen::VectorXd draw_responses(Family family, const Eigen::VectorXd& eta,
                               Rng& rng, std::span<const double> theta = {});

struct GenConfig {
  int n = 1000;
  int n_cv = 400;
  Eigen::VectorXd beta;        // regression coefficients (length k)
  MaternParams matern;
  // Covariate scale: entries of X are iid N(0, sd^2). Zero or negative
  // selects the family default (1.0; 0.2 for the count family, whose
  // prediction error floor otherwise dwarfs the spatial signal).
  double covariate_sd = 0.0;
  double nugget_sd = 0.0;      // optional iid noise added to eta
  std::uint64_t seed = 0;
};

struct Dataset {
  Family family = Family::kBinary;
  int ordinal_categories = 0;  // J, ordinal only
  std::vector<Point2> fit_locations, cv_locations;
  Eigen::MatrixXd x, x_cv;           // covariates
  Eigen::VectorXd z, z_cv;           // responses
  Eigen::VectorXd latent, latent_cv; // true field (simulation provenance)
  Eigen::VectorXd svc_coef, svc_coef_cv;  // true varying coefficient
  Eigen::VectorXd true_beta;
  std::vector<double> true_theta;    // ordinal cutpoints
  MaternParams params;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(z.size()); }
  int cv_size() const { return static_cast<int>(z_cv.size()); }
  int covariates() const { return static_cast<int>(x.cols()); }
};

// All generators draw fit and validation locations jointly (iid uniform on
// the unit square), sample one field over the union, then split: first n
// rows fit, last n_cv rows held out.
Dataset gen_binary(const GenConfig& config);
Dataset gen_count(const GenConfig& config);
// theta: cutpoints with theta[0] == 0, strictly increasing; J = size + 1.
Dataset gen_ordinal(const GenConfig& config, std::span<const double> theta);
// Varying-coefficient count data: eta = X beta + x1 .* B + W with
// (W, B) a bivariate field, cross covariance `t` between components.
Dataset gen_svc(const GenConfig& config, const Eigen::Matrix2d& t);

// CSV schema: x, y, x1..xk, z, split  with split in {fit, cv}.
void save_dataset_csv(const Dataset& dataset,
                      const std::filesystem::path& path);
Dataset load_dataset_csv(const std::filesystem::path& path, Family family,
                         int ordinal_categories = 0);

}  // namespace picar
