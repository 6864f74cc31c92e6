#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "picar/basis.hpp"
#include "picar/eval.hpp"
#include "picar/glm.hpp"
#include "picar/mcmc.hpp"
#include "picar/mesh.hpp"
#include "picar/randfield.hpp"

namespace picar {

// One fully resolved pipeline configuration, loadable from JSON. Validation
// reports every violated constraint at once.
struct StudyConfig {
  Family family = Family::kBinary;
  int n = 1000;
  int n_cv = 400;
  std::vector<double> beta = {1.0, 1.0};
  MaternParams matern;
  double covariate_sd = 0.0;  // <= 0 picks the family default
  double nugget_sd = 0.0;
  std::vector<double> theta = {0.0, 1.0, 2.0};  // ordinal cutpoints
  Eigen::Matrix2d svc_cross =
      (Eigen::Matrix2d() << 1.0, 0.3, 0.3, 0.2).finished();

  int mesh_nodes = 1649;
  double mesh_buffer = 0.1;

  int rank_max = 100;          // eigenpair budget
  std::vector<int> rank_grid;  // empty selects the default grid
  std::optional<int> rank;     // fixed rank, skips the heuristic

  PrecisionKind precision = PrecisionKind::kIcar;
  double car_rho = 0.5;
  double threshold = 0.5;  // binary classification cut

  ChainConfig mcmc;  // its seed field is ignored; streams derive from `seed`
  int replicates = 1;
  int jobs = 1;
  std::uint64_t seed = 42;
  std::string output_dir = "out";

  int ordinal_categories() const { return static_cast<int>(theta.size()) + 1; }
  void validate() const;
  static StudyConfig from_json_file(const std::filesystem::path& path);
  static StudyConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

// Mesh, spectral basis and projections for one dataset. Built once and
// shared across ranks and precision kinds.
struct ProjectedBasis {
  Mesh mesh;
  Eigen::SparseMatrix<double> graph;
  SpectralBasis spectral;
  Eigen::SparseMatrix<double> fit_projector;  // n x m barycentric weights
  Eigen::SparseMatrix<double> cv_projector;   // n_cv x m
  Eigen::MatrixXd fit_basis;  // n x P
  Eigen::MatrixXd cv_basis;   // n_cv x P
  double mesh_seconds = 0.0;
  double basis_seconds = 0.0;
};

struct FitResult {
  int rank = 0;
  RankSelection selection;  // empty grid when the rank was fixed
  Chain chain;
  PredictionSummary prediction;
  double cvmspe_value = 0.0;  // NaN where not applicable
  double mpr_value = 0.0;
  double primary_metric = 0.0;  // cvmspe, or mpr for ordinal
  std::vector<ParameterSummary> parameters;
  double mesh_seconds = 0.0, basis_seconds = 0.0, select_seconds = 0.0,
         mcmc_seconds = 0.0;
  int mesh_vertices = 0;
  int basis_rank_available = 0;
};

Dataset generate_dataset(const StudyConfig& config, int replicate);

// Median fit-split response mean over the first `candidates` replicates.
// Keeps reported single-dataset results representative of the generating
// design without ever looking at fitted metrics.
int representative_replicate(const StudyConfig& config, int candidates = 5);

ProjectedBasis project_dataset(const StudyConfig& config,
                               const Dataset& dataset);
FitResult fit_projected(const StudyConfig& config, const Dataset& dataset,
                        const ProjectedBasis& projected);
// mesh -> basis -> rank heuristic -> sampler -> prediction.
FitResult fit_dataset(const StudyConfig& config, const Dataset& dataset);

struct StudyTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  void save_csv(const std::filesystem::path& path) const;
};

struct StudyResult {
  std::string name;
  std::vector<std::pair<std::string, StudyTable>> tables;
  std::vector<std::filesystem::path> outputs;
  std::vector<std::string> failures;  // failed cells, human readable
  double mesh_seconds = 0.0, basis_seconds = 0.0, select_seconds = 0.0,
         mcmc_seconds = 0.0;
  double total_seconds = 0.0;
};

// Rank table plus precision-kind table for one family, with a rank-vs-error
// plot. Uses a representative replicate of the configured design.
StudyResult family_study(const StudyConfig& config);
// Per-coefficient 95% CI coverage over config.replicates datasets for each
// precision kind.
StudyResult coverage_study(const StudyConfig& config);
// Mesh density sweep crossed with field smoothness.
StudyResult mesh_sweep_study(const StudyConfig& config);
// Same design fitted under four basis families.
StudyResult basis_compare_study(const StudyConfig& config);

// preset: binary | poisson | ordinal | svc | mesh_sweep | basis_compare |
// coverage. Sets the family implied by the preset, runs the driver, writes
// tables, plots and a run manifest under config.output_dir.
StudyResult run_study(const std::string& preset, StudyConfig config);

// Writes replicate dataset CSVs plus a manifest; returns the file paths.
std::vector<std::filesystem::path> simulate_datasets(const StudyConfig& config);

// JSON run manifest: config echo and hash, seed, versions, stage timings,
// output hashes, failed cells.
void write_manifest(const StudyConfig& config, const std::string& name,
                    const StudyResult& result);

}  // namespace picar
