// picar: mesh projection spatial models from the command line.
//
// Subcommands cover the pipeline stages (simulate, mesh, basis, select-rank,
// fit, predict) plus canned replication studies (study). All options can
// also come from a JSON config file; command line flags win.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "picar/study.hpp"

namespace fs = std::filesystem;
using namespace picar;

namespace {

struct Options {
  std::string config_path;
  std::string dataset_path;
  std::string output_dir;
  std::optional<std::string> family;
  std::optional<std::string> precision;
  std::optional<int> n, n_cv, mesh_nodes, rank_max, rank, iterations, burn_in,
      thin, jobs, replicates;
  std::optional<double> mesh_buffer, car_rho, threshold;
  std::optional<std::uint64_t> seed;
  std::vector<int> rank_grid;
};

// Options shared by every subcommand that runs part of the pipeline.
void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.config_path,
                  "JSON config file (defaults apply when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--family", o.family,
                  "response family: binary, count, ordinal or svc");
  cmd->add_option("--seed", o.seed, "base seed for every random stream");
  cmd->add_option("-o,--output-dir", o.output_dir, "output directory");
  cmd->add_option("-j,--jobs", o.jobs, "worker threads for study cells")
      ->envname("PICAR_JOBS");
}

void add_design(CLI::App* cmd, Options& o) {
  cmd->add_option("--n", o.n, "fitting locations per dataset");
  cmd->add_option("--n-cv", o.n_cv, "held-out locations per dataset");
  cmd->add_option("--replicates", o.replicates, "dataset replicates");
}

void add_mesh_opts(CLI::App* cmd, Options& o) {
  cmd->add_option("--mesh-nodes", o.mesh_nodes, "target mesh vertex count");
  cmd->add_option("--mesh-buffer", o.mesh_buffer,
                  "mesh margin as a fraction of the domain size");
}

void add_model_opts(CLI::App* cmd, Options& o) {
  cmd->add_option("--rank-max", o.rank_max, "eigenpair budget");
  cmd->add_option("--rank", o.rank, "fixed basis rank, skips the heuristic");
  cmd->add_option("--rank-grid", o.rank_grid,
                  "candidate ranks for the heuristic (comma separated)")
      ->delimiter(',');
  cmd->add_option("--precision", o.precision,
                  "random-effect precision kind: ind, icar or car");
  cmd->add_option("--car-rho", o.car_rho, "CAR dependence parameter");
  cmd->add_option("--threshold", o.threshold,
                  "binary classification cut on the predicted probability");
  cmd->add_option("--iterations", o.iterations, "MCMC iterations");
  cmd->add_option("--burn-in", o.burn_in, "discarded initial iterations");
  cmd->add_option("--thin", o.thin, "keep every thin-th draw");
}

StudyConfig resolve(const Options& o) {
  StudyConfig cfg;
  if (!o.config_path.empty()) cfg = StudyConfig::from_json_file(o.config_path);
  if (o.family) cfg.family = family_from_string(*o.family);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.n) cfg.n = *o.n;
  if (o.n_cv) cfg.n_cv = *o.n_cv;
  if (o.replicates) cfg.replicates = *o.replicates;
  if (o.mesh_nodes) cfg.mesh_nodes = *o.mesh_nodes;
  if (o.mesh_buffer) cfg.mesh_buffer = *o.mesh_buffer;
  if (o.rank_max) cfg.rank_max = *o.rank_max;
  if (o.rank) cfg.rank = *o.rank;
  if (!o.rank_grid.empty()) cfg.rank_grid = o.rank_grid;
  if (o.precision) cfg.precision = precision_kind_from_string(*o.precision);
  if (o.car_rho) cfg.car_rho = *o.car_rho;
  if (o.threshold) cfg.threshold = *o.threshold;
  if (o.iterations) cfg.mcmc.iterations = *o.iterations;
  if (o.burn_in) cfg.mcmc.burn_in = *o.burn_in;
  if (o.thin) cfg.mcmc.thin = *o.thin;
  cfg.validate();
  return cfg;
}

// Loads the dataset file when given, otherwise generates the representative
// replicate of the configured design.
Dataset resolve_dataset(const Options& o, const StudyConfig& cfg) {
  if (!o.dataset_path.empty()) {
    Dataset ds = load_dataset_csv(o.dataset_path, cfg.family,
                                  cfg.family == Family::kOrdinal
                                      ? cfg.ordinal_categories()
                                      : 0);
    // File data has no generation seed; derive the downstream streams from
    // the configured base seed instead.
    ds.seed = Rng::derive_seed(cfg.seed, "dataset-file");
    return ds;
  }
  return generate_dataset(cfg, representative_replicate(cfg));
}

template <typename Fn>
auto stage(const char* label, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(label) + ": " + e.what());
  }
}

std::string metric_name(Family family) {
  return family == Family::kOrdinal ? "mpr" : "cvmspe";
}

int cmd_simulate(const Options& o) {
  const StudyConfig cfg = resolve(o);
  const auto paths = simulate_datasets(cfg);
  std::cout << "wrote " << paths.size() << " dataset files under "
            << cfg.output_dir << "\n";
  return 0;
}

int cmd_mesh(const Options& o) {
  const StudyConfig cfg = resolve(o);
  const Dataset ds = resolve_dataset(o, cfg);
  const Mesh mesh =
      stage("mesh", [&] {
        return build_mesh(ds.fit_locations, cfg.mesh_nodes, cfg.mesh_buffer,
                          Rng::derive_seed(ds.seed, "mesh"));
      });
  fs::create_directories(cfg.output_dir);
  const fs::path path = fs::path(cfg.output_dir) / "mesh.txt";
  save_mesh(mesh, path);
  std::cout << "mesh: " << mesh.vertex_count() << " vertices, "
            << mesh.triangles.size() << " triangles -> " << path.string()
            << "\n";
  return 0;
}

int cmd_basis(const Options& o, const std::string& mesh_path,
              const std::string& method_name) {
  const StudyConfig cfg = resolve(o);
  const Mesh mesh = load_mesh(mesh_path);
  EigenMethod method = EigenMethod::kAuto;
  if (method_name == "lanczos") method = EigenMethod::kLanczos;
  else if (method_name == "dense") method = EigenMethod::kDense;
  else if (method_name != "auto")
    throw std::invalid_argument("unknown eigensolver: " + method_name);

  MoranOperator op(adjacency(mesh));
  const int p_max = std::min(cfg.rank_max, op.size() - 1);
  const SpectralBasis basis = stage("basis", [&] {
    return leading_eigenpairs(op, p_max, method,
                              Rng::derive_seed(cfg.seed, "basis"));
  });
  fs::create_directories(cfg.output_dir);
  const fs::path path = fs::path(cfg.output_dir) / "basis.txt";
  save_basis(basis, path);
  std::cout << "basis: " << basis.vectors.cols() << " of " << basis.requested
            << " requested columns retained -> " << path.string() << "\n";
  return 0;
}

int cmd_select_rank(const Options& o) {
  const StudyConfig cfg = resolve(o);
  const Dataset ds = resolve_dataset(o, cfg);
  const ProjectedBasis pb =
      stage("projection", [&] { return project_dataset(cfg, ds); });
  std::vector<int> grid = cfg.rank_grid;
  if (grid.empty())
    grid = default_rank_grid(
        std::min(cfg.rank_max, static_cast<int>(pb.fit_basis.cols())));
  const RankSelection sel = stage("rank selection", [&] {
    return select_rank(ds, pb.fit_basis, pb.cv_basis, grid, cfg.jobs);
  });

  fs::create_directories(cfg.output_dir);
  const fs::path path = fs::path(cfg.output_dir) / "rank_scores.csv";
  StudyTable table;
  table.columns = {"rank", "score"};
  for (size_t i = 0; i < sel.grid.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", sel.score[i]);
    table.rows.push_back({std::to_string(sel.grid[i]), buf});
  }
  table.save_csv(path);
  std::cout << "chosen rank: " << sel.chosen << " (scores -> " << path.string()
            << ")\n";
  return 0;
}

int cmd_fit(const Options& o) {
  const StudyConfig cfg = resolve(o);
  const Dataset ds = resolve_dataset(o, cfg);
  const ProjectedBasis pb =
      stage("projection", [&] { return project_dataset(cfg, ds); });
  const FitResult fit =
      stage("fit", [&] { return fit_projected(cfg, ds, pb); });

  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  save_mesh(pb.mesh, dir / "mesh.txt");
  save_basis(pb.spectral, dir / "basis.txt");
  save_chain(fit.chain, (dir / "chain").string());

  StudyTable metrics;
  metrics.columns = {"family", "n",   "rank",    "cvmspe",
                     "mpr",    "time_min"};
  char cv[32], mp[32], tm[32];
  std::snprintf(cv, sizeof cv, "%.6g", fit.cvmspe_value);
  std::snprintf(mp, sizeof mp, "%.6g", fit.mpr_value);
  std::snprintf(tm, sizeof tm, "%.6g", fit.mcmc_seconds / 60.0);
  metrics.rows.push_back({to_string(cfg.family), std::to_string(ds.size()),
                          std::to_string(fit.rank), cv, mp, tm});
  metrics.save_csv(dir / "fit_summary.csv");

  StudyTable params;
  params.columns = {"parameter", "mean", "lower", "upper"};
  for (const auto& p : fit.parameters) {
    char m[32], l[32], u[32];
    std::snprintf(m, sizeof m, "%.6g", p.mean);
    std::snprintf(l, sizeof l, "%.6g", p.lower);
    std::snprintf(u, sizeof u, "%.6g", p.upper);
    params.rows.push_back({p.name, m, l, u});
  }
  params.save_csv(dir / "parameters.csv");

  StudyResult res;
  res.name = "fit";
  res.outputs = {dir / "mesh.txt", dir / "basis.txt", dir / "fit_summary.csv",
                 dir / "parameters.csv"};
  res.mesh_seconds = fit.mesh_seconds;
  res.basis_seconds = fit.basis_seconds;
  res.select_seconds = fit.select_seconds;
  res.mcmc_seconds = fit.mcmc_seconds;
  res.total_seconds = fit.mesh_seconds + fit.basis_seconds +
                      fit.select_seconds + fit.mcmc_seconds;
  write_manifest(cfg, "fit", res);

  std::cout << "rank " << fit.rank << ", " << metric_name(cfg.family) << " "
            << fit.primary_metric << ", sampler "
            << fit.mcmc_seconds / 60.0 << " min\n";
  std::cout << "chain and summaries -> " << dir.string() << "\n";
  return 0;
}

int cmd_predict(const Options& o, const std::string& chain_dir,
                const std::string& mesh_path, const std::string& basis_path) {
  const StudyConfig cfg = resolve(o);
  const Chain chain = load_chain(chain_dir);
  const Mesh mesh = load_mesh(mesh_path);
  const SpectralBasis basis = load_basis(basis_path);
  const Dataset ds = resolve_dataset(o, cfg);

  const int p = static_cast<int>(chain.delta.cols());
  if (basis.vectors.cols() < p)
    throw std::invalid_argument("basis file has fewer columns than the chain rank");
  const Eigen::MatrixXd cv_basis =
      projector(mesh, ds.cv_locations) * basis.vectors.leftCols(p);

  // Spec stub carrying just the shape information predict() cross-checks.
  ModelSpec spec;
  spec.family = chain.family;
  spec.ordinal_categories = chain.ordinal_categories;
  spec.x = Eigen::MatrixXd::Zero(0, chain.beta.cols());
  const PredictionSummary pred =
      predict(chain, spec, cv_basis, ds.x_cv, cfg.threshold);

  fs::create_directories(cfg.output_dir);
  const fs::path path = fs::path(cfg.output_dir) / "predictions.csv";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x,y,prediction,sd";
  if (chain.family == Family::kBinary) out << ",classification";
  if (chain.family == Family::kOrdinal)
    for (int j = 1; j <= chain.ordinal_categories; ++j) out << ",prob" << j;
  out << "\n";
  char buf[120];
  for (int i = 0; i < pred.prediction.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g",
                  ds.cv_locations[i].x, ds.cv_locations[i].y,
                  pred.prediction[i], pred.sd[i]);
    out << buf;
    if (chain.family == Family::kBinary)
      out << "," << pred.classification[i];
    if (chain.family == Family::kOrdinal)
      for (int j = 0; j < chain.ordinal_categories; ++j) {
        std::snprintf(buf, sizeof buf, ",%.17g", pred.ordinal_probs(i, j));
        out << buf;
      }
    out << "\n";
  }
  std::cout << "predictions for " << pred.prediction.size() << " locations -> "
            << path.string() << "\n";
  return 0;
}

int cmd_study(const Options& o, const std::string& preset) {
  const StudyConfig cfg = resolve(o);
  const StudyResult res = run_study(preset, cfg);
  for (const auto& path : res.outputs)
    std::cout << "wrote " << path.string() << "\n";
  if (!res.failures.empty()) {
    std::cout << res.failures.size() << " cells failed:\n";
    for (const auto& f : res.failures) std::cout << "  " << f << "\n";
  }
  std::printf("stages (s): mesh %.1f, basis %.1f, selection %.1f, mcmc %.1f, "
              "total %.1f\n",
              res.mesh_seconds, res.basis_seconds, res.select_seconds,
              res.mcmc_seconds, res.total_seconds);
  return res.failures.empty() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank spatial generalized linear mixed models via mesh "
               "projection"};
  app.require_subcommand(1);
  Options o;

  CLI::App* simulate =
      app.add_subcommand("simulate", "Write replicate dataset CSVs");
  add_common(simulate, o);
  add_design(simulate, o);

  CLI::App* mesh = app.add_subcommand("mesh", "Triangulate the spatial domain");
  add_common(mesh, o);
  add_design(mesh, o);
  add_mesh_opts(mesh, o);
  mesh->add_option("--dataset", o.dataset_path, "dataset CSV to mesh")
      ->check(CLI::ExistingFile);

  std::string mesh_path, method_name = "auto";
  CLI::App* basis =
      app.add_subcommand("basis", "Eigenvectors of the mesh Moran operator");
  add_common(basis, o);
  basis->add_option("--mesh", mesh_path, "mesh file from `picar mesh`")
      ->required()
      ->check(CLI::ExistingFile);
  basis->add_option("--method", method_name, "auto, lanczos or dense");
  basis->add_option("--rank-max", o.rank_max, "eigenpair budget");

  CLI::App* select =
      app.add_subcommand("select-rank", "Screen basis ranks on held-out error");
  add_common(select, o);
  add_design(select, o);
  add_mesh_opts(select, o);
  add_model_opts(select, o);
  select->add_option("--dataset", o.dataset_path, "dataset CSV to screen")
      ->check(CLI::ExistingFile);

  CLI::App* fit = app.add_subcommand(
      "fit", "Full pipeline: mesh, basis, rank, sampler, prediction");
  add_common(fit, o);
  add_design(fit, o);
  add_mesh_opts(fit, o);
  add_model_opts(fit, o);
  fit->add_option("--dataset", o.dataset_path, "dataset CSV to fit")
      ->check(CLI::ExistingFile);

  std::string chain_dir, basis_path;
  CLI::App* predict =
      app.add_subcommand("predict", "Posterior predictions at new locations");
  add_common(predict, o);
  predict->add_option("--chain", chain_dir, "chain directory from `picar fit`")
      ->required()
      ->check(CLI::ExistingDirectory);
  predict->add_option("--mesh", mesh_path, "mesh file used at fit time")
      ->required()
      ->check(CLI::ExistingFile);
  predict->add_option("--basis", basis_path, "basis file used at fit time")
      ->required()
      ->check(CLI::ExistingFile);
  predict->add_option("--dataset", o.dataset_path,
                      "dataset CSV; its cv split provides the locations")
      ->required()
      ->check(CLI::ExistingFile);
  predict->add_option("--threshold", o.threshold,
                      "binary classification cut");

  std::string preset;
  CLI::App* study = app.add_subcommand(
      "study", "Replication study: tables, plots and a manifest");
  add_common(study, o);
  add_design(study, o);
  add_mesh_opts(study, o);
  add_model_opts(study, o);
  study
      ->add_option("preset", preset,
                   "binary, poisson, ordinal, svc, mesh_sweep, basis_compare "
                   "or coverage")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) return cmd_simulate(o);
    if (mesh->parsed()) return cmd_mesh(o);
    if (basis->parsed()) return cmd_basis(o, mesh_path, method_name);
    if (select->parsed()) return cmd_select_rank(o);
    if (fit->parsed()) return cmd_fit(o);
    if (predict->parsed()) return cmd_predict(o, chain_dir, mesh_path, basis_path);
    if (study->parsed()) return cmd_study(o, preset);
  } catch (const std::exception& e) {
    std::cerr << "picar: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
