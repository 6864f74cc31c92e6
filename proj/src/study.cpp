#include "picar/study.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "picar/digest.hpp"
#include "picar/svg.hpp"

namespace picar {

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";
const double kNan = std::numeric_limits<double>::quiet_NaN();

std::string fmt_num(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// File-name stem for a family's study outputs.
std::string study_prefix(Family family) {
  switch (family) {
    case Family::kBinary: return "binary";
    case Family::kCount: return "poisson";
    case Family::kOrdinal: return "ordinal";
    case Family::kSvc: return "svc";
  }
  return "study";
}

const ParameterSummary& find_param(const std::vector<ParameterSummary>& params,
                                   const std::string& name) {
  for (const auto& p : params)
    if (p.name == name) return p;
  throw std::logic_error("missing parameter summary: " + name);
}

// Runs `work(i)` for i in [0, count) on up to `jobs` workers. Returns one
// error string per cell, empty on success. Output slots are preassigned, so
// results land identically for any worker count.
std::vector<std::string> parallel_cells(int count, int jobs,
                                        const std::function<void(int)>& work) {
  std::vector<std::string> errors(count);
  auto guarded = [&](int i) {
    try {
      work(i);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  jobs = std::max(1, std::min(jobs, count));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) guarded(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (int t = 0; t < jobs; ++t)
      pool.emplace_back([&]() {
        for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1))
          guarded(i);
      });
    for (auto& th : pool) th.join();
  }
  return errors;
}

double parse_nu(const json& v) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "Inf" || s == "infinity")
      return std::numeric_limits<double>::infinity();
    throw std::invalid_argument("nu must be a number or \"inf\"");
  }
  return v.get<double>();
}

json nu_to_json(double nu) {
  if (std::isinf(nu)) return "inf";
  return nu;
}

}  // namespace

void StudyConfig::validate() const {
  std::vector<std::string> problems;
  if (n < 1) problems.push_back("n must be >= 1");
  if (n_cv < 0) problems.push_back("n_cv must be >= 0");
  if (!rank && n_cv < 1)
    problems.push_back("rank selection needs held-out rows (n_cv >= 1)");
  if (beta.empty()) problems.push_back("beta must have at least one entry");
  for (double b : beta)
    if (!std::isfinite(b)) {
      problems.push_back("beta entries must be finite");
      break;
    }
  if (!(matern.sigma2 >= 0)) problems.push_back("matern sigma2 must be >= 0");
  if (!(matern.phi > 0)) problems.push_back("matern phi must be > 0");
  try {
    (void)picar::matern(1.0, matern);
  } catch (const std::exception& e) {
    problems.push_back(e.what());
  }
  if (covariate_sd < 0) problems.push_back("covariate_sd must be >= 0");
  if (nugget_sd < 0) problems.push_back("nugget_sd must be >= 0");
  if (family == Family::kOrdinal) {
    if (theta.empty() || theta[0] != 0.0)
      problems.push_back("theta must start at 0");
    for (size_t j = 1; j < theta.size(); ++j)
      if (!(theta[j] > theta[j - 1])) {
        problems.push_back("theta must be strictly increasing");
        break;
      }
  }
  if (family == Family::kSvc) {
    if (!svc_cross.isApprox(svc_cross.transpose()))
      problems.push_back("svc_cross must be symmetric");
    else if (svc_cross(0, 0) <= 0 ||
             svc_cross.determinant() <= 0)
      problems.push_back("svc_cross must be positive definite");
  }
  if (mesh_nodes < 4) problems.push_back("mesh_nodes must be >= 4");
  if (mesh_buffer < 0) problems.push_back("mesh_buffer must be >= 0");
  if (rank_max < 2) problems.push_back("rank_max must be >= 2");
  for (int p : rank_grid)
    if (p < 1 || p > rank_max) {
      problems.push_back("rank_grid entries must lie in [1, rank_max]");
      break;
    }
  if (rank && *rank < 1) problems.push_back("rank must be >= 1");
  if (rank && *rank > rank_max)
    problems.push_back("rank must not exceed rank_max");
  if (!(car_rho > -1.0 && car_rho < 1.0))
    problems.push_back("car_rho must lie in (-1, 1)");
  if (!(threshold > 0.0 && threshold < 1.0))
    problems.push_back("threshold must lie in (0, 1)");
  if (mcmc.burn_in < 0) problems.push_back("mcmc burn_in must be >= 0");
  if (mcmc.iterations <= mcmc.burn_in)
    problems.push_back("mcmc iterations must exceed burn_in");
  if (mcmc.thin < 1) problems.push_back("mcmc thin must be >= 1");
  if (mcmc.iterations > mcmc.burn_in &&
      mcmc.iterations - mcmc.burn_in < mcmc.thin)
    problems.push_back("mcmc would store no draws after burn-in and thinning");
  if (replicates < 1) problems.push_back("replicates must be >= 1");
  if (jobs < 1) problems.push_back("jobs must be >= 1");
  if (output_dir.empty()) problems.push_back("output_dir must not be empty");

  if (!problems.empty()) {
    std::string msg = "invalid study config:";
    for (const auto& s : problems) msg += "\n  - " + s;
    throw std::invalid_argument(msg);
  }
}

StudyConfig StudyConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") +
                                e.what());
  }
  if (!j.is_object())
    throw std::invalid_argument("config must be a JSON object");

  StudyConfig cfg;
  std::vector<std::string> problems;
  const std::set<std::string> known = {
      "family",    "n",         "n_cv",      "beta",       "matern",
      "covariate_sd", "nugget_sd", "theta",  "svc_cross",  "mesh",
      "rank",      "precision", "threshold", "mcmc",       "replicates",
      "jobs",      "seed",      "output_dir"};
  for (const auto& item : j.items())
    if (!known.count(item.key()))
      problems.push_back("unknown key '" + item.key() + "'");

  auto grab = [&](const char* key, const std::function<void(const json&)>& fn) {
    if (!j.contains(key)) return;
    try {
      fn(j.at(key));
    } catch (const std::exception& e) {
      problems.push_back(std::string(key) + ": " + e.what());
    }
  };

  grab("family", [&](const json& v) {
    cfg.family = family_from_string(v.get<std::string>());
  });
  grab("n", [&](const json& v) { cfg.n = v.get<int>(); });
  grab("n_cv", [&](const json& v) { cfg.n_cv = v.get<int>(); });
  grab("beta", [&](const json& v) { cfg.beta = v.get<std::vector<double>>(); });
  grab("matern", [&](const json& v) {
    if (v.contains("sigma2")) cfg.matern.sigma2 = v.at("sigma2").get<double>();
    if (v.contains("phi")) cfg.matern.phi = v.at("phi").get<double>();
    if (v.contains("nu")) cfg.matern.nu = parse_nu(v.at("nu"));
    for (const auto& item : v.items())
      if (item.key() != "sigma2" && item.key() != "phi" && item.key() != "nu")
        throw std::invalid_argument("unknown key '" + item.key() + "'");
  });
  grab("covariate_sd",
       [&](const json& v) { cfg.covariate_sd = v.get<double>(); });
  grab("nugget_sd", [&](const json& v) { cfg.nugget_sd = v.get<double>(); });
  grab("theta",
       [&](const json& v) { cfg.theta = v.get<std::vector<double>>(); });
  grab("svc_cross", [&](const json& v) {
    const auto rows = v.get<std::vector<std::vector<double>>>();
    if (rows.size() != 2 || rows[0].size() != 2 || rows[1].size() != 2)
      throw std::invalid_argument("svc_cross must be a 2x2 array");
    cfg.svc_cross << rows[0][0], rows[0][1], rows[1][0], rows[1][1];
  });
  grab("mesh", [&](const json& v) {
    if (v.contains("nodes")) cfg.mesh_nodes = v.at("nodes").get<int>();
    if (v.contains("buffer")) cfg.mesh_buffer = v.at("buffer").get<double>();
    for (const auto& item : v.items())
      if (item.key() != "nodes" && item.key() != "buffer")
        throw std::invalid_argument("unknown key '" + item.key() + "'");
  });
  grab("rank", [&](const json& v) {
    if (v.contains("max")) cfg.rank_max = v.at("max").get<int>();
    if (v.contains("grid"))
      cfg.rank_grid = v.at("grid").get<std::vector<int>>();
    if (v.contains("fixed") && !v.at("fixed").is_null())
      cfg.rank = v.at("fixed").get<int>();
    for (const auto& item : v.items())
      if (item.key() != "max" && item.key() != "grid" && item.key() != "fixed")
        throw std::invalid_argument("unknown key '" + item.key() + "'");
  });
  grab("precision", [&](const json& v) {
    if (v.contains("kind"))
      cfg.precision = precision_kind_from_string(v.at("kind").get<std::string>());
    if (v.contains("rho")) cfg.car_rho = v.at("rho").get<double>();
    for (const auto& item : v.items())
      if (item.key() != "kind" && item.key() != "rho")
        throw std::invalid_argument("unknown key '" + item.key() + "'");
  });
  grab("threshold", [&](const json& v) { cfg.threshold = v.get<double>(); });
  grab("mcmc", [&](const json& v) {
    if (v.contains("iterations"))
      cfg.mcmc.iterations = v.at("iterations").get<int>();
    if (v.contains("burn_in")) cfg.mcmc.burn_in = v.at("burn_in").get<int>();
    if (v.contains("thin")) cfg.mcmc.thin = v.at("thin").get<int>();
    if (v.contains("adapt")) cfg.mcmc.adapt = v.at("adapt").get<bool>();
    if (v.contains("beta_scale"))
      cfg.mcmc.beta_scale = v.at("beta_scale").get<double>();
    if (v.contains("delta_scale"))
      cfg.mcmc.delta_scale = v.at("delta_scale").get<double>();
    if (v.contains("alpha_scale"))
      cfg.mcmc.alpha_scale = v.at("alpha_scale").get<double>();
    const std::set<std::string> ok = {"iterations", "burn_in",     "thin",
                                      "adapt",      "beta_scale",
                                      "delta_scale", "alpha_scale"};
    for (const auto& item : v.items())
      if (!ok.count(item.key()))
        throw std::invalid_argument("unknown key '" + item.key() + "'");
  });
  grab("replicates", [&](const json& v) { cfg.replicates = v.get<int>(); });
  grab("jobs", [&](const json& v) { cfg.jobs = v.get<int>(); });
  grab("seed", [&](const json& v) { cfg.seed = v.get<std::uint64_t>(); });
  grab("output_dir",
       [&](const json& v) { cfg.output_dir = v.get<std::string>(); });

  if (!problems.empty()) {
    std::string msg = "invalid study config:";
    for (const auto& s : problems) msg += "\n  - " + s;
    throw std::invalid_argument(msg);
  }
  cfg.validate();
  return cfg;
}

StudyConfig StudyConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string StudyConfig::to_json_text() const {
  json j;
  j["family"] = to_string(family);
  j["n"] = n;
  j["n_cv"] = n_cv;
  j["beta"] = beta;
  j["matern"] = {{"sigma2", matern.sigma2},
                 {"phi", matern.phi},
                 {"nu", nu_to_json(matern.nu)}};
  j["covariate_sd"] = covariate_sd;
  j["nugget_sd"] = nugget_sd;
  j["theta"] = theta;
  j["svc_cross"] = {{svc_cross(0, 0), svc_cross(0, 1)},
                    {svc_cross(1, 0), svc_cross(1, 1)}};
  j["mesh"] = {{"nodes", mesh_nodes}, {"buffer", mesh_buffer}};
  j["rank"] = {{"max", rank_max},
               {"grid", rank_grid},
               {"fixed", rank ? json(*rank) : json(nullptr)}};
  j["precision"] = {{"kind", to_string(precision)}, {"rho", car_rho}};
  j["threshold"] = threshold;
  j["mcmc"] = {{"iterations", mcmc.iterations}, {"burn_in", mcmc.burn_in},
               {"thin", mcmc.thin},             {"adapt", mcmc.adapt},
               {"beta_scale", mcmc.beta_scale},
               {"delta_scale", mcmc.delta_scale},
               {"alpha_scale", mcmc.alpha_scale}};
  j["replicates"] = replicates;
  j["jobs"] = jobs;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  return j.dump(2);
}

Dataset generate_dataset(const StudyConfig& config, int replicate) {
  if (replicate < 0)
    throw std::invalid_argument("generate_dataset: replicate must be >= 0");
  GenConfig g;
  g.n = config.n;
  g.n_cv = config.n_cv;
  g.beta = Eigen::Map<const Eigen::VectorXd>(
      config.beta.data(), static_cast<Eigen::Index>(config.beta.size()));
  g.matern = config.matern;
  g.covariate_sd = config.covariate_sd;
  g.nugget_sd = config.nugget_sd;
  g.seed = Rng::derive_seed(config.seed, "dataset",
                            static_cast<std::uint64_t>(replicate));
  switch (config.family) {
    case Family::kBinary: return gen_binary(g);
    case Family::kCount: return gen_count(g);
    case Family::kOrdinal: return gen_ordinal(g, config.theta);
    case Family::kSvc: return gen_svc(g, config.svc_cross);
  }
  throw std::logic_error("generate_dataset: unhandled family");
}

int representative_replicate(const StudyConfig& config, int candidates) {
  if (candidates < 1)
    throw std::invalid_argument("representative_replicate: need candidates");
  std::vector<std::pair<double, int>> means;
  means.reserve(candidates);
  for (int r = 0; r < candidates; ++r) {
    const Dataset ds = generate_dataset(config, r);
    means.emplace_back(ds.z.mean(), r);
  }
  std::sort(means.begin(), means.end());
  return means[(candidates - 1) / 2].second;
}

ProjectedBasis project_dataset(const StudyConfig& config,
                               const Dataset& dataset) {
  ProjectedBasis pb;
  Timer mesh_timer;
  pb.mesh = build_mesh(dataset.fit_locations, config.mesh_nodes,
                       config.mesh_buffer, Rng::derive_seed(dataset.seed, "mesh"));
  pb.mesh_seconds = mesh_timer.seconds();

  Timer basis_timer;
  pb.graph = adjacency(pb.mesh);
  MoranOperator op(pb.graph);
  const int p_max = std::min(config.rank_max, op.size() - 1);
  pb.spectral = leading_eigenpairs(op, p_max, EigenMethod::kAuto,
                                   Rng::derive_seed(dataset.seed, "basis"));
  pb.fit_projector = projector(pb.mesh, dataset.fit_locations);
  pb.cv_projector = projector(pb.mesh, dataset.cv_locations);
  pb.fit_basis = pb.fit_projector * pb.spectral.vectors;
  pb.cv_basis = pb.cv_projector * pb.spectral.vectors;
  pb.basis_seconds = basis_timer.seconds();
  return pb;
}

FitResult fit_projected(const StudyConfig& config, const Dataset& dataset,
                        const ProjectedBasis& projected) {
  FitResult res;
  res.mesh_seconds = projected.mesh_seconds;
  res.basis_seconds = projected.basis_seconds;
  res.mesh_vertices = projected.mesh.vertex_count();
  res.basis_rank_available = static_cast<int>(projected.fit_basis.cols());
  res.cvmspe_value = kNan;
  res.mpr_value = kNan;

  const int avail = res.basis_rank_available;
  int rank;
  if (config.rank) {
    rank = *config.rank;
    if (rank > avail)
      throw std::invalid_argument(
          "fixed rank " + std::to_string(rank) + " exceeds the " +
          std::to_string(avail) + " available basis columns");
  } else {
    std::vector<int> grid;
    if (config.rank_grid.empty()) {
      const int cap = std::min(config.rank_max, avail);
      if (cap < 2)
        throw std::invalid_argument("basis has too few columns for the "
                                    "default rank grid");
      grid = default_rank_grid(cap);
    } else {
      for (int p : config.rank_grid)
        if (p <= avail) grid.push_back(p);
      if (grid.empty())
        throw std::invalid_argument(
            "no rank_grid entry fits the available basis columns");
    }
    Timer select_timer;
    res.selection = select_rank(dataset, projected.fit_basis,
                                projected.cv_basis, grid, config.jobs);
    res.select_seconds = select_timer.seconds();
    rank = res.selection.chosen;
  }
  res.rank = rank;

  const PrecisionKernel kernel =
      precision_kernel(config.precision, projected.graph,
                       projected.spectral.vectors.leftCols(rank),
                       config.car_rho);

  ModelSpec spec;
  spec.family = dataset.family;
  spec.ordinal_categories = dataset.ordinal_categories;
  spec.x = dataset.x;
  spec.z = dataset.z;
  spec.basis = projected.fit_basis.leftCols(rank);
  spec.kernel = kernel.matrix;

  ChainConfig chain_cfg = config.mcmc;
  chain_cfg.seed = Rng::derive_seed(dataset.seed, "chain");
  Timer mcmc_timer;
  res.chain = run_chain(spec, chain_cfg);
  res.mcmc_seconds = mcmc_timer.seconds();

  res.prediction = predict(res.chain, spec, projected.cv_basis.leftCols(rank),
                           dataset.x_cv, config.threshold);
  if (dataset.cv_size() > 0) {
    switch (dataset.family) {
      case Family::kBinary:
        res.cvmspe_value = cvmspe(dataset.z_cv, res.prediction.prediction);
        res.mpr_value = mpr(dataset.z_cv, res.prediction.classification);
        res.primary_metric = res.cvmspe_value;
        break;
      case Family::kCount:
      case Family::kSvc:
        res.cvmspe_value = cvmspe(dataset.z_cv, res.prediction.prediction);
        res.primary_metric = res.cvmspe_value;
        break;
      case Family::kOrdinal:
        res.mpr_value = mpr(dataset.z_cv, res.prediction.prediction);
        res.primary_metric = res.mpr_value;
        break;
    }
  }
  res.parameters = summarize_chain(res.chain);
  return res;
}

FitResult fit_dataset(const StudyConfig& config, const Dataset& dataset) {
  return fit_projected(config, dataset, project_dataset(config, dataset));
}

void StudyTable::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (size_t c = 0; c < columns.size(); ++c)
    out << (c ? "," : "") << columns[c];
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != columns.size())
      throw std::logic_error("table row width differs from header");
    for (size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
    out << '\n';
  }
}

namespace {

// Shared row layout for rank and precision tables: parameter summaries,
// error metric, sampler minutes.
void append_fit_columns(std::vector<std::string>& row, const FitResult& fit,
                        const StudyConfig& config) {
  for (size_t b = 0; b < config.beta.size(); ++b) {
    const auto& p =
        find_param(fit.parameters, "beta" + std::to_string(b + 1));
    row.push_back(fmt_num(p.mean));
    row.push_back(fmt_num(p.lower));
    row.push_back(fmt_num(p.upper));
  }
  if (config.family == Family::kOrdinal) {
    for (size_t a = 2; a < config.theta.size() + 1; ++a) {
      const auto& p = find_param(fit.parameters, "alpha" + std::to_string(a));
      row.push_back(fmt_num(p.mean));
    }
    row.push_back(fmt_num(fit.mpr_value));
  } else {
    row.push_back(fmt_num(fit.cvmspe_value));
  }
  row.push_back(fmt_num(fit.mcmc_seconds / 60.0));
}

std::vector<std::string> fit_column_names(const StudyConfig& config) {
  std::vector<std::string> names;
  for (size_t b = 0; b < config.beta.size(); ++b) {
    const std::string stem = "beta" + std::to_string(b + 1);
    names.push_back(stem + "_mean");
    names.push_back(stem + "_lo");
    names.push_back(stem + "_hi");
  }
  if (config.family == Family::kOrdinal) {
    for (size_t a = 2; a < config.theta.size() + 1; ++a)
      names.push_back("alpha" + std::to_string(a) + "_mean");
    names.push_back("mpr");
  } else {
    names.push_back("cvmspe");
  }
  names.push_back("time_min");
  return names;
}

}  // namespace

StudyResult family_study(const StudyConfig& config) {
  StudyResult out;
  const std::string prefix = study_prefix(config.family);
  out.name = prefix;
  Timer total;

  const int rep = representative_replicate(config);
  const Dataset dataset = generate_dataset(config, rep);
  const ProjectedBasis pb = project_dataset(config, dataset);
  out.mesh_seconds += pb.mesh_seconds;
  out.basis_seconds += pb.basis_seconds;

  FitResult chosen = fit_projected(config, dataset, pb);
  out.select_seconds += chosen.select_seconds;
  out.mcmc_seconds += chosen.mcmc_seconds;

  // Rank table: a fixed ladder plus the heuristic choice.
  std::vector<int> ranks;
  for (int r : {10, 25, 50, 75, 100})
    if (r <= chosen.basis_rank_available) ranks.push_back(r);
  if (std::find(ranks.begin(), ranks.end(), chosen.rank) == ranks.end())
    ranks.push_back(chosen.rank);
  std::sort(ranks.begin(), ranks.end());

  std::vector<FitResult> fits(ranks.size());
  const auto errors = parallel_cells(
      static_cast<int>(ranks.size()), config.jobs, [&](int i) {
        if (ranks[i] == chosen.rank) {
          fits[i] = chosen;
          return;
        }
        StudyConfig cell = config;
        cell.rank = ranks[i];
        cell.jobs = 1;
        fits[i] = fit_projected(cell, dataset, pb);
      });

  StudyTable rank_table;
  rank_table.columns = {"rank", "chosen"};
  for (const auto& c : fit_column_names(config)) rank_table.columns.push_back(c);
  PlotSeries series;
  series.label = "picar";
  for (size_t i = 0; i < ranks.size(); ++i) {
    if (!errors[i].empty()) {
      out.failures.push_back("rank " + std::to_string(ranks[i]) + ": " +
                             errors[i]);
      continue;
    }
    out.mcmc_seconds += ranks[i] == chosen.rank ? 0.0 : fits[i].mcmc_seconds;
    std::vector<std::string> row = {std::to_string(ranks[i]),
                                    ranks[i] == chosen.rank ? "yes" : "no"};
    append_fit_columns(row, fits[i], config);
    rank_table.rows.push_back(std::move(row));
    series.x.push_back(ranks[i]);
    series.y.push_back(fits[i].primary_metric);
  }

  // Precision-kind table at the chosen rank.
  const PrecisionKind kinds[] = {PrecisionKind::kIdentity, PrecisionKind::kIcar,
                                 PrecisionKind::kCar};
  std::vector<FitResult> kind_fits(3);
  const auto kind_errors = parallel_cells(3, config.jobs, [&](int i) {
    if (kinds[i] == config.precision) {
      kind_fits[i] = chosen;
      return;
    }
    StudyConfig cell = config;
    cell.precision = kinds[i];
    cell.rank = chosen.rank;
    cell.jobs = 1;
    kind_fits[i] = fit_projected(cell, dataset, pb);
  });

  StudyTable prec_table;
  prec_table.columns = {"precision", "rank"};
  for (const auto& c : fit_column_names(config)) prec_table.columns.push_back(c);
  for (int i = 0; i < 3; ++i) {
    if (!kind_errors[i].empty()) {
      out.failures.push_back("precision " + to_string(kinds[i]) + ": " +
                             kind_errors[i]);
      continue;
    }
    if (kinds[i] != config.precision) out.mcmc_seconds += kind_fits[i].mcmc_seconds;
    std::vector<std::string> row = {to_string(kinds[i]),
                                    std::to_string(kind_fits[i].rank)};
    append_fit_columns(row, kind_fits[i], config);
    prec_table.rows.push_back(std::move(row));
  }

  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);
  const fs::path dir(config.output_dir);
  const fs::path rank_csv = dir / (prefix + "_rank.csv");
  const fs::path prec_csv = dir / (prefix + "_precision.csv");
  const fs::path rank_svg = dir / (prefix + "_rank.svg");
  rank_table.save_csv(rank_csv);
  prec_table.save_csv(prec_csv);
  write_line_plot(rank_svg.string(), prefix + " rank sweep", "rank",
                  config.family == Family::kOrdinal ? "mpr" : "cvmspe",
                  {series});
  out.tables.emplace_back(prefix + "_rank", std::move(rank_table));
  out.tables.emplace_back(prefix + "_precision", std::move(prec_table));
  out.outputs = {rank_csv, prec_csv, rank_svg};
  out.total_seconds = total.seconds();
  return out;
}

StudyResult coverage_study(const StudyConfig& config) {
  StudyResult out;
  const std::string prefix = study_prefix(config.family);
  out.name = prefix + "_coverage";
  Timer total;

  const int n_rep = config.replicates;
  const int k = static_cast<int>(config.beta.size());
  const PrecisionKind kinds[] = {PrecisionKind::kIdentity, PrecisionKind::kIcar,
                                 PrecisionKind::kCar};

  struct RepOutcome {
    bool ok = false;
    int rank = 0;
    // contained[kind][coefficient]
    std::array<std::vector<bool>, 3> contained;
    double mesh_s = 0, basis_s = 0, select_s = 0, mcmc_s = 0;
  };
  std::vector<RepOutcome> reps(n_rep);

  const auto errors = parallel_cells(n_rep, config.jobs, [&](int r) {
    RepOutcome& rep = reps[r];
    const Dataset dataset = generate_dataset(config, r);
    const ProjectedBasis pb = project_dataset(config, dataset);
    rep.mesh_s = pb.mesh_seconds;
    rep.basis_s = pb.basis_seconds;

    // The rank heuristic is precision-free, so resolve it once and pin it
    // for all three kernels.
    StudyConfig base = config;
    base.jobs = 1;
    for (int i = 0; i < 3; ++i) {
      StudyConfig cell = base;
      cell.precision = kinds[i];
      if (i > 0) cell.rank = rep.rank;
      const FitResult fit = fit_projected(cell, dataset, pb);
      if (i == 0) {
        rep.rank = fit.rank;
        rep.select_s = fit.select_seconds;
      }
      rep.mcmc_s += fit.mcmc_seconds;
      rep.contained[i].resize(k);
      for (int b = 0; b < k; ++b) {
        const auto& p =
            find_param(fit.parameters, "beta" + std::to_string(b + 1));
        rep.contained[i][b] =
            p.lower <= config.beta[b] && config.beta[b] <= p.upper;
      }
    }
    rep.ok = true;
  });

  int failed = 0;
  for (int r = 0; r < n_rep; ++r) {
    if (!errors[r].empty()) {
      out.failures.push_back("replicate " + std::to_string(r) + ": " +
                             errors[r]);
      ++failed;
      continue;
    }
    out.mesh_seconds += reps[r].mesh_s;
    out.basis_seconds += reps[r].basis_s;
    out.select_seconds += reps[r].select_s;
    out.mcmc_seconds += reps[r].mcmc_s;
  }

  StudyTable table;
  table.columns = {"precision", "replicates", "failed"};
  for (int b = 0; b < k; ++b)
    table.columns.push_back("coverage_beta" + std::to_string(b + 1));
  for (int i = 0; i < 3; ++i) {
    std::vector<std::string> row = {to_string(kinds[i]),
                                    std::to_string(n_rep - failed),
                                    std::to_string(failed)};
    for (int b = 0; b < k; ++b) {
      int hits = 0, used = 0;
      for (int r = 0; r < n_rep; ++r) {
        if (!reps[r].ok) continue;
        ++used;
        hits += reps[r].contained[i][b] ? 1 : 0;
      }
      row.push_back(used > 0 ? fmt_num(static_cast<double>(hits) / used) : "");
    }
    table.rows.push_back(std::move(row));
  }

  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);
  const fs::path csv = fs::path(config.output_dir) / (prefix + "_coverage.csv");
  table.save_csv(csv);
  out.tables.emplace_back(prefix + "_coverage", std::move(table));
  out.outputs = {csv};
  out.total_seconds = total.seconds();
  return out;
}

StudyResult mesh_sweep_study(const StudyConfig& config) {
  StudyResult out;
  out.name = "mesh_sweep";
  Timer total;

  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> nus = {0.5, 2.5, inf};
  const std::vector<int> densities = {100, 500, 750, 1000, 1500, 2000};

  // One dataset per smoothness; every mesh density refits the same data.
  std::vector<Dataset> datasets;
  datasets.reserve(nus.size());
  for (size_t v = 0; v < nus.size(); ++v) {
    StudyConfig gen = config;
    gen.matern.nu = nus[v];
    datasets.push_back(generate_dataset(gen, static_cast<int>(v)));
  }

  const int cells = static_cast<int>(nus.size() * densities.size());
  std::vector<FitResult> fits(cells);
  const auto errors = parallel_cells(cells, config.jobs, [&](int c) {
    const size_t v = c / densities.size();
    const int m = densities[c % densities.size()];
    StudyConfig cell = config;
    cell.matern.nu = nus[v];
    cell.mesh_nodes = m;
    cell.jobs = 1;
    fits[c] = fit_dataset(cell, datasets[v]);
  });

  StudyTable table;
  table.columns = {"nu",
                   "target_nodes",
                   "vertices",
                   "rank",
                   "metric",
                   "misclassification",
                   "mean_prediction_sd",
                   "time_min"};
  std::vector<PlotSeries> series(nus.size());
  for (size_t v = 0; v < nus.size(); ++v)
    series[v].label = "nu=" + fmt_num(nus[v]);
  for (int c = 0; c < cells; ++c) {
    const size_t v = c / densities.size();
    const int m = densities[c % densities.size()];
    const std::string label = "nu=" + fmt_num(nus[v]) + " nodes=" +
                              std::to_string(m);
    if (!errors[c].empty()) {
      out.failures.push_back(label + ": " + errors[c]);
      continue;
    }
    const FitResult& fit = fits[c];
    out.mesh_seconds += fit.mesh_seconds;
    out.basis_seconds += fit.basis_seconds;
    out.select_seconds += fit.select_seconds;
    out.mcmc_seconds += fit.mcmc_seconds;
    const double mean_sd =
        fit.prediction.sd.size() > 0 ? fit.prediction.sd.mean() : kNan;
    table.rows.push_back({fmt_num(nus[v]), std::to_string(m),
                          std::to_string(fit.mesh_vertices),
                          std::to_string(fit.rank),
                          fmt_num(fit.primary_metric), fmt_num(fit.mpr_value),
                          fmt_num(mean_sd),
                          fmt_num(fit.mcmc_seconds / 60.0)});
    series[v].x.push_back(fit.mesh_vertices);
    series[v].y.push_back(mean_sd);
  }

  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);
  const fs::path csv = fs::path(config.output_dir) / "mesh_sweep.csv";
  const fs::path svg = fs::path(config.output_dir) / "mesh_sweep.svg";
  table.save_csv(csv);
  write_line_plot(svg.string(), "mesh density sweep", "mesh vertices",
                  "mean prediction sd", series);
  out.tables.emplace_back("mesh_sweep", std::move(table));
  out.outputs = {csv, svg};
  out.total_seconds = total.seconds();
  return out;
}

StudyResult basis_compare_study(const StudyConfig& config) {
  if (config.family != Family::kSvc)
    throw std::invalid_argument("basis_compare runs on the svc design");
  StudyResult out;
  out.name = "basis_compare";
  Timer total;

  const int rep = representative_replicate(config);
  const Dataset dataset = generate_dataset(config, rep);
  const ProjectedBasis pb = project_dataset(config, dataset);
  out.mesh_seconds += pb.mesh_seconds;
  out.basis_seconds += pb.basis_seconds;

  struct RowResult {
    FitResult fit;
    double heuristic = kNan;
    int rank = 0;
  };
  const std::vector<std::string> names = {"picar", "matern_eig", "bisquare",
                                          "thin_plate"};
  std::vector<RowResult> rows(names.size());

  auto knot_fit = [&](bool bisquare) {
    // Knots tile the observed domain (not the buffered mesh box). The knot
    // count is selected by the same held-out GLM screen, one grid per
    // candidate side; the bisquare radius scales with knot spacing so every
    // candidate keeps proportional support.
    std::array<double, 4> bounds = {dataset.fit_locations[0].x,
                                    dataset.fit_locations[0].y,
                                    dataset.fit_locations[0].x,
                                    dataset.fit_locations[0].y};
    auto widen = [&](const std::vector<Point2>& pts) {
      for (const auto& p : pts) {
        bounds[0] = std::min(bounds[0], p.x);
        bounds[1] = std::min(bounds[1], p.y);
        bounds[2] = std::max(bounds[2], p.x);
        bounds[3] = std::max(bounds[3], p.y);
      }
    };
    widen(dataset.fit_locations);
    widen(dataset.cv_locations);
    double best_score = std::numeric_limits<double>::infinity();
    int best_side = 0;
    Eigen::MatrixXd best_fit, best_cv;
    Timer select_timer;
    for (int side = 5; side <= 11; ++side) {
      const auto knots = knot_grid(side, bounds);
      const double spacing = std::max(bounds[2] - bounds[0],
                                      bounds[3] - bounds[1]) /
                             (side - 1);
      Eigen::MatrixXd bf, bc;
      if (bisquare) {
        bf = bisquare_basis(dataset.fit_locations, knots, 2.1 * spacing);
        bc = bisquare_basis(dataset.cv_locations, knots, 2.1 * spacing);
      } else {
        bf = thin_plate_basis(dataset.fit_locations, knots);
        bc = thin_plate_basis(dataset.cv_locations, knots);
      }
      const std::vector<int> grid = {static_cast<int>(bf.cols())};
      double score;
      try {
        score = select_rank(dataset, bf, bc, grid, 1).score[0];
      } catch (const std::exception&) {
        continue;
      }
      if (score < best_score) {
        best_score = score;
        best_side = side;
        best_fit = std::move(bf);
        best_cv = std::move(bc);
      }
    }
    if (best_side == 0)
      throw std::runtime_error("no knot grid produced a converged screen fit");

    ProjectedBasis kb;
    kb.mesh = pb.mesh;
    kb.graph = pb.graph;
    kb.spectral.vectors = best_fit;  // placeholder; identity kernel ignores it
    kb.fit_basis = best_fit;
    kb.cv_basis = best_cv;
    StudyConfig cell = config;
    cell.precision = PrecisionKind::kIdentity;
    cell.rank = static_cast<int>(best_fit.cols());
    cell.jobs = 1;
    RowResult rr;
    rr.fit = fit_projected(cell, dataset, kb);
    rr.fit.select_seconds =
        std::max(0.0, select_timer.seconds() - rr.fit.mcmc_seconds);
    rr.heuristic = best_score;
    rr.rank = rr.fit.rank;
    return rr;
  };

  const auto errors = parallel_cells(
      static_cast<int>(names.size()), config.jobs, [&](int i) {
        if (names[i] == "picar") {
          StudyConfig cell = config;
          cell.jobs = 1;
          RowResult rr;
          rr.fit = fit_projected(cell, dataset, pb);
          rr.rank = rr.fit.rank;
          rr.heuristic = rr.fit.selection.grid.empty()
                             ? kNan
                             : rr.fit.selection.score[rr.fit.selection.chosen_index];
          rows[i] = std::move(rr);
        } else if (names[i] == "matern_eig") {
          const int cap =
              std::min(config.rank_max, pb.mesh.vertex_count() - 1);
          SpectralBasis mat =
              matern_eigenbasis(pb.mesh.vertices, config.matern, cap);
          // Karhunen-Loeve weighting: column j scaled by sqrt(lambda_j) so
          // the identity coefficient prior matches the process prior.
          // Unweighted trailing eigenvectors are likelihood-invisible at the
          // fit sites yet nonzero at held-out ones, and their coefficients
          // drift into absurd predictions. Numerically dead pairs go too.
          int keep = 0;
          while (keep < mat.eigenvalues.size() &&
                 mat.eigenvalues[keep] > 1e-8 * mat.eigenvalues[0])
            ++keep;
          mat.vectors = mat.vectors.leftCols(keep).eval();
          mat.eigenvalues = mat.eigenvalues.head(keep).eval();
          for (int j = 0; j < keep; ++j)
            mat.vectors.col(j) *= std::sqrt(mat.eigenvalues[j]);
          ProjectedBasis mb;
          mb.mesh = pb.mesh;
          mb.graph = pb.graph;
          mb.spectral = std::move(mat);
          mb.fit_basis = pb.fit_projector * mb.spectral.vectors;
          mb.cv_basis = pb.cv_projector * mb.spectral.vectors;
          StudyConfig cell = config;
          cell.precision = PrecisionKind::kIdentity;
          cell.jobs = 1;
          RowResult rr;
          rr.fit = fit_projected(cell, dataset, mb);
          rr.rank = rr.fit.rank;
          rr.heuristic = rr.fit.selection.grid.empty()
                             ? kNan
                             : rr.fit.selection.score[rr.fit.selection.chosen_index];
          rows[i] = std::move(rr);
        } else {
          rows[i] = knot_fit(names[i] == "bisquare");
        }
      });

  StudyTable table;
  table.columns = {"basis", "rank", "heuristic_score", "cvmspe", "time_min"};
  for (size_t i = 0; i < names.size(); ++i) {
    if (!errors[i].empty()) {
      out.failures.push_back(names[i] + ": " + errors[i]);
      continue;
    }
    const RowResult& rr = rows[i];
    out.select_seconds += rr.fit.select_seconds;
    out.mcmc_seconds += rr.fit.mcmc_seconds;
    table.rows.push_back({names[i], std::to_string(rr.rank),
                          fmt_num(rr.heuristic), fmt_num(rr.fit.cvmspe_value),
                          fmt_num(rr.fit.mcmc_seconds / 60.0)});
  }

  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);
  const fs::path csv = fs::path(config.output_dir) / "basis_compare.csv";
  table.save_csv(csv);
  out.tables.emplace_back("basis_compare", std::move(table));
  out.outputs = {csv};
  out.total_seconds = total.seconds();
  return out;
}

StudyResult run_study(const std::string& preset, StudyConfig config) {
  StudyResult res;
  Timer total;
  if (preset == "binary") {
    config.family = Family::kBinary;
    res = family_study(config);
  } else if (preset == "poisson") {
    config.family = Family::kCount;
    res = family_study(config);
  } else if (preset == "ordinal") {
    config.family = Family::kOrdinal;
    res = family_study(config);
  } else if (preset == "svc") {
    config.family = Family::kSvc;
    res = family_study(config);
  } else if (preset == "mesh_sweep") {
    res = mesh_sweep_study(config);
  } else if (preset == "basis_compare") {
    config.family = Family::kSvc;
    res = basis_compare_study(config);
  } else if (preset == "coverage") {
    res = coverage_study(config);
  } else {
    throw std::invalid_argument(
        "unknown study preset '" + preset +
        "' (expected binary, poisson, ordinal, svc, mesh_sweep, "
        "basis_compare or coverage)");
  }
  res.name = preset;
  res.total_seconds = total.seconds();
  write_manifest(config, preset, res);
  return res;
}

std::vector<std::filesystem::path> simulate_datasets(const StudyConfig& config) {
  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);
  StudyResult res;
  res.name = "simulate";
  Timer total;
  for (int r = 0; r < config.replicates; ++r) {
    const Dataset ds = generate_dataset(config, r);
    char name[40];
    std::snprintf(name, sizeof(name), "dataset_%03d.csv", r);
    const fs::path path = fs::path(config.output_dir) / name;
    save_dataset_csv(ds, path);
    res.outputs.push_back(path);
  }
  res.total_seconds = total.seconds();
  write_manifest(config, "simulate", res);
  return res.outputs;
}

void write_manifest(const StudyConfig& config, const std::string& name,
                    const StudyResult& result) {
  json j;
  j["name"] = name;
  j["config"] = json::parse(config.to_json_text());
  j["config_hash"] = sha256_hex(config.to_json_text());
  j["seed"] = config.seed;
  j["versions"] = {
      {"picar", kVersion},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                    std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"compiler", __VERSION__},
  };
  j["stage_seconds"] = {{"mesh", result.mesh_seconds},
                        {"basis", result.basis_seconds},
                        {"rank_selection", result.select_seconds},
                        {"mcmc", result.mcmc_seconds},
                        {"total", result.total_seconds}};
  j["outputs"] = json::array();
  for (const auto& path : result.outputs)
    j["outputs"].push_back({{"path", path.string()},
                            {"sha256", sha256_file_hex(path.string())}});
  j["failures"] = result.failures;

  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);
  const fs::path path =
      fs::path(config.output_dir) / (name + "_manifest.json");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace picar
