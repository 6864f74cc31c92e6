// Python bindings for the main pipeline operations. Heavy calls release the
// GIL; study-cell workers never touch Python objects.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "picar/study.hpp"

namespace py = pybind11;
using namespace picar;

namespace {

Eigen::MatrixXd points_to_array(const std::vector<Point2>& pts) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(pts.size()), 2);
  for (size_t i = 0; i < pts.size(); ++i) {
    out(static_cast<Eigen::Index>(i), 0) = pts[i].x;
    out(static_cast<Eigen::Index>(i), 1) = pts[i].y;
  }
  return out;
}

std::vector<Point2> array_to_points(
    const Eigen::Ref<const Eigen::MatrixXd>& a) {
  if (a.cols() != 2)
    throw std::invalid_argument("locations must be an (n, 2) array");
  std::vector<Point2> pts(static_cast<size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) pts[i] = {a(i, 0), a(i, 1)};
  return pts;
}

Eigen::MatrixXi triangles_to_array(const std::vector<std::array<int, 3>>& t) {
  Eigen::MatrixXi out(static_cast<Eigen::Index>(t.size()), 3);
  for (size_t i = 0; i < t.size(); ++i)
    for (int j = 0; j < 3; ++j) out(static_cast<Eigen::Index>(i), j) = t[i][j];
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Low-rank spatial generalized linear mixed models via mesh "
            "projection";
  m.attr("__version__") = "0.1.0";

  py::enum_<Family>(m, "Family")
      .value("binary", Family::kBinary)
      .value("count", Family::kCount)
      .value("svc", Family::kSvc)
      .value("ordinal", Family::kOrdinal);
  py::enum_<PrecisionKind>(m, "PrecisionKind")
      .value("ind", PrecisionKind::kIdentity)
      .value("icar", PrecisionKind::kIcar)
      .value("car", PrecisionKind::kCar);
  py::enum_<EigenMethod>(m, "EigenMethod")
      .value("auto", EigenMethod::kAuto)
      .value("lanczos", EigenMethod::kLanczos)
      .value("dense", EigenMethod::kDense);

  py::class_<MaternParams>(m, "MaternParams")
      .def(py::init<>())
      .def_readwrite("sigma2", &MaternParams::sigma2)
      .def_readwrite("phi", &MaternParams::phi)
      .def_readwrite("nu", &MaternParams::nu);

  py::class_<ChainConfig>(m, "ChainConfig")
      .def(py::init<>())
      .def_readwrite("iterations", &ChainConfig::iterations)
      .def_readwrite("burn_in", &ChainConfig::burn_in)
      .def_readwrite("thin", &ChainConfig::thin)
      .def_readwrite("seed", &ChainConfig::seed)
      .def_readwrite("adapt", &ChainConfig::adapt)
      .def_readwrite("beta_scale", &ChainConfig::beta_scale)
      .def_readwrite("delta_scale", &ChainConfig::delta_scale)
      .def_readwrite("alpha_scale", &ChainConfig::alpha_scale);

  py::class_<StudyConfig>(m, "StudyConfig")
      .def(py::init<>())
      .def_readwrite("family", &StudyConfig::family)
      .def_readwrite("n", &StudyConfig::n)
      .def_readwrite("n_cv", &StudyConfig::n_cv)
      .def_readwrite("beta", &StudyConfig::beta)
      .def_readwrite("matern", &StudyConfig::matern)
      .def_readwrite("covariate_sd", &StudyConfig::covariate_sd)
      .def_readwrite("nugget_sd", &StudyConfig::nugget_sd)
      .def_readwrite("theta", &StudyConfig::theta)
      .def_readwrite("svc_cross", &StudyConfig::svc_cross)
      .def_readwrite("mesh_nodes", &StudyConfig::mesh_nodes)
      .def_readwrite("mesh_buffer", &StudyConfig::mesh_buffer)
      .def_readwrite("rank_max", &StudyConfig::rank_max)
      .def_readwrite("rank_grid", &StudyConfig::rank_grid)
      .def_readwrite("rank", &StudyConfig::rank)
      .def_readwrite("precision", &StudyConfig::precision)
      .def_readwrite("car_rho", &StudyConfig::car_rho)
      .def_readwrite("threshold", &StudyConfig::threshold)
      .def_readwrite("mcmc", &StudyConfig::mcmc)
      .def_readwrite("replicates", &StudyConfig::replicates)
      .def_readwrite("jobs", &StudyConfig::jobs)
      .def_readwrite("seed", &StudyConfig::seed)
      .def_readwrite("output_dir", &StudyConfig::output_dir)
      .def("validate", &StudyConfig::validate)
      .def("to_json", &StudyConfig::to_json_text)
      .def_static("from_json", &StudyConfig::from_json_text, py::arg("text"))
      .def_static("from_file", &StudyConfig::from_json_file, py::arg("path"));

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("family",
                             [](const Dataset& d) { return d.family; })
      .def_property_readonly(
          "locations",
          [](const Dataset& d) { return points_to_array(d.fit_locations); })
      .def_property_readonly(
          "cv_locations",
          [](const Dataset& d) { return points_to_array(d.cv_locations); })
      .def_readonly("x", &Dataset::x)
      .def_readonly("z", &Dataset::z)
      .def_readonly("x_cv", &Dataset::x_cv)
      .def_readonly("z_cv", &Dataset::z_cv)
      .def_readonly("latent", &Dataset::latent)
      .def_readonly("true_beta", &Dataset::true_beta)
      .def_readonly("seed", &Dataset::seed)
      .def_property_readonly("size", &Dataset::size)
      .def_property_readonly("cv_size", &Dataset::cv_size)
      .def_property_readonly("covariates", &Dataset::covariates);

  py::class_<Mesh>(m, "Mesh")
      .def_property_readonly(
          "vertices", [](const Mesh& m_) { return points_to_array(m_.vertices); })
      .def_property_readonly(
          "triangles",
          [](const Mesh& m_) { return triangles_to_array(m_.triangles); })
      .def_readonly("bounds", &Mesh::bounds)
      .def_property_readonly("vertex_count", &Mesh::vertex_count)
      .def_property_readonly("triangle_count", &Mesh::triangle_count);

  py::class_<SpectralBasis>(m, "SpectralBasis")
      .def_readonly("vectors", &SpectralBasis::vectors)
      .def_readonly("eigenvalues", &SpectralBasis::eigenvalues)
      .def_readonly("requested", &SpectralBasis::requested);

  py::class_<RankSelection>(m, "RankSelection")
      .def_readonly("grid", &RankSelection::grid)
      .def_readonly("score", &RankSelection::score)
      .def_readonly("chosen", &RankSelection::chosen);

  py::class_<Chain>(m, "Chain")
      .def_readonly("family", &Chain::family)
      .def_readonly("beta", &Chain::beta)
      .def_readonly("delta", &Chain::delta)
      .def_readonly("delta2", &Chain::delta2)
      .def_readonly("alpha", &Chain::alpha)
      .def_readonly("tau", &Chain::tau)
      .def_readonly("tau2", &Chain::tau2)
      .def_readonly("accept_beta", &Chain::accept_beta)
      .def_readonly("accept_delta", &Chain::accept_delta)
      .def_readonly("wall_seconds", &Chain::wall_seconds)
      .def_property_readonly("kept", &Chain::kept);

  py::class_<PredictionSummary>(m, "PredictionSummary")
      .def_readonly("prediction", &PredictionSummary::prediction)
      .def_readonly("sd", &PredictionSummary::sd)
      .def_readonly("classification", &PredictionSummary::classification)
      .def_readonly("ordinal_probs", &PredictionSummary::ordinal_probs);

  py::class_<ParameterSummary>(m, "ParameterSummary")
      .def_readonly("name", &ParameterSummary::name)
      .def_readonly("mean", &ParameterSummary::mean)
      .def_readonly("lower", &ParameterSummary::lower)
      .def_readonly("upper", &ParameterSummary::upper)
      .def("__repr__", [](const ParameterSummary& p) {
        return "<" + p.name + " " + std::to_string(p.mean) + " (" +
               std::to_string(p.lower) + ", " + std::to_string(p.upper) + ")>";
      });

  py::class_<ProjectedBasis>(m, "ProjectedBasis")
      .def_readonly("mesh", &ProjectedBasis::mesh)
      .def_readonly("spectral", &ProjectedBasis::spectral)
      .def_readonly("fit_basis", &ProjectedBasis::fit_basis)
      .def_readonly("cv_basis", &ProjectedBasis::cv_basis);

  py::class_<FitResult>(m, "FitResult")
      .def_readonly("rank", &FitResult::rank)
      .def_readonly("selection", &FitResult::selection)
      .def_readonly("chain", &FitResult::chain)
      .def_readonly("prediction", &FitResult::prediction)
      .def_readonly("cvmspe", &FitResult::cvmspe_value)
      .def_readonly("mpr", &FitResult::mpr_value)
      .def_readonly("primary_metric", &FitResult::primary_metric)
      .def_readonly("parameters", &FitResult::parameters)
      .def_readonly("mesh_vertices", &FitResult::mesh_vertices);

  py::class_<StudyResult>(m, "StudyResult")
      .def_readonly("name", &StudyResult::name)
      .def_readonly("outputs", &StudyResult::outputs)
      .def_readonly("failures", &StudyResult::failures)
      .def_readonly("total_seconds", &StudyResult::total_seconds);

  m.def("generate_dataset", &generate_dataset, py::arg("config"),
        py::arg("replicate") = 0,
        py::call_guard<py::gil_scoped_release>());
  m.def(
      "build_mesh",
      [](const Eigen::Ref<const Eigen::MatrixXd>& locations, int target_nodes,
         double buffer, std::uint64_t seed) {
        const auto pts = array_to_points(locations);
        return build_mesh(pts, target_nodes, buffer, seed);
      },
      py::arg("locations"), py::arg("target_nodes"), py::arg("buffer") = 0.1,
      py::arg("seed") = 0, py::call_guard<py::gil_scoped_release>());
  m.def("adjacency", &adjacency, py::arg("mesh"));
  m.def(
      "leading_eigenpairs",
      [](const Eigen::SparseMatrix<double>& graph, int p, EigenMethod method,
         std::uint64_t seed) {
        MoranOperator op(graph);
        return leading_eigenpairs(op, p, method, seed);
      },
      py::arg("adjacency"), py::arg("p"),
      py::arg("method") = EigenMethod::kAuto, py::arg("seed") = 0,
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "projector",
      [](const Mesh& mesh, const Eigen::Ref<const Eigen::MatrixXd>& locations) {
        return projector(mesh, array_to_points(locations));
      },
      py::arg("mesh"), py::arg("locations"));
  m.def(
      "precision_matrix",
      [](PrecisionKind kind, const Eigen::SparseMatrix<double>& graph,
         const Eigen::Ref<const Eigen::MatrixXd>& basis, double rho) {
        return precision_kernel(kind, graph, basis, rho).matrix;
      },
      py::arg("kind"), py::arg("adjacency"), py::arg("basis"),
      py::arg("rho") = 0.5);
  m.def("select_rank", &select_rank, py::arg("dataset"), py::arg("fit_basis"),
        py::arg("cv_basis"), py::arg("grid"), py::arg("jobs") = 1,
        py::call_guard<py::gil_scoped_release>());
  m.def("project_dataset", &project_dataset, py::arg("config"),
        py::arg("dataset"), py::call_guard<py::gil_scoped_release>());
  m.def("fit_projected", &fit_projected, py::arg("config"), py::arg("dataset"),
        py::arg("projected"), py::call_guard<py::gil_scoped_release>());
  m.def("fit_dataset", &fit_dataset, py::arg("config"), py::arg("dataset"),
        py::call_guard<py::gil_scoped_release>());
  m.def("run_study", &run_study, py::arg("preset"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("cvmspe", &cvmspe, py::arg("observed"), py::arg("predicted"));
  m.def("mpr", &mpr, py::arg("observed"), py::arg("predicted"));
  m.def("ess", &ess, py::arg("series"));
  m.def("save_dataset_csv", &save_dataset_csv, py::arg("dataset"),
        py::arg("path"));
  m.def("load_dataset_csv", &load_dataset_csv, py::arg("path"),
        py::arg("family"), py::arg("ordinal_categories") = 0);
}
