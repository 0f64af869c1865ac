#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dfm/diagnostics.hpp"
#include "dfm/featmap.hpp"
#include "dfm/harness.hpp"
#include "dfm/parallel.hpp"
#include "dfm/solver.hpp"

namespace py = pybind11;
using namespace dfm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-d array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Array sym_to_array(const SymMatrix& s) { return to_array(s.to_dense()); }

SymMatrix to_sym(const Array& a) {
  const Matrix m = to_matrix(a);
  if (m.rows() != m.cols()) throw py::value_error("expected a square matrix");
  SymMatrix s(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      if (m(i, j) != m(j, i)) throw py::value_error("matrix is not symmetric");
      s.set(i, j, m(i, j));
    }
  return s;
}

// Python labels are 1-based like the CLI.
SourceDataset make_source(const Array& x, const std::vector<int>& labels, std::optional<int> classes) {
  std::vector<int> zero_based(labels.size());
  int c = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1) throw py::value_error("labels must be 1-based positive integers");
    zero_based[i] = labels[i] - 1;
    c = std::max(c, labels[i]);
  }
  return SourceDataset(to_matrix(x), std::move(zero_based), classes.value_or(c));
}

QuantProblem make_problem(const Array& gram, const std::vector<double>& q, double tnorm2) {
  return QuantProblem{to_sym(gram), q, tnorm2};
}

ClassEmbeddings rff_embeddings(const SourceDataset& src, const TargetDataset& tgt, std::size_t features,
                               double sigma, std::uint64_t seed) {
  RngStream draw = RngStream(seed).substream(rff_stream_id(sigma));
  return embed_means(rff_sample(src.dim(), features, sigma, draw), src, tgt);
}

py::dict estimate_dict(const ProportionEstimate& e) {
  py::dict d;
  d["alpha"] = e.alpha;
  d["mode"] = std::string(to_string(e.mode));
  d["objective"] = e.objective;
  d["iterations"] = e.iterations;
  d["kkt_residual"] = e.kkt_residual;
  d["converged"] = e.converged;
  d["noise_mass"] = e.noise_mass();
  return d;
}

}  // namespace

PYBIND11_MODULE(_dfm, m) {
  m.doc() = "Distribution feature matching for label-shift quantification";

  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<NumericInputError>(m, "NumericInputError", PyExc_ValueError);
  py::register_exception<IdentifiabilityError>(m, "IdentifiabilityError", PyExc_ArithmeticError);

  m.def("set_threads", &set_thread_count, py::arg("n"));

  m.def("sym_eigenvalues", [](const Array& a) { return sym_eigenvalues(to_sym(a)); }, py::arg("matrix"));

  m.def("project_to_simplex", [](const std::vector<double>& y) { return project_to_simplex(y); }, py::arg("y"));

  m.def(
      "solve",
      [](const Array& gram, const std::vector<double>& q, double tnorm2, const std::string& mode, double tol,
         std::size_t max_iter) {
        const QuantProblem p = make_problem(gram, q, tnorm2);
        SolverOptions o;
        o.tol = tol;
        o.max_iter = max_iter;
        return estimate_dict(parse_mode(mode) == Mode::Hard ? solve_hard(p, o) : solve_soft(p, o));
      },
      py::arg("gram"), py::arg("q"), py::arg("target_norm2") = 0.0, py::arg("mode") = "hard",
      py::arg("tol") = 1e-10, py::arg("max_iter") = 100000);

  m.def(
      "solve_bbse_unconstrained",
      [](const Array& gram, const std::vector<double>& q) { return solve_bbse_unconstrained(make_problem(gram, q, 0)); },
      py::arg("gram"), py::arg("q"));

  m.def(
      "rff_features",
      [](const Array& x, std::size_t features, double sigma, std::uint64_t seed) {
        const Matrix pts = to_matrix(x);
        RngStream draw = RngStream(seed).substream(rff_stream_id(sigma));
        const ExplicitEmbedder emb = rff_sample(pts.cols(), features, sigma, draw);
        Matrix out(pts.rows(), emb.dim());
        for (std::size_t r = 0; r < pts.rows(); ++r) emb.embed_point(pts.row(r), out.row(r));
        return to_array(out);
      },
      py::arg("x"), py::arg("features") = 2048, py::arg("sigma") = 1.0, py::arg("seed") = 0);

  m.def(
      "class_embeddings",
      [](const Array& xs, const std::vector<int>& ys, const Array& xt, std::size_t features, double sigma,
         std::uint64_t seed) {
        const SourceDataset src = make_source(xs, ys, std::nullopt);
        const ClassEmbeddings ce = rff_embeddings(src, TargetDataset(to_matrix(xt)), features, sigma, seed);
        py::dict d;
        d["phi"] = ce.phi;
        d["phi_target"] = ce.phi_target;
        d["counts"] = ce.counts;
        d["bound"] = ce.bound;
        return d;
      },
      py::arg("source"), py::arg("labels"), py::arg("target"), py::arg("features") = 2048, py::arg("sigma") = 1.0,
      py::arg("seed") = 0);

  m.def(
      "spectrum",
      [](const Array& gram) {
        const SpectrumReport s = spectrum(to_sym(gram));
        py::dict d;
        d["lambda_min"] = s.lambda_min;
        d["delta_min"] = s.delta_min;
        d["identifiable"] = s.identifiable;
        d["centered"] = sym_to_array(s.centered);
        return d;
      },
      py::arg("gram"));

  m.def(
      "energy_problem",
      [](const Array& xs, const std::vector<int>& ys, const Array& xt) {
        const SourceDataset src = make_source(xs, ys, std::nullopt);
        const KernelProblem kp = kernel_problem(KernelBackend{KernelKind::Energy, 1.0}, src, TargetDataset(to_matrix(xt)));
        py::dict d;
        d["gram"] = sym_to_array(kp.problem.gram);
        d["q"] = kp.problem.linear;
        d["target_norm2"] = kp.problem.target_norm2;
        d["bound"] = kp.bound;
        return d;
      },
      py::arg("source"), py::arg("labels"), py::arg("target"));

  m.def(
      "select_bandwidth",
      [](const Array& xs, const std::vector<int>& ys, const Array& xt, std::size_t features,
         std::vector<double> grid, std::uint64_t seed) {
        const SourceDataset src = make_source(xs, ys, std::nullopt);
        const TargetDataset tgt(to_matrix(xt));
        const RngStream rng(seed);
        if (grid.empty()) {
          RngStream grid_rng = rng.substream(1);
          grid = default_bandwidth_grid(src, tgt, grid_rng);
        }
        const BandwidthSelection sel = select_bandwidth(src, tgt, features, grid, rng);
        std::vector<std::optional<double>> deltas;
        for (const auto& e : sel.entries) deltas.push_back(e.spectrum.delta_min);
        py::dict d;
        d["sigma"] = sel.sigma;
        d["grid"] = grid;
        d["delta_min"] = deltas;
        return d;
      },
      py::arg("source"), py::arg("labels"), py::arg("target"), py::arg("features") = 2048,
      py::arg("grid") = std::vector<double>{}, py::arg("seed") = 0);

  m.def(
      "estimate",
      [](const Array& xs, const std::vector<int>& ys, const Array& xt, const std::string& method,
         const std::string& mode, std::size_t features, std::optional<double> sigma, double delta,
         std::uint64_t seed) {
        const SourceDataset src = make_source(xs, ys, std::nullopt);
        const TargetDataset tgt(to_matrix(xt));
        const RngStream rng(seed);
        QuantProblem p;
        SpectrumReport spec;
        BoundInputs bound;
        std::optional<double> used_sigma;
        if (method == "energy") {
          const KernelProblem kp = kernel_problem(KernelBackend{KernelKind::Energy, 1.0}, src, tgt);
          p = kp.problem;
          spec = spectrum(p.gram);
          bound = bound_inputs(kp);
        } else {
          std::optional<ClassEmbeddings> ce;
          if (method == "rff") {
            double s = 0.0;
            if (sigma) {
              s = *sigma;
            } else {
              RngStream grid_rng = rng.substream(1);
              const auto grid = default_bandwidth_grid(src, tgt, grid_rng);
              s = select_bandwidth(src, tgt, features, grid, rng).sigma;
            }
            used_sigma = s;
            ce = rff_embeddings(src, tgt, features, s, seed);
          } else if (method == "bbse") {
            const Predictions preds = nearest_centroid_crossfit(src, tgt);
            ce = embed_means(onehot_from_predictions(preds.source, preds.target, src.num_classes()), src, tgt);
          } else {
            throw ParameterError("method must be rff, energy or bbse");
          }
          p = problem_from_embeddings(*ce);
          spec = spectrum(*ce);
          bound = bound_inputs(*ce);
        }
        const Mode md = parse_mode(mode);
        const ProportionEstimate est = md == Mode::Hard ? solve_hard(p) : solve_soft(p);
        py::dict d = estimate_dict(est);
        d["sigma"] = used_sigma;
        d["lambda_min"] = spec.lambda_min;
        d["delta_min"] = spec.delta_min;
        try {
          const BoundCertificate cert = theorem1_bound(bound, spec, est, delta);
          d["bound_w"] = cert.bound_w;
          d["bound_minclass"] = cert.bound_minclass;
        } catch (const IdentifiabilityError&) {
          d["bound_w"] = py::none();
          d["bound_minclass"] = py::none();
        }
        return d;
      },
      py::arg("source"), py::arg("labels"), py::arg("target"), py::arg("method") = "rff", py::arg("mode") = "hard",
      py::arg("features") = 2048, py::arg("sigma") = std::nullopt, py::arg("delta") = 0.05, py::arg("seed") = 0);

  m.def(
      "sample_mixture",
      [](int classes, std::size_t dim, std::size_t n, std::size_t m_clean, const std::string& noise, double eps,
         std::uint64_t seed) {
        RngStream rng(seed);
        MixtureSpec spec;
        spec.classes = classes;
        spec.dim = dim;
        spec.means = random_means(classes, dim, 20.0, 6.0, rng);
        spec.source_proportions.assign(static_cast<std::size_t>(classes), 1.0 / classes);
        spec.target_proportions = random_simplex_point(static_cast<std::size_t>(classes), rng);
        spec.n = n;
        spec.m = m_clean;
        const ExperimentSample s = sample_experiment(spec, NoiseSpec{parse_noise_kind(noise), eps, 30.0}, rng);
        std::vector<int> labels(s.source.labels());
        for (int& y : labels) ++y;
        std::vector<int> tlabels(s.target_labels);
        for (int& y : tlabels) ++y;  // contaminant rows become 0
        py::dict d;
        d["source"] = to_array(s.source.points());
        d["labels"] = labels;
        d["target"] = to_array(s.target.points());
        d["target_labels"] = tlabels;
        d["alpha"] = spec.target_proportions;
        return d;
      },
      py::arg("classes") = 5, py::arg("dim") = 5, py::arg("n") = 2000, py::arg("m") = 2000,
      py::arg("noise") = "background", py::arg("eps") = 0.0, py::arg("seed") = 0);
}
