#include "dfm/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dfm/diagnostics.hpp"
#include "dfm/featmap.hpp"
#include "dfm/parallel.hpp"
#include "report.hpp"

namespace dfm {

namespace {

using report::Json;

struct Args {
  std::string source;
  std::string target;
  std::string predictions_source;
  std::string predictions_target;
  std::string method = "rff";
  std::string mode = "hard";
  std::size_t features = 2048;
  std::optional<double> sigma;
  bool auto_sigma = false;
  std::vector<double> sigma_grid;
  double delta = 0.05;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out;
  bool json = false;
  std::string svg;
  std::string config;
  double tol = 1e-10;
  std::size_t max_iter = 100000;
};

// Everything the estimate / diagnose / select-bandwidth commands share.
struct Loaded {
  LabeledCsv source_csv;
  std::optional<SourceDataset> source;
  std::optional<TargetDataset> target;
};

Loaded load_data(const Args& a, std::ostream& err) {
  Loaded d;
  d.source_csv = read_source_csv(a.source);
  std::vector<std::string> warnings;
  TargetCsv t = read_target_csv(a.target, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  d.source.emplace(d.source_csv.to_source());
  d.target.emplace(std::move(t.points));
  check_compatible(*d.source, *d.target);
  return d;
}

Json labeled_vector(const std::vector<long long>& labels, std::span<const double> v) {
  Json obj = Json::object();
  for (std::size_t i = 0; i < v.size(); ++i) obj[std::to_string(labels[i])] = report::number(v[i]);
  return obj;
}

Json matrix_json(const SymMatrix& m) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < m.order(); ++i) {
    Json row = Json::array();
    for (std::size_t j = 0; j < m.order(); ++j) row.push_back(report::number(m(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json spectrum_json(const SpectrumReport& s, bool with_matrices) {
  Json j = Json::object();
  j["lambda_min"] = report::number(s.lambda_min);
  j["delta_min"] = report::number(s.delta_min);
  j["identifiable"] = s.identifiable;
  if (with_matrices) {
    j["gram"] = matrix_json(s.gram);
    j["centered"] = matrix_json(s.centered);
  }
  return j;
}

// The matching problem built by the selected method.
struct Built {
  QuantProblem problem;
  SpectrumReport spectrum;
  BoundInputs bound;
  std::optional<ClassEmbeddings> embeddings;
  std::optional<double> sigma;
};

double choose_sigma(const Args& a, const SourceDataset& src, const TargetDataset& tgt, const RngStream& rng) {
  if (a.sigma) return *a.sigma;
  std::vector<double> grid = a.sigma_grid;
  if (grid.empty()) {
    RngStream grid_rng = rng.substream(1);
    grid = default_bandwidth_grid(src, tgt, grid_rng);
  }
  return select_bandwidth(src, tgt, a.features, grid, rng).sigma;
}

Built build_problem(const Args& a, const Loaded& d) {
  const SourceDataset& src = *d.source;
  const TargetDataset& tgt = *d.target;
  const RngStream rng(a.seed);
  Built b;
  if (a.method == "energy") {
    const KernelProblem kp = kernel_problem(KernelBackend{KernelKind::Energy, 1.0}, src, tgt);
    b.problem = kp.problem;
    b.spectrum = spectrum(kp.problem.gram);
    b.bound = bound_inputs(kp);
    return b;
  }
  if (a.method == "rff") {
    const double sigma = choose_sigma(a, src, tgt, rng);
    RngStream draw = rng.substream(rff_stream_id(sigma));
    b.embeddings = embed_means(rff_sample(src.dim(), a.features, sigma, draw), src, tgt);
    b.sigma = sigma;
  } else {
    Predictions preds;
    if (!a.predictions_source.empty()) {
      const auto& labels = d.source_csv.class_labels;
      preds.source = map_labels(read_predictions_csv(a.predictions_source), labels, "source prediction");
      preds.target = map_labels(read_predictions_csv(a.predictions_target), labels, "target prediction");
    } else {
      preds = nearest_centroid_crossfit(src, tgt);
    }
    const ExplicitEmbedder emb = onehot_from_predictions(preds.source, preds.target, src.num_classes());
    emb.check_rows(Side::Source, src.size());
    emb.check_rows(Side::Target, tgt.size());
    b.embeddings = embed_means(emb, src, tgt);
  }
  b.problem = problem_from_embeddings(*b.embeddings);
  b.spectrum = spectrum(*b.embeddings);
  b.bound = bound_inputs(*b.embeddings);
  return b;
}

Json header(const char* command, const Args& a, const Loaded& d) {
  Json doc = Json::object();
  doc["schema_version"] = report::kSchemaVersion;
  doc["command"] = command;
  doc["method"] = a.method;
  doc["seed"] = a.seed;
  doc["classes"] = d.source_csv.class_labels.size();
  doc["labels"] = d.source_csv.class_labels;
  doc["source_rows"] = d.source->size();
  doc["target_rows"] = d.target->size();
  return doc;
}

void emit(const Json& doc, const Args& a, std::ostream& out) {
  report::write(doc, a.json, out);
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw InputFormatError("cannot write '" + a.out + "'");
    report::write(doc, a.json, f);
  }
}

SolverOptions solver_options(const Args& a) {
  SolverOptions o;
  o.tol = a.tol;
  o.max_iter = a.max_iter;
  return o;
}

int not_identifiable(const SpectrumReport& s, std::ostream& err) {
  err << "error: class embeddings are not identifiable (lambda_min = " << format_double(s.lambda_min) << ")\n";
  return kExitNotIdentifiable;
}

int cmd_estimate(const Args& a, std::ostream& out, std::ostream& err) {
  const Loaded d = load_data(a, err);
  const Built b = build_problem(a, d);
  if (!b.spectrum.identifiable) return not_identifiable(b.spectrum, err);
  const Mode mode = parse_mode(a.mode);
  const SolverOptions opts = solver_options(a);
  const ProportionEstimate est = mode == Mode::Hard ? solve_hard(b.problem, opts) : solve_soft(b.problem, opts);
  const auto& labels = d.source_csv.class_labels;

  Json doc = header("estimate", a, d);
  doc["mode"] = std::string(to_string(mode));
  if (b.sigma) {
    doc["sigma"] = report::number(*b.sigma);
    doc["features"] = a.features;
  }
  doc["alpha"] = labeled_vector(labels, est.alpha);
  doc["noise_mass"] = report::number(est.noise_mass());
  doc["spectrum"] = spectrum_json(b.spectrum, false);
  try {
    const BoundCertificate cert = theorem1_bound(b.bound, b.spectrum, est, a.delta);
    doc["certificate"] = Json{{"kind", "plug-in"},
                              {"delta", report::number(cert.delta)},
                              {"R", report::number(cert.r)},
                              {"C", report::number(cert.bound_c)},
                              {"conditioning", report::number(cert.conditioning)},
                              {"w_norm", report::number(cert.w_norm)},
                              {"bound_w", report::number(cert.bound_w)},
                              {"bound_minclass", report::number(cert.bound_minclass)},
                              {"eps_n", report::number(cert.eps_n)},
                              {"eps_m", report::number(cert.eps_m)}};
  } catch (const IdentifiabilityError&) {
    doc["certificate"] = nullptr;
  }
  if (a.method == "bbse") {
    try {
      doc["bbse_unconstrained"] = labeled_vector(labels, solve_bbse_unconstrained(b.problem));
    } catch (const IdentifiabilityError&) {
      doc["bbse_unconstrained"] = nullptr;
    }
  }
  doc["solver"] = Json{{"objective", report::number(est.objective)},
                       {"iterations", est.iterations},
                       {"kkt_residual", report::number(est.kkt_residual)},
                       {"converged", est.converged}};
  emit(doc, a, out);
  if (!est.converged) {
    err << "error: solver did not converge within " << a.max_iter << " iterations\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_diagnose(const Args& a, std::ostream& out, std::ostream& err) {
  const Loaded d = load_data(a, err);
  const Built b = build_problem(a, d);
  const ProportionEstimate est = solve_soft(b.problem, solver_options(a));
  const ContaminationReport cr =
      b.embeddings ? contamination_decomposition(*b.embeddings, est) : contamination_decomposition(b.problem, est);
  const auto& labels = d.source_csv.class_labels;

  Json doc = header("diagnose", a, d);
  if (b.sigma) {
    doc["sigma"] = report::number(*b.sigma);
    doc["features"] = a.features;
  }
  doc["spectrum"] = spectrum_json(b.spectrum, true);
  doc["contamination"] = Json{{"parallel_fit", labeled_vector(labels, cr.parallel_fit)},
                              {"orth_norm", report::number(cr.orth_norm)},
                              {"conv_residual", report::number(cr.conv_residual)},
                              {"noise_mass", report::number(cr.noise_mass)},
                              {"span_rank_deficient", cr.span_rank_deficient}};
  emit(doc, a, out);
  if (!b.spectrum.identifiable) return not_identifiable(b.spectrum, err);
  if (!est.converged) {
    err << "error: solver did not converge within " << a.max_iter << " iterations\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_select_bandwidth(const Args& a, std::ostream& out, std::ostream& err) {
  if (a.method != "rff") throw ParameterError("select-bandwidth applies to --method rff only");
  const Loaded d = load_data(a, err);
  const RngStream rng(a.seed);
  std::vector<double> grid = a.sigma_grid;
  if (a.sigma) grid = {*a.sigma};
  if (grid.empty()) {
    RngStream grid_rng = rng.substream(1);
    grid = default_bandwidth_grid(*d.source, *d.target, grid_rng);
  }
  const BandwidthSelection sel = select_bandwidth(*d.source, *d.target, a.features, grid, rng);

  Json doc = header("select-bandwidth", a, d);
  doc["features"] = a.features;
  Json g = Json::array();
  for (double s : grid) g.push_back(report::number(s));
  doc["grid"] = std::move(g);
  Json entries = Json::array();
  for (const auto& e : sel.entries)
    entries.push_back(Json{{"sigma", report::number(e.sigma)},
                           {"delta_min", report::number(e.spectrum.delta_min)},
                           {"lambda_min", report::number(e.spectrum.lambda_min)}});
  doc["entries"] = std::move(entries);
  doc["best_index"] = sel.best_index;
  doc["sigma_star"] = report::number(sel.sigma);
  emit(doc, a, out);
  return kExitOk;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputFormatError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int cmd_benchmark(const Args& a, bool seed_given, std::ostream& out, std::ostream& err) {
  BenchmarkConfig cfg = parse_benchmark_config(read_file(a.config));
  if (seed_given) {
    cfg.sweep.seed = a.seed;
    cfg.holdout.seed = a.seed;
  }
  ExperimentResult result;
  if (cfg.protocol == BenchmarkConfig::Protocol::Sweep) {
    result = run_contamination_sweep(cfg.sweep);
  } else {
    const LabeledCsv src = read_source_csv(cfg.source_path);
    TargetCsv tgt = read_target_csv(cfg.target_path);
    if (!tgt.labels) throw InputFormatError("the holdout protocol needs a 'label' column in the target CSV");
    const std::vector<int> tgt_labels = map_labels(*tgt.labels, src.class_labels, "target label");
    result = run_holdout_class(src.to_source(), TargetDataset(std::move(tgt.points)), tgt_labels, cfg.holdout);
  }

  if (a.out.empty()) {
    write_results_csv(result, out);
  } else {
    std::ofstream f(a.out);
    if (!f) throw InputFormatError("cannot write '" + a.out + "'");
    write_results_csv(result, f);
    out << "rows=" << result.rows.size() << '\n';
    for (Method m : {Method::RffHard, Method::RffSoft, Method::EnergySoft, Method::BbseSoft}) {
      const double e = mean_error(result, m);
      if (std::isfinite(e)) out << "mean_error." << to_string(m) << '=' << format_double(e) << '\n';
    }
  }
  if (!a.svg.empty()) {
    std::ofstream f(a.svg);
    if (!f) throw InputFormatError("cannot write '" + a.svg + "'");
    write_error_chart(result, f);
  }
  std::size_t failed = 0;
  for (const auto& r : result.rows) failed += r.status != "ok";
  if (failed) err << "warning: " << failed << " rows have a non-ok status\n";
  return kExitOk;
}

void add_data_options(CLI::App* sub, Args& a) {
  sub->add_option("--source", a.source, "Labeled source CSV (features + 'label' column)")->required();
  sub->add_option("--target", a.target, "Target CSV (features)")->required();
  sub->add_option("--predictions-source", a.predictions_source, "Classifier predictions for the source rows");
  sub->add_option("--predictions-target", a.predictions_target, "Classifier predictions for the target rows");
  sub->add_option("--method", a.method, "Feature map")->check(CLI::IsMember({"rff", "energy", "bbse"}));
  sub->add_option("--features", a.features, "Number of random Fourier features D")->check(CLI::PositiveNumber);
  auto* sigma = sub->add_option("--sigma", a.sigma, "RFF bandwidth")->check(CLI::PositiveNumber);
  auto* autos = sub->add_flag("--auto-sigma", a.auto_sigma, "Select the bandwidth by maximising Delta_min");
  auto* grid = sub->add_option("--sigma-grid", a.sigma_grid, "Bandwidth grid for --auto-sigma")
                   ->delimiter(',')
                   ->check(CLI::PositiveNumber);
  sigma->excludes(autos);
  sigma->excludes(grid);
  sub->add_option("--delta", a.delta, "Confidence parameter of the certificate")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--seed", a.seed, "Random seed");
  sub->add_option("--tol", a.tol, "Solver tolerance")->check(CLI::PositiveNumber);
  sub->add_option("--max-iter", a.max_iter, "Solver iteration cap")->check(CLI::PositiveNumber);
}

void add_output_options(CLI::App* sub, Args& a) {
  sub->add_option("--threads", a.threads, "Worker threads (default: DFM_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--out", a.out, "Also write the output to this file");
  sub->add_flag("--json", a.json, "Emit a JSON document instead of key=value lines");
}

void validate(const Args& a, const CLI::App* sub) {
  if (a.predictions_source.empty() != a.predictions_target.empty())
    throw ParameterError("--predictions-source and --predictions-target must be given together");
  if (!a.predictions_source.empty() && a.method != "bbse")
    throw ParameterError("prediction files apply to --method bbse only");
  if (a.method == "rff" && a.features % 2 != 0) throw ParameterError("--features must be even");
  if (a.delta <= 0.0 || a.delta >= 1.0) throw ParameterError("--delta must lie in (0, 1)");
  if (sub->get_name() == "estimate") parse_mode(a.mode);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Distribution feature matching for label-shift quantification", "dfm"};
  app.require_subcommand(1);
  Args a;

  auto* estimate = app.add_subcommand("estimate", "Estimate target class proportions");
  add_data_options(estimate, a);
  add_output_options(estimate, a);
  estimate->add_option("--mode", a.mode, "hard: simplex; soft: sub-simplex with a dummy class")
      ->check(CLI::IsMember({"hard", "soft"}));

  auto* diagnose = app.add_subcommand("diagnose", "Gram spectra and contamination decomposition");
  add_data_options(diagnose, a);
  add_output_options(diagnose, a);

  auto* select = app.add_subcommand("select-bandwidth", "Choose the RFF bandwidth maximising Delta_min");
  add_data_options(select, a);
  add_output_options(select, a);

  auto* bench = app.add_subcommand("benchmark", "Run a contamination sweep or the leave-one-class-out protocol");
  bench->add_option("--config", a.config, "Benchmark JSON config")->required();
  auto* bench_seed = bench->add_option("--seed", a.seed, "Override the config seed");
  bench->add_option("--threads", a.threads, "Worker threads (default: DFM_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  bench->add_option("--out", a.out, "Write the CSV here instead of stdout");
  bench->add_option("--svg", a.svg, "Write a mean-error chart");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitBadInput;
  }

  try {
    if (a.threads > 0) set_thread_count(a.threads);
    if (bench->parsed()) return cmd_benchmark(a, bench_seed->count() > 0, out, err);
    CLI::App* sub = estimate->parsed() ? estimate : diagnose->parsed() ? diagnose : select;
    validate(a, sub);
    if (sub == estimate) return cmd_estimate(a, out, err);
    if (sub == diagnose) return cmd_diagnose(a, out, err);
    return cmd_select_bandwidth(a, out, err);
  } catch (const IdentifiabilityError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNotIdentifiable;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  }
}

}  // namespace dfm
