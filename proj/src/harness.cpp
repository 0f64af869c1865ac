#include "dfm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <tuple>

#include "dfm/featmap.hpp"
#include "dfm/parallel.hpp"

namespace dfm {

namespace {

constexpr double kSimplexSlack = 1e-9;

void check_simplex(const Vector& v, std::size_t c, const char* what) {
  if (v.size() != c) throw ParameterError(std::string(what) + " must have one entry per class");
  double s = 0.0;
  for (double x : v) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ParameterError(std::string(what) + " must be nonnegative");
    s += x;
  }
  if (std::abs(s - 1.0) > kSimplexSlack) throw ParameterError(std::string(what) + " must sum to 1");
}

// Lower Cholesky factor; throws ParameterError when `a` is not SPD.
Matrix cholesky(const Matrix& a) {
  const std::size_t d = a.rows();
  Matrix l(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    double s = a(j, j);
    for (std::size_t k = 0; k < j; ++k) s -= l(j, k) * l(j, k);
    if (!(s > 0.0)) throw ParameterError("covariance matrix is not positive definite");
    l(j, j) = std::sqrt(s);
    for (std::size_t i = j + 1; i < d; ++i) {
      double t = a(i, j);
      for (std::size_t k = 0; k < j; ++k) t -= l(i, k) * l(j, k);
      l(i, j) = t / l(j, j);
    }
  }
  return l;
}

// x = mean + L z with z standard normal; L empty means scale · I.
void draw_gaussian(std::span<const double> mean, const Matrix& chol, double scale, RngStream& rng,
                   std::span<double> out) {
  const std::size_t d = mean.size();
  Vector z(d);
  for (double& v : z) v = rng.normal();
  for (std::size_t i = 0; i < d; ++i) {
    double v = 0.0;
    if (chol.empty()) {
      v = scale * z[i];
    } else {
      for (std::size_t k = 0; k <= i; ++k) v += chol(i, k) * z[k];
    }
    out[i] = mean[i] + v;
  }
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::string failure_code(const std::exception& e) {
  if (dynamic_cast<const IdentifiabilityError*>(&e)) return "identifiability";
  if (dynamic_cast<const NumericInputError*>(&e)) return "numeric";
  if (dynamic_cast<const ParameterError*>(&e)) return "parameter";
  return "error";
}

ProportionEstimate solve_mode(const QuantProblem& p, Mode mode, const SolverOptions& opts) {
  return mode == Mode::Hard ? solve_hard(p, opts) : solve_soft(p, opts);
}

void fill_estimate(ResultRow& row, const ProportionEstimate& est, const Vector& reference) {
  row.alpha = est.alpha;
  row.error_l2 = l2_distance(est.alpha, reference);
  row.noise_mass_est = est.noise_mass();
  if (!est.converged) row.status = "not_converged";
}

void fill_certificate(ResultRow& row, const BoundInputs& in, const SpectrumReport& spec,
                      const ProportionEstimate& est, double delta) {
  try {
    BoundCertificate cert = theorem1_bound(in, spec, est, delta);
    row.bound_w = cert.bound_w;
    row.bound_minclass = cert.bound_minclass;
  } catch (const IdentifiabilityError&) {
  }
}

}  // namespace

void MixtureSpec::validate() const {
  if (classes < 1) throw ParameterError("mixture needs at least one class");
  const auto c = static_cast<std::size_t>(classes);
  if (dim == 0) throw ParameterError("mixture dimension must be positive");
  if (means.rows() != c || means.cols() != dim) throw ParameterError("means must be a classes × dim matrix");
  if (!covariances.empty()) {
    if (covariances.size() != c) throw ParameterError("need one covariance per class");
    for (const auto& cov : covariances)
      if (cov.rows() != dim || cov.cols() != dim) throw ParameterError("covariance must be dim × dim");
  }
  if (!(cov_scale > 0.0)) throw ParameterError("covariance scale must be positive");
  check_simplex(source_proportions, c, "source proportions");
  check_simplex(target_proportions, c, "target proportions");
  if (n == 0 || m == 0) throw ParameterError("sample sizes must be positive");
}

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::Background:
      return "background";
    case NoiseKind::Far:
      return "far";
    case NoiseKind::Near:
      return "near";
  }
  return "background";
}

NoiseKind parse_noise_kind(std::string_view text) {
  if (text == "background") return NoiseKind::Background;
  if (text == "far") return NoiseKind::Far;
  if (text == "near") return NoiseKind::Near;
  throw ParameterError("unknown noise kind '" + std::string(text) + "' (expected background, far or near)");
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::RffHard:
      return "rffm-hard";
    case Method::RffSoft:
      return "rffm-soft";
    case Method::EnergySoft:
      return "energy-soft";
    case Method::BbseSoft:
      return "bbse+-soft";
  }
  return "rffm-hard";
}

Method parse_method(std::string_view text) {
  for (Method m : {Method::RffHard, Method::RffSoft, Method::EnergySoft, Method::BbseSoft})
    if (text == to_string(m)) return m;
  throw ParameterError("unknown method '" + std::string(text) +
                       "' (expected rffm-hard, rffm-soft, energy-soft or bbse+-soft)");
}

std::size_t noise_count(std::size_t clean, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw ParameterError("noise level must lie in [0, 1)");
  return static_cast<std::size_t>(std::llround(eps / (1.0 - eps) * static_cast<double>(clean)));
}

Matrix random_means(int classes, std::size_t dim, double box, double min_separation, RngStream& rng) {
  if (classes < 1 || dim == 0) throw ParameterError("random_means needs classes ≥ 1 and dim ≥ 1");
  if (!(box > 0.0) || !(min_separation >= 0.0)) throw ParameterError("invalid box or separation");
  const auto c = static_cast<std::size_t>(classes);
  Matrix means(c, dim);
  constexpr int kMaxRestarts = 10000;
  for (int attempt = 0; attempt < kMaxRestarts; ++attempt) {
    bool ok = true;
    for (std::size_t i = 0; i < c && ok; ++i) {
      for (std::size_t j = 0; j < dim; ++j) means(i, j) = rng.uniform(0.0, box);
      for (std::size_t k = 0; k < i; ++k)
        if (l2_distance(means.row(i), means.row(k)) < min_separation) {
          ok = false;
          break;
        }
    }
    if (ok) return means;
  }
  throw ParameterError("could not place class means with the requested separation");
}

Vector random_simplex_point(std::size_t c, RngStream& rng) {
  Vector v(c);
  double s = 0.0;
  for (double& x : v) {
    x = -std::log(1.0 - rng.uniform());
    s += x;
  }
  for (double& x : v) x /= s;
  return v;
}

ExperimentSample sample_experiment(const MixtureSpec& spec, const NoiseSpec& noise, RngStream& rng) {
  spec.validate();
  if (noise.kind == NoiseKind::Far && !(noise.far_offset > 0.0))
    throw ParameterError("far contaminant offset must be positive");
  const std::size_t c = static_cast<std::size_t>(spec.classes);
  const std::size_t d = spec.dim;
  const std::size_t m_noise = noise_count(spec.m, noise.level);

  std::vector<Matrix> chol(c);
  if (!spec.covariances.empty())
    for (std::size_t i = 0; i < c; ++i) chol[i] = cholesky(spec.covariances[i]);
  const double scale = std::sqrt(spec.cov_scale);

  Matrix src_points(spec.n, d);
  std::vector<int> src_labels(spec.n);
  for (std::size_t r = 0; r < spec.n; ++r) {
    const int k = rng.categorical(spec.source_proportions);
    src_labels[r] = k;
    draw_gaussian(spec.means.row(k), chol[k], scale, rng, src_points.row(r));
  }

  const std::size_t m_total = spec.m + m_noise;
  Matrix tgt_points(m_total, d);
  std::vector<int> tgt_labels(m_total, -1);
  for (std::size_t r = 0; r < spec.m; ++r) {
    const int k = rng.categorical(spec.target_proportions);
    tgt_labels[r] = k;
    draw_gaussian(spec.means.row(k), chol[k], scale, rng, tgt_points.row(r));
  }

  Vector centroid(d, 0.0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < d; ++j) centroid[j] += spec.means(i, j) / static_cast<double>(c);

  Matrix noise_points(m_noise, d);
  if (m_noise > 0) {
    switch (noise.kind) {
      case NoiseKind::Background: {
        Vector lo(d, std::numeric_limits<double>::infinity());
        Vector hi(d, -std::numeric_limits<double>::infinity());
        for (std::size_t r = 0; r < spec.m; ++r)
          for (std::size_t j = 0; j < d; ++j) {
            lo[j] = std::min(lo[j], tgt_points(r, j));
            hi[j] = std::max(hi[j], tgt_points(r, j));
          }
        for (std::size_t r = 0; r < m_noise; ++r)
          for (std::size_t j = 0; j < d; ++j) noise_points(r, j) = rng.uniform(lo[j], hi[j]);
        break;
      }
      case NoiseKind::Far:
      case NoiseKind::Near: {
        Vector mean = centroid;
        if (noise.kind == NoiseKind::Far) {
          Vector dir(d);
          for (double& v : dir) v = rng.normal();
          const double len = norm2(dir);
          for (std::size_t j = 0; j < d; ++j) mean[j] += noise.far_offset * dir[j] / len;
        }
        const Matrix identity;
        for (std::size_t r = 0; r < m_noise; ++r) draw_gaussian(mean, identity, scale, rng, noise_points.row(r));
        break;
      }
    }
    for (std::size_t r = 0; r < m_noise; ++r) {
      auto dst = tgt_points.row(spec.m + r);
      auto src = noise_points.row(r);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  // Fisher-Yates shuffle of the target rows.
  for (std::size_t r = m_total; r > 1; --r) {
    const std::size_t k = rng.uniform_index(r);
    if (k == r - 1) continue;
    auto a = tgt_points.row(r - 1);
    auto b = tgt_points.row(k);
    std::swap_ranges(a.begin(), a.end(), b.begin());
    std::swap(tgt_labels[r - 1], tgt_labels[k]);
  }

  return ExperimentSample{SourceDataset(std::move(src_points), std::move(src_labels), spec.classes),
                          TargetDataset(std::move(tgt_points)), std::move(noise_points), std::move(tgt_labels),
                          spec.m};
}

std::vector<ResultRow> run_methods(const SourceDataset& src, const TargetDataset& tgt, const Vector& reference,
                                   std::span<const Method> methods, const MethodOptions& opts,
                                   const RngStream& rng) {
  check_compatible(src, tgt);
  const std::size_t c = static_cast<std::size_t>(src.num_classes());
  if (reference.size() != c) throw ParameterError("reference proportions must have one entry per class");

  std::vector<ResultRow> rows;
  const bool want_rff = std::any_of(methods.begin(), methods.end(),
                                    [](Method m) { return m == Method::RffHard || m == Method::RffSoft; });

  std::optional<ClassEmbeddings> rff_ce;
  std::optional<SpectrumReport> rff_spec;
  double rff_sigma = 0.0;
  double rff_ms = 0.0;
  std::string rff_status = "ok";
  if (want_rff) {
    const auto start = std::chrono::steady_clock::now();
    try {
      if (opts.sigma) {
        rff_sigma = *opts.sigma;
      } else {
        std::vector<double> grid = opts.sigma_grid;
        if (grid.empty()) {
          RngStream grid_rng = rng.substream(1);
          grid = default_bandwidth_grid(src, tgt, grid_rng);
        }
        rff_sigma = select_bandwidth(src, tgt, opts.features, grid, rng).sigma;
      }
      RngStream draw = rng.substream(rff_stream_id(rff_sigma));
      ExplicitEmbedder emb = rff_sample(src.dim(), opts.features, rff_sigma, draw);
      rff_ce = embed_means(emb, src, tgt);
      rff_spec = spectrum(*rff_ce);
    } catch (const Error& e) {
      rff_status = failure_code(e);
    }
    rff_ms = elapsed_ms(start);
  }

  for (Method method : methods) {
    ResultRow row;
    row.method = method;
    const auto start = std::chrono::steady_clock::now();
    try {
      switch (method) {
        case Method::RffHard:
        case Method::RffSoft: {
          if (!rff_ce) {
            row.status = rff_status;
            break;
          }
          const Mode mode = method == Method::RffHard ? Mode::Hard : Mode::Soft;
          const ProportionEstimate est = solve_mode(problem_from_embeddings(*rff_ce), mode, opts.solver);
          fill_estimate(row, est, reference);
          row.delta_min = rff_spec->delta_min;
          row.lambda_min = rff_spec->lambda_min;
          row.sigma = rff_sigma;
          fill_certificate(row, bound_inputs(*rff_ce), *rff_spec, est, opts.delta);
          break;
        }
        case Method::EnergySoft: {
          const KernelProblem kp = kernel_problem(KernelBackend{KernelKind::Energy, 1.0}, src, tgt);
          const SpectrumReport spec = spectrum(kp.problem.gram);
          const ProportionEstimate est = solve_soft(kp.problem, opts.solver);
          fill_estimate(row, est, reference);
          row.delta_min = spec.delta_min;
          row.lambda_min = spec.lambda_min;
          fill_certificate(row, bound_inputs(kp), spec, est, opts.delta);
          break;
        }
        case Method::BbseSoft: {
          const Predictions preds = opts.predictions ? *opts.predictions : nearest_centroid_crossfit(src, tgt);
          const ExplicitEmbedder emb = onehot_from_predictions(preds.source, preds.target, src.num_classes());
          const ClassEmbeddings ce = embed_means(emb, src, tgt);
          const SpectrumReport spec = spectrum(ce);
          const ProportionEstimate est = solve_soft(problem_from_embeddings(ce), opts.solver);
          fill_estimate(row, est, reference);
          row.delta_min = spec.delta_min;
          row.lambda_min = spec.lambda_min;
          fill_certificate(row, bound_inputs(ce), spec, est, opts.delta);
          break;
        }
      }
    } catch (const Error& e) {
      row.status = failure_code(e);
    }
    row.runtime_ms = elapsed_ms(start);
    if (method == Method::RffHard || method == Method::RffSoft) row.runtime_ms += rff_ms;
    if (row.status != "ok" && row.status != "not_converged") row.error_l2 = std::nan("");
    rows.push_back(std::move(row));
  }
  return rows;
}

void SweepConfig::validate() const {
  if (classes < 1) throw ParameterError("classes must be at least 1");
  if (noise_kinds.empty() || eps_grid.empty() || dims.empty() || methods.empty())
    throw ParameterError("noise kinds, eps grid, dims and methods must be non-empty");
  for (double e : eps_grid)
    if (!(e >= 0.0 && e <= 0.3)) throw ParameterError("eps values must lie in [0, 0.3]");
  for (std::size_t d : dims)
    if (d < 2 || d > 10) throw ParameterError("dims must lie in [2, 10]");
  if (reps == 0) throw ParameterError("reps must be positive");
  if (n == 0 || m == 0) throw ParameterError("n and m must be positive");
  if (!(far_offset > 0.0)) throw ParameterError("far_offset must be positive");
  if (!(box > 0.0) || !(min_separation >= 0.0)) throw ParameterError("invalid box or min_separation");
  if (method.features == 0) throw ParameterError("features must be positive");
  if (method.sigma && !(*method.sigma > 0.0)) throw ParameterError("sigma must be positive");
  if (!(method.delta > 0.0 && method.delta < 1.0)) throw ParameterError("delta must lie in (0, 1)");
}

ExperimentResult run_contamination_sweep(const SweepConfig& config) {
  config.validate();
  struct Cell {
    std::size_t kind, eps, dim, rep;
  };
  std::vector<Cell> cells;
  for (std::size_t k = 0; k < config.noise_kinds.size(); ++k)
    for (std::size_t e = 0; e < config.eps_grid.size(); ++e)
      for (std::size_t d = 0; d < config.dims.size(); ++d)
        for (std::size_t r = 0; r < config.reps; ++r) cells.push_back({k, e, d, r});

  const RngStream master(config.seed);
  std::vector<std::vector<ResultRow>> out(cells.size());
  parallel_for_each(cells.size(), [&](std::size_t idx) {
    const Cell& cell = cells[idx];
    const NoiseKind kind = config.noise_kinds[cell.kind];
    const double eps = config.eps_grid[cell.eps];
    const std::size_t dim = config.dims[cell.dim];
    const std::uint64_t key =
        (((static_cast<std::uint64_t>(kind) * 64 + cell.eps) * 64 + dim) << 32) + cell.rep + 1;
    RngStream rng = master.substream(key);

    MixtureSpec spec;
    spec.classes = config.classes;
    spec.dim = dim;
    spec.means = random_means(config.classes, dim, config.box, config.min_separation, rng);
    spec.source_proportions.assign(static_cast<std::size_t>(config.classes), 1.0 / config.classes);
    spec.target_proportions = random_simplex_point(static_cast<std::size_t>(config.classes), rng);
    spec.n = config.n;
    spec.m = config.m;
    const NoiseSpec noise{kind, eps, config.far_offset};

    std::vector<ResultRow> rows;
    try {
      ExperimentSample sample = sample_experiment(spec, noise, rng);
      const double clean_share =
          static_cast<double>(sample.clean_count) / static_cast<double>(sample.target.size());
      Vector reference = spec.target_proportions;
      for (double& v : reference) v *= clean_share;
      rows = run_methods(sample.source, sample.target, reference, config.methods, config.method,
                         rng.substream(2));
    } catch (const Error& e) {
      for (Method method : config.methods) {
        ResultRow row;
        row.method = method;
        row.error_l2 = std::nan("");
        row.status = failure_code(e);
        rows.push_back(std::move(row));
      }
    }
    for (auto& row : rows) {
      row.noise_kind = std::string(to_string(kind));
      row.eps = eps;
      row.dim = dim;
      row.rep = cell.rep;
    }
    out[idx] = std::move(rows);
  });

  ExperimentResult result;
  for (auto& rows : out)
    for (auto& row : rows) result.rows.push_back(std::move(row));
  auto kind_rank = [&](const std::string& name) {
    for (std::size_t k = 0; k < config.noise_kinds.size(); ++k)
      if (to_string(config.noise_kinds[k]) == name) return k;
    return config.noise_kinds.size();
  };
  std::stable_sort(result.rows.begin(), result.rows.end(), [&](const ResultRow& a, const ResultRow& b) {
    return std::make_tuple(kind_rank(a.noise_kind), a.eps, a.dim, a.rep, static_cast<int>(a.method)) <
           std::make_tuple(kind_rank(b.noise_kind), b.eps, b.dim, b.rep, static_cast<int>(b.method));
  });
  return result;
}

ExperimentResult run_holdout_class(const SourceDataset& src, const TargetDataset& tgt,
                                   std::span<const int> target_labels, const HoldoutConfig& config) {
  check_compatible(src, tgt);
  if (target_labels.size() != tgt.size()) throw ParameterError("target labels must cover every target row");
  const std::size_t c = static_cast<std::size_t>(src.num_classes());
  Vector target_share(c, 0.0);
  for (int y : target_labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw ParameterError("target label " + std::to_string(y + 1) + " is not a source class");
    target_share[static_cast<std::size_t>(y)] += 1.0;
  }
  for (double& v : target_share) v /= static_cast<double>(tgt.size());

  const RngStream rng(config.seed);
  MethodOptions opts = config.method;
  if (!opts.sigma && opts.sigma_grid.empty()) {
    RngStream grid_rng = rng.substream(1);
    opts.sigma_grid = default_bandwidth_grid(src, tgt, grid_rng);
  }
  if (opts.predictions) throw ParameterError("the holdout protocol fits its own classifier");

  ExperimentResult result;
  auto tag = [](std::vector<ResultRow>& rows, const char* kind, double eps, std::size_t rep) {
    for (auto& row : rows) {
      row.noise_kind = kind;
      row.eps = eps;
      row.dim = 0;
      row.rep = rep;
    }
  };

  std::vector<ResultRow> base = run_methods(src, tgt, target_share, config.methods, opts, rng);
  tag(base, "baseline", 0.0, 0);
  for (auto& row : base) {
    row.dim = src.dim();
    result.rows.push_back(std::move(row));
  }

  for (std::size_t held = 0; held < c; ++held) {
    std::vector<ResultRow> rows;
    if (c < 2) {
      for (Method method : config.methods) {
        ResultRow row;
        row.method = method;
        row.error_l2 = std::nan("");
        row.status = "no_remaining_class";
        rows.push_back(std::move(row));
      }
    } else {
      std::vector<std::size_t> keep;
      std::vector<int> labels;
      for (std::size_t r = 0; r < src.size(); ++r) {
        const int y = src.labels()[r];
        if (static_cast<std::size_t>(y) == held) continue;
        keep.push_back(r);
        labels.push_back(static_cast<std::size_t>(y) > held ? y - 1 : y);
      }
      Vector reference;
      for (std::size_t i = 0; i < c; ++i)
        if (i != held) reference.push_back(target_share[i]);
      const SourceDataset reduced(src.points().select_rows(keep), std::move(labels), static_cast<int>(c) - 1);
      rows = run_methods(reduced, tgt, reference, config.methods, opts, rng);
    }
    tag(rows, "holdout", target_share[held], held + 1);
    for (auto& row : rows) {
      row.dim = src.dim();
      result.rows.push_back(std::move(row));
    }
  }
  return result;
}

double loglog_slope(std::span<const ScalingPoint> points) {
  if (points.size() < 2) return 0.0;
  double sx = 0.0, sy = 0.0;
  for (const auto& p : points) {
    sx += std::log(static_cast<double>(p.size));
    sy += std::log(p.seconds);
  }
  const double k = static_cast<double>(points.size());
  const double mx = sx / k, my = sy / k;
  double sxy = 0.0, sxx = 0.0;
  for (const auto& p : points) {
    const double dx = std::log(static_cast<double>(p.size)) - mx;
    sxy += dx * (std::log(p.seconds) - my);
    sxx += dx * dx;
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

ScalingReport scaling_probe(std::span<const std::size_t> sizes, std::size_t dim, std::size_t features,
                            RngStream& rng, double sigma) {
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 2) throw ParameterError("scaling sizes must be at least 2");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ParameterError("scaling sizes must be ascending");
  }
  ScalingReport report;
  for (std::size_t size : sizes) {
    MixtureSpec spec;
    spec.classes = 5;
    spec.dim = dim;
    spec.means = random_means(5, dim, 20.0, 6.0, rng);
    spec.source_proportions.assign(5, 0.2);
    spec.target_proportions = random_simplex_point(5, rng);
    spec.n = size / 2;
    spec.m = size - spec.n;
    const ExperimentSample sample = sample_experiment(spec, NoiseSpec{}, rng);

    const auto start = std::chrono::steady_clock::now();
    RngStream draw = rng.substream(rff_stream_id(sigma));
    const ExplicitEmbedder emb = rff_sample(dim, features, sigma, draw);
    const ClassEmbeddings ce = embed_means(emb, sample.source, sample.target);
    const ProportionEstimate est = solve_soft(problem_from_embeddings(ce));
    (void)est;
    report.points.push_back({size, elapsed_ms(start) / 1000.0});
  }
  report.slope = loglog_slope(report.points);
  return report;
}

double mean_error(const ExperimentResult& result, Method method) {
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& row : result.rows)
    if (row.method == method && row.status == "ok") {
      s += row.error_l2;
      ++k;
    }
  return k ? s / static_cast<double>(k) : std::nan("");
}

}  // namespace dfm
