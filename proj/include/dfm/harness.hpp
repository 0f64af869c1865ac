#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/diagnostics.hpp"
#include "dfm/featmap.hpp"
#include "dfm/solver.hpp"

namespace dfm {

/// Gaussian mixture generator. Covariances default to `cov_scale` · I.
struct MixtureSpec {
  int classes = 5;
  std::size_t dim = 5;
  /// One row per class.
  Matrix means;
  /// Optional full covariances, one d×d SPD matrix per class.
  std::vector<Matrix> covariances;
  double cov_scale = 1.0;
  Vector source_proportions;
  Vector target_proportions;
  std::size_t n = 10000;
  std::size_t m = 10000;

  void validate() const;
};

enum class NoiseKind { Background, Far, Near };

std::string_view to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view text);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::Background;
  /// Contaminant share ε of the final target, in [0, 1).
  double level = 0.0;
  /// Distance of the far contaminant from the centroid of the class means.
  double far_offset = 30.0;
};

struct ExperimentSample {
  SourceDataset source;
  TargetDataset target;
  /// The contaminant rows (also present, shuffled, in the target).
  Matrix noise;
  /// Target labels, 0-based, with -1 for contaminant rows.
  std::vector<int> target_labels;
  std::size_t clean_count = 0;
};

/// Number of contaminant rows added to `clean` clean rows at level ε.
std::size_t noise_count(std::size_t clean, double eps);

/// Means uniform in [0, box]^d, redrawn until all pairwise distances are at
/// least `min_separation`.
Matrix random_means(int classes, std::size_t dim, double box, double min_separation, RngStream& rng);

/// Uniform draw from the probability simplex (Dirichlet(1, ..., 1)).
Vector random_simplex_point(std::size_t c, RngStream& rng);

ExperimentSample sample_experiment(const MixtureSpec& spec, const NoiseSpec& noise, RngStream& rng);

enum class Method { RffHard, RffSoft, EnergySoft, BbseSoft };

std::string_view to_string(Method method);
Method parse_method(std::string_view text);

struct MethodOptions {
  std::size_t features = 2048;
  /// Fixed bandwidth; when empty σ is selected from the default grid.
  std::optional<double> sigma;
  /// Grid for bandwidth selection; empty means the default grid.
  std::vector<double> sigma_grid;
  /// Classifier predictions for the one-hot method; empty means the built-in
  /// cross-fitted nearest-centroid classifier.
  std::optional<Predictions> predictions;
  double delta = 0.05;
  SolverOptions solver;
};

/// One scored estimate.
struct ResultRow {
  Method method = Method::RffHard;
  std::string noise_kind;
  double eps = 0.0;
  std::size_t dim = 0;
  std::size_t rep = 0;
  double error_l2 = 0.0;
  std::optional<double> delta_min;
  double lambda_min = 0.0;
  double noise_mass_est = 0.0;
  double runtime_ms = 0.0;
  /// "ok", or a reason code when the method could not produce an estimate.
  std::string status = "ok";
  // Not part of the CSV.
  Vector alpha;
  std::optional<double> bound_w;
  std::optional<double> bound_minclass;
  double sigma = 0.0;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
};

struct SweepConfig {
  int classes = 5;
  std::vector<NoiseKind> noise_kinds{NoiseKind::Background};
  std::vector<double> eps_grid{0.0};
  std::vector<std::size_t> dims{5};
  std::size_t reps = 1;
  std::vector<Method> methods{Method::RffHard, Method::RffSoft, Method::EnergySoft, Method::BbseSoft};
  std::uint64_t seed = 0;
  std::size_t n = 10000;
  std::size_t m = 10000;
  double box = 20.0;
  double min_separation = 6.0;
  double far_offset = 30.0;
  MethodOptions method;

  void validate() const;
};

/// Runs every method on the same data for each (noise kind, ε, dim, rep)
/// cell. Rows are sorted by (noise kind, ε, dim, rep, method).
ExperimentResult run_contamination_sweep(const SweepConfig& config);

/// Runs `methods` on one dataset and scores each estimate against
/// `reference` (true proportions of the c source classes).
std::vector<ResultRow> run_methods(const SourceDataset& src, const TargetDataset& tgt, const Vector& reference,
                                   std::span<const Method> methods, const MethodOptions& opts,
                                   const RngStream& rng);

struct HoldoutConfig {
  std::vector<Method> methods{Method::RffHard, Method::RffSoft, Method::EnergySoft, Method::BbseSoft};
  std::uint64_t seed = 0;
  MethodOptions method;
};

/// Leave-one-class-out protocol. The baseline row has noise_kind "baseline"
/// and rep 0; the row for held-out class i has noise_kind "holdout", rep
/// i + 1 and eps equal to that class's share of the target.
ExperimentResult run_holdout_class(const SourceDataset& src, const TargetDataset& tgt,
                                   std::span<const int> target_labels, const HoldoutConfig& config);

struct ScalingPoint {
  std::size_t size = 0;
  double seconds = 0.0;
};

struct ScalingReport {
  std::vector<ScalingPoint> points;
  /// Least-squares slope of log(seconds) against log(size).
  double slope = 0.0;
};

/// Times the RFF path (embedding, problem assembly and soft solve) on
/// five-class mixtures with n = m = size / 2.
ScalingReport scaling_probe(std::span<const std::size_t> sizes, std::size_t dim, std::size_t features,
                            RngStream& rng, double sigma = 1.0);

double loglog_slope(std::span<const ScalingPoint> points);

/// Mean error_l2 of the ok rows for one method.
double mean_error(const ExperimentResult& result, Method method);

}  // namespace dfm
