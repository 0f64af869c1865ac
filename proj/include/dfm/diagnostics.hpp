#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/featmap.hpp"
#include "dfm/solver.hpp"

namespace dfm {

/// Spectra of the class-embedding Gram matrix and its centered version.
struct SpectrumReport {
  SymMatrix gram;
  SymMatrix centered;
  /// Smallest eigenvalue of the Gram matrix.
  double lambda_min = 0.0;
  /// Second-smallest eigenvalue of the centered Gram matrix; empty when c = 1.
  std::optional<double> delta_min;
  /// False when lambda_min < 1e-12 · trace(G): the embeddings are (nearly)
  /// linearly dependent and the proportions are not identifiable.
  bool identifiable = true;
};

/// Centered Gram M = PGP with P = I − 11ᵀ/c.
SymMatrix centered_gram(const SymMatrix& gram);

/// M_ij = ⟨φ_i − φ̄, φ_j − φ̄⟩ computed in feature space.
SymMatrix centered_gram_from_features(std::span<const Vector> phi);

SpectrumReport spectrum(const ClassEmbeddings& ce);
/// Spectrum from a Gram matrix alone (kernel backends).
SpectrumReport spectrum(const SymMatrix& gram);

/// R_x = 2 + √(2 ln 2x)
double r_constant(double x);

/// Plug-in error certificate for an estimate.
///
/// w_i = α̂_i / β̃_i replaces the unobservable true weights, so the value is a
/// plug-in certificate rather than a guaranteed bound. Soft estimates use
/// λ_min as the conditioning constant, hard estimates use Δ_min.
struct BoundCertificate {
  Mode mode = Mode::Hard;
  double delta = 0.05;
  double r = 0.0;
  double bound_c = 0.0;
  /// Δ_min (hard) or λ_min (soft).
  double conditioning = 0.0;
  double w_norm = 0.0;
  double bound_w = 0.0;
  double bound_minclass = 0.0;
  double eps_n = 0.0;
  double eps_m = 0.0;
};

/// Sample sizes and constants the certificate depends on.
struct BoundInputs {
  std::vector<std::size_t> counts;
  std::size_t target_size = 0;
  double bound_c = 0.0;
};

BoundInputs bound_inputs(const ClassEmbeddings& ce);
BoundInputs bound_inputs(const KernelProblem& kp);

BoundCertificate theorem1_bound(const BoundInputs& in, const SpectrumReport& spec, const ProportionEstimate& est,
                                double delta);
BoundCertificate theorem1_bound(const ClassEmbeddings& ce, const ProportionEstimate& est, double delta);

struct BandwidthEntry {
  double sigma = 0.0;
  SpectrumReport spectrum;
};

struct BandwidthSelection {
  double sigma = 0.0;
  std::size_t best_index = 0;
  std::vector<BandwidthEntry> entries;
};

/// Median pairwise distance × {1/8, 1/4, 1/2, 1, 2, 4, 8}; the median is taken
/// over at most 2000 points subsampled from source ∪ target.
std::vector<double> default_bandwidth_grid(const SourceDataset& src, const TargetDataset& tgt, RngStream& rng);

/// Picks the grid σ maximising Δ_min of RFF class embeddings, one fresh draw
/// per σ on the substream rff_stream_id(σ). Ties go to the smaller σ.
BandwidthSelection select_bandwidth(const SourceDataset& src, const TargetDataset& tgt, std::size_t features,
                                    std::span<const double> grid, const RngStream& rng);

/// Geometry of the target embedding relative to the source classes.
struct ContaminationReport {
  /// Least-squares coordinates of φ_target on Span{φ_i}.
  Vector parallel_fit;
  /// ‖φ_target − Π_span φ_target‖
  double orth_norm = 0.0;
  /// ‖φ_target − Σ α̂_i φ_i‖ for the supplied estimate.
  double conv_residual = 0.0;
  /// ‖Π_span z‖ for a known contaminant embedding z.
  std::optional<double> span_leak;
  std::optional<double> noise_norm;
  /// 1 − Σα̂ for soft estimates.
  double noise_mass = 0.0;
  bool span_rank_deficient = false;
};

/// Explicit-embedding route; `noise_embedding` is the mean embedding of a
/// known contaminant sample (oracle mode).
ContaminationReport contamination_decomposition(const ClassEmbeddings& ce, const ProportionEstimate& est,
                                                std::optional<std::span<const double>> noise_embedding = {});

/// Gram route for kernel problems (no span_leak).
ContaminationReport contamination_decomposition(const QuantProblem& p, const ProportionEstimate& est);

}  // namespace dfm
