#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/solver.hpp"

namespace dfm {

enum class EmbedderKind { RffGaussian, OneHot, UserFeatures };

/// cos-sin pairs (the default) or D shifted cosines with uniform phases.
enum class RffVariant { CosSin, CosShift };

enum class Side { Source, Target };

/// A finite-dimensional feature map Φ.
///
/// Random Fourier features act on coordinates; the one-hot and user-feature
/// maps are row-aligned with the datasets they were built for.
class ExplicitEmbedder {
 public:
  static ExplicitEmbedder rff(Matrix frequencies, double sigma, RffVariant variant, Vector phases = {});
  static ExplicitEmbedder onehot(std::vector<int> preds_source, std::vector<int> preds_target, int num_classes);
  static ExplicitEmbedder user_features(Matrix source_features, Matrix target_features);

  EmbedderKind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return dim_; }
  /// Expected input dimension d (RFF only, 0 otherwise).
  std::size_t input_dim() const noexcept { return kind_ == EmbedderKind::RffGaussian ? freq_.cols() : 0; }
  double sigma() const noexcept { return sigma_; }
  RffVariant variant() const noexcept { return variant_; }
  const Matrix& frequencies() const noexcept { return freq_; }
  const Vector& phases() const noexcept { return phases_; }

  /// Φ(x) for coordinate-based maps. Throws ParameterError for row-aligned maps.
  void embed_point(std::span<const double> x, std::span<double> out) const;
  Vector embed_point(std::span<const double> x) const;

  /// Φ of a dataset row. Row-aligned maps use `side`/`row`; RFF uses `x`.
  void embed_row(Side side, std::size_t row, std::span<const double> x, std::span<double> out) const;

  /// Mean of Φ over the rows of a coordinate matrix (RFF only).
  Vector mean_embedding(const Matrix& points) const;

  /// Throws ParameterError when a row-aligned map does not cover `rows` rows.
  void check_rows(Side side, std::size_t rows) const;

  /// Analytic sup-norm bound when the map has one (1 for cos-sin RFF and
  /// one-hot), otherwise a negative value.
  double analytic_bound() const noexcept;

 private:
  ExplicitEmbedder() = default;

  EmbedderKind kind_ = EmbedderKind::RffGaussian;
  std::size_t dim_ = 0;
  double sigma_ = 0.0;
  RffVariant variant_ = RffVariant::CosSin;
  Matrix freq_;
  Matrix freq_t_;
  Vector phases_;
  std::vector<int> preds_source_;
  std::vector<int> preds_target_;
  Matrix feat_source_;
  Matrix feat_target_;
};

/// Class-mean embeddings Φ(P̂_i), the target mean Φ(Q̂) and the bookkeeping
/// the certificates need.
struct ClassEmbeddings {
  std::vector<Vector> phi;
  Vector phi_target;
  std::vector<std::size_t> counts;
  Vector source_proportions;
  std::size_t target_size = 0;
  /// Sup-norm bound C of the feature map on the observed data.
  double bound = 0.0;

  std::size_t num_classes() const noexcept { return phi.size(); }
  std::size_t dim() const noexcept { return phi_target.size(); }
};

/// Gaussian-kernel random Fourier features with frequencies ~ N(0, σ⁻² I).
/// D must be even for the cos-sin variant.
ExplicitEmbedder rff_sample(std::size_t input_dim, std::size_t features, double sigma, RngStream& rng,
                            RffVariant variant = RffVariant::CosSin);

/// Substream id used for the RFF draw at bandwidth σ, shared by bandwidth
/// selection and estimation so a chosen σ reproduces the same features.
std::uint64_t rff_stream_id(double sigma);

ClassEmbeddings embed_means(const ExplicitEmbedder& emb, const SourceDataset& src, const TargetDataset& tgt);

/// Class means only (no target pass).
std::vector<Vector> embed_class_means(const ExplicitEmbedder& emb, const SourceDataset& src);

/// One-hot classifier features. Predictions are 0-based class indices.
ExplicitEmbedder onehot_from_predictions(std::vector<int> preds_source, std::vector<int> preds_target,
                                         int num_classes);

struct Predictions {
  std::vector<int> source;
  std::vector<int> target;
};

/// Nearest-centroid classifier with 2-fold cross-fitting on the source (each
/// half is predicted with centroids from the other half); the target is
/// predicted with centroids from the whole source.
Predictions nearest_centroid_crossfit(const SourceDataset& src, const TargetDataset& tgt);

/// G_ij = ⟨φ_i, φ_j⟩, q_i = ⟨φ_i, φ_target⟩, target_norm2 = ‖φ_target‖².
QuantProblem problem_from_embeddings(const ClassEmbeddings& ce);

enum class KernelKind { Energy, Gaussian };

struct KernelBackend {
  KernelKind kind = KernelKind::Energy;
  double sigma = 1.0;

  double operator()(std::span<const double> x, std::span<const double> y) const;
};

/// k(x, y) = ‖x‖ + ‖y‖ − ‖x − y‖
double energy_kernel(std::span<const double> x, std::span<const double> y);
/// k(x, y) = exp(−‖x − y‖² / 2σ²)
double gaussian_kernel(std::span<const double> x, std::span<const double> y, double sigma);

struct KernelProblem {
  QuantProblem problem;
  std::vector<std::size_t> counts;
  Vector source_proportions;
  std::size_t target_size = 0;
  /// max over observed points of √k(x, x)
  double bound = 0.0;
};

/// Exact kernel-mean problem by pairwise summation, O(n(n + m)).
KernelProblem kernel_problem(const KernelBackend& kb, const SourceDataset& src, const TargetDataset& tgt);

}  // namespace dfm
