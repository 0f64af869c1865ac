#include "dfm/featmap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "dfm/parallel.hpp"
#include "trig.hpp"

namespace dfm {

ExplicitEmbedder ExplicitEmbedder::rff(Matrix frequencies, double sigma, RffVariant variant, Vector phases) {
  if (frequencies.rows() == 0 || frequencies.cols() == 0) throw ParameterError("RFF needs at least one frequency");
  if (variant == RffVariant::CosShift && phases.size() != frequencies.rows())
    throw ParameterError("cos-shift RFF needs one phase per frequency");
  ExplicitEmbedder e;
  e.kind_ = EmbedderKind::RffGaussian;
  e.sigma_ = sigma;
  e.variant_ = variant;
  e.dim_ = variant == RffVariant::CosSin ? 2 * frequencies.rows() : frequencies.rows();
  e.freq_ = std::move(frequencies);
  e.freq_t_ = Matrix(e.freq_.cols(), e.freq_.rows());
  for (std::size_t f = 0; f < e.freq_.rows(); ++f)
    for (std::size_t j = 0; j < e.freq_.cols(); ++j) e.freq_t_(j, f) = e.freq_(f, j);
  e.phases_ = std::move(phases);
  return e;
}

ExplicitEmbedder ExplicitEmbedder::user_features(Matrix source_features, Matrix target_features) {
  if (source_features.cols() == 0 || source_features.cols() != target_features.cols())
    throw ParameterError("source and target feature matrices must share a positive column count");
  for (const Matrix* m : {&source_features, &target_features})
    for (double v : m->data())
      if (!std::isfinite(v)) throw NumericInputError("feature matrix contains non-finite values");
  ExplicitEmbedder e;
  e.kind_ = EmbedderKind::UserFeatures;
  e.dim_ = source_features.cols();
  e.feat_source_ = std::move(source_features);
  e.feat_target_ = std::move(target_features);
  return e;
}

void ExplicitEmbedder::embed_point(std::span<const double> x, std::span<double> out) const {
  if (kind_ != EmbedderKind::RffGaussian)
    throw ParameterError("this feature map is row-aligned and cannot embed arbitrary points");
  const std::size_t d = freq_.cols();
  const std::size_t f_count = freq_.rows();
  const double scale = std::sqrt(2.0 / static_cast<double>(dim_));
  thread_local std::vector<double> angle, cosv, sinv;
  angle.resize(f_count);
  cosv.resize(f_count);
  sinv.resize(f_count);
  if (variant_ == RffVariant::CosSin)
    std::fill(angle.begin(), angle.end(), 0.0);
  else
    std::copy(phases_.begin(), phases_.end(), angle.begin());
  for (std::size_t j = 0; j < d; ++j) {
    const double xj = x[j];
    const double* w = freq_t_.row(j).data();
    for (std::size_t f = 0; f < f_count; ++f) angle[f] += w[f] * xj;
  }
  if (variant_ == RffVariant::CosSin) {
    detail::cos_sin(angle.data(), f_count, cosv.data(), sinv.data());
    for (std::size_t f = 0; f < f_count; ++f) {
      out[2 * f] = scale * cosv[f];
      out[2 * f + 1] = scale * sinv[f];
    }
  } else {
    detail::cos_only(angle.data(), f_count, cosv.data());
    for (std::size_t f = 0; f < f_count; ++f) out[f] = scale * cosv[f];
  }
}

Vector ExplicitEmbedder::embed_point(std::span<const double> x) const {
  Vector out(dim_);
  embed_point(x, out);
  return out;
}

void ExplicitEmbedder::embed_row(Side side, std::size_t row, std::span<const double> x,
                                 std::span<double> out) const {
  switch (kind_) {
    case EmbedderKind::RffGaussian:
      embed_point(x, out);
      return;
    case EmbedderKind::OneHot: {
      const auto& preds = side == Side::Source ? preds_source_ : preds_target_;
      std::fill(out.begin(), out.end(), 0.0);
      out[static_cast<std::size_t>(preds.at(row))] = 1.0;
      return;
    }
    case EmbedderKind::UserFeatures: {
      const auto& feats = side == Side::Source ? feat_source_ : feat_target_;
      auto r = feats.row(row);
      std::copy(r.begin(), r.end(), out.begin());
      return;
    }
  }
}

void ExplicitEmbedder::check_rows(Side side, std::size_t rows) const {
  std::size_t have = rows;
  if (kind_ == EmbedderKind::OneHot)
    have = side == Side::Source ? preds_source_.size() : preds_target_.size();
  else if (kind_ == EmbedderKind::UserFeatures)
    have = side == Side::Source ? feat_source_.rows() : feat_target_.rows();
  if (have != rows) {
    std::ostringstream os;
    os << (side == Side::Source ? "source" : "target") << " has " << rows << " rows but the feature map covers "
       << have;
    throw ParameterError(os.str());
  }
}

double ExplicitEmbedder::analytic_bound() const noexcept {
  if (kind_ == EmbedderKind::OneHot) return 1.0;
  if (kind_ == EmbedderKind::RffGaussian && variant_ == RffVariant::CosSin) return 1.0;
  return -1.0;
}

Vector ExplicitEmbedder::mean_embedding(const Matrix& points) const {
  if (kind_ != EmbedderKind::RffGaussian) throw ParameterError("mean_embedding needs a coordinate feature map");
  if (points.cols() != input_dim()) throw ParameterError("point dimension does not match the feature map");
  if (points.rows() == 0) return Vector(dim_, 0.0);
  Vector sum = blocked_sum(points.rows(), kDefaultBlockRows, dim_,
                           [&](std::size_t, std::size_t begin, std::size_t end, std::span<double> out) {
                             Vector tmp(dim_);
                             for (std::size_t r = begin; r < end; ++r) {
                               embed_point(points.row(r), tmp);
                               for (std::size_t k = 0; k < dim_; ++k) out[k] += tmp[k];
                             }
                           });
  const double inv = 1.0 / static_cast<double>(points.rows());
  for (double& v : sum) v *= inv;
  return sum;
}

ExplicitEmbedder rff_sample(std::size_t input_dim, std::size_t features, double sigma, RngStream& rng,
                            RffVariant variant) {
  if (input_dim == 0) throw ParameterError("RFF input dimension must be positive");
  if (features == 0) throw ParameterError("RFF feature count must be positive");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("RFF bandwidth must be positive and finite");
  if (variant == RffVariant::CosSin && features % 2 != 0)
    throw ParameterError("cos-sin RFF needs an even feature count, got " + std::to_string(features));

  const std::size_t f_count = variant == RffVariant::CosSin ? features / 2 : features;
  Matrix freq(f_count, input_dim);
  const double inv_sigma = 1.0 / sigma;
  for (double& w : freq.data()) w = rng.normal() * inv_sigma;
  Vector phases;
  if (variant == RffVariant::CosShift) {
    phases.resize(f_count);
    for (double& b : phases) b = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return ExplicitEmbedder::rff(std::move(freq), sigma, variant, std::move(phases));
}

std::uint64_t rff_stream_id(double sigma) {
  return splitmix64(std::bit_cast<std::uint64_t>(sigma) ^ 0x5246465354524D31ULL);
}

namespace {

void check_embedder(const ExplicitEmbedder& emb, const SourceDataset& src, const TargetDataset* tgt) {
  if (emb.kind() == EmbedderKind::RffGaussian && emb.input_dim() != src.dim()) {
    std::ostringstream os;
    os << "feature map expects " << emb.input_dim() << " input columns but data has " << src.dim();
    throw ParameterError(os.str());
  }
  if (tgt) check_compatible(src, *tgt);
}

struct MeanPass {
  Vector sum;
  double max_norm = 0.0;
};

// Per-class sums of Φ over the source (width c·D) or the plain sum over the
// target (width D), with the largest observed ‖Φ(x)‖.
MeanPass embedding_sums(const ExplicitEmbedder& emb, const Matrix& points, Side side, const std::vector<int>* labels,
                        std::size_t groups) {
  const std::size_t dim = emb.dim();
  const std::size_t n = points.rows();
  const std::size_t blocks = (n + kDefaultBlockRows - 1) / kDefaultBlockRows;
  std::vector<double> block_max(blocks, 0.0);
  MeanPass pass;
  pass.sum = blocked_sum(n, kDefaultBlockRows, groups * dim,
                         [&](std::size_t b, std::size_t begin, std::size_t end, std::span<double> out) {
                           Vector tmp(dim);
                           double local_max = 0.0;
                           for (std::size_t r = begin; r < end; ++r) {
                             emb.embed_row(side, r, points.row(r), tmp);
                             const std::size_t g = labels ? static_cast<std::size_t>((*labels)[r]) : 0;
                             double* acc = out.data() + g * dim;
                             double sq = 0.0;
                             for (std::size_t k = 0; k < dim; ++k) {
                               acc[k] += tmp[k];
                               sq += tmp[k] * tmp[k];
                             }
                             local_max = std::max(local_max, sq);
                           }
                           block_max[b] = std::sqrt(local_max);
                         });
  for (double m : block_max) pass.max_norm = std::max(pass.max_norm, m);
  return pass;
}

}  // namespace

std::vector<Vector> embed_class_means(const ExplicitEmbedder& emb, const SourceDataset& src) {
  check_embedder(emb, src, nullptr);
  emb.check_rows(Side::Source, src.size());
  const std::size_t c = static_cast<std::size_t>(src.num_classes());
  const std::size_t dim = emb.dim();
  MeanPass pass = embedding_sums(emb, src.points(), Side::Source, &src.labels(), c);
  std::vector<Vector> phi(c, Vector(dim));
  for (std::size_t i = 0; i < c; ++i) {
    const double inv = 1.0 / static_cast<double>(src.class_counts()[i]);
    for (std::size_t k = 0; k < dim; ++k) phi[i][k] = pass.sum[i * dim + k] * inv;
  }
  return phi;
}

ClassEmbeddings embed_means(const ExplicitEmbedder& emb, const SourceDataset& src, const TargetDataset& tgt) {
  check_embedder(emb, src, &tgt);
  emb.check_rows(Side::Source, src.size());
  emb.check_rows(Side::Target, tgt.size());
  const std::size_t c = static_cast<std::size_t>(src.num_classes());
  const std::size_t dim = emb.dim();

  MeanPass source_pass = embedding_sums(emb, src.points(), Side::Source, &src.labels(), c);
  MeanPass target_pass = embedding_sums(emb, tgt.points(), Side::Target, nullptr, 1);

  ClassEmbeddings ce;
  ce.phi.assign(c, Vector(dim));
  for (std::size_t i = 0; i < c; ++i) {
    const double inv = 1.0 / static_cast<double>(src.class_counts()[i]);
    for (std::size_t k = 0; k < dim; ++k) ce.phi[i][k] = source_pass.sum[i * dim + k] * inv;
  }
  ce.phi_target = std::move(target_pass.sum);
  const double inv_m = 1.0 / static_cast<double>(tgt.size());
  for (double& v : ce.phi_target) v *= inv_m;
  ce.counts = src.class_counts();
  ce.source_proportions = src.proportions();
  ce.target_size = tgt.size();
  const double analytic = emb.analytic_bound();
  ce.bound = analytic > 0.0 ? analytic : std::max(source_pass.max_norm, target_pass.max_norm);
  return ce;
}

ExplicitEmbedder ExplicitEmbedder::onehot(std::vector<int> preds_source, std::vector<int> preds_target,
                                          int num_classes) {
  if (num_classes < 1) throw ParameterError("one-hot features need at least one class");
  for (const auto* preds : {&preds_source, &preds_target})
    for (int p : *preds)
      if (p < 0 || p >= num_classes) {
        std::ostringstream os;
        os << "prediction " << p + 1 << " outside [1, " << num_classes << "]";
        throw ParameterError(os.str());
      }
  ExplicitEmbedder e;
  e.kind_ = EmbedderKind::OneHot;
  e.dim_ = static_cast<std::size_t>(num_classes);
  e.preds_source_ = std::move(preds_source);
  e.preds_target_ = std::move(preds_target);
  return e;
}

ExplicitEmbedder onehot_from_predictions(std::vector<int> preds_source, std::vector<int> preds_target,
                                         int num_classes) {
  return ExplicitEmbedder::onehot(std::move(preds_source), std::move(preds_target), num_classes);
}

namespace {

int nearest(std::span<const double> x, const std::vector<Vector>& centroids, const std::vector<bool>& present) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    if (!present[i]) continue;
    double d = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double diff = x[j] - centroids[i][j];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace

Predictions nearest_centroid_crossfit(const SourceDataset& src, const TargetDataset& tgt) {
  check_compatible(src, tgt);
  const std::size_t c = static_cast<std::size_t>(src.num_classes());
  const std::size_t d = src.dim();

  // fold[r]: alternate rows within each class.
  std::vector<int> fold(src.size());
  std::vector<std::size_t> seen(c, 0);
  for (std::size_t r = 0; r < src.size(); ++r) {
    const auto y = static_cast<std::size_t>(src.labels()[r]);
    fold[r] = static_cast<int>(seen[y]++ % 2);
  }

  std::vector<std::vector<Vector>> sums(3, std::vector<Vector>(c, Vector(d, 0.0)));
  std::vector<std::vector<std::size_t>> counts(3, std::vector<std::size_t>(c, 0));
  for (std::size_t r = 0; r < src.size(); ++r) {
    const auto y = static_cast<std::size_t>(src.labels()[r]);
    auto x = src.points().row(r);
    for (int f : {fold[r], 2}) {
      for (std::size_t j = 0; j < d; ++j) sums[f][y][j] += x[j];
      ++counts[f][y];
    }
  }
  std::vector<std::vector<Vector>> centroids(3, std::vector<Vector>(c, Vector(d, 0.0)));
  std::vector<bool> all_present(c, true);
  for (int f = 0; f < 3; ++f)
    for (std::size_t i = 0; i < c; ++i) {
      // A class missing from one fold falls back to its full-source centroid.
      const int from = counts[f][i] > 0 ? f : 2;
      for (std::size_t j = 0; j < d; ++j)
        centroids[f][i][j] = sums[from][i][j] / static_cast<double>(counts[from][i]);
    }

  Predictions out;
  out.source.resize(src.size());
  for (std::size_t r = 0; r < src.size(); ++r)
    out.source[r] = nearest(src.points().row(r), centroids[1 - fold[r]], all_present);
  out.target.resize(tgt.size());
  for (std::size_t r = 0; r < tgt.size(); ++r) out.target[r] = nearest(tgt.points().row(r), centroids[2], all_present);
  return out;
}

QuantProblem problem_from_embeddings(const ClassEmbeddings& ce) {
  const std::size_t c = ce.num_classes();
  QuantProblem p;
  p.gram = SymMatrix(c);
  p.linear.resize(c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j <= i; ++j) p.gram.set(i, j, dot(ce.phi[i], ce.phi[j]));
    p.linear[i] = dot(ce.phi[i], ce.phi_target);
  }
  p.target_norm2 = dot(ce.phi_target, ce.phi_target);
  return p;
}

double energy_kernel(std::span<const double> x, std::span<const double> y) {
  double nx = 0.0, ny = 0.0, nd = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    nx += x[j] * x[j];
    ny += y[j] * y[j];
    nd += (x[j] - y[j]) * (x[j] - y[j]);
  }
  return std::sqrt(nx) + std::sqrt(ny) - std::sqrt(nd);
}

double gaussian_kernel(std::span<const double> x, std::span<const double> y, double sigma) {
  double nd = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) nd += (x[j] - y[j]) * (x[j] - y[j]);
  return std::exp(-nd / (2.0 * sigma * sigma));
}

double KernelBackend::operator()(std::span<const double> x, std::span<const double> y) const {
  return kind == KernelKind::Energy ? energy_kernel(x, y) : gaussian_kernel(x, y, sigma);
}

namespace {

// Points stored column by column so the per-pair loop vectorises.
struct Columns {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  const double* col(std::size_t j) const { return data.data() + j * rows; }
};

Columns to_columns(const Matrix& m, std::span<const std::size_t> order) {
  Columns out{order.size(), m.cols(), std::vector<double>(order.size() * m.cols())};
  for (std::size_t s = 0; s < order.size(); ++s) {
    auto r = m.row(order[s]);
    for (std::size_t j = 0; j < m.cols(); ++j) out.data[j * out.rows + s] = r[j];
  }
  return out;
}

// Σ_{s ∈ [begin, end)} g(‖x − y_s‖²), g = √· (energy) or exp(−·/2σ²) (gaussian).
template <bool kEnergy>
double range_sum(std::span<const double> x, const Columns& ys, std::size_t begin, std::size_t end,
                 double neg_inv_two_sigma2) {
  constexpr std::size_t kChunk = 256;
  double buf[kChunk];
  double total = 0.0;
  for (std::size_t s0 = begin; s0 < end; s0 += kChunk) {
    const std::size_t len = std::min(kChunk, end - s0);
    std::fill(buf, buf + len, 0.0);
    for (std::size_t j = 0; j < ys.cols; ++j) {
      const double xj = x[j];
      const double* col = ys.col(j) + s0;
      for (std::size_t s = 0; s < len; ++s) {
        const double diff = xj - col[s];
        buf[s] += diff * diff;
      }
    }
    if constexpr (kEnergy) {
      for (std::size_t s = 0; s < len; ++s) buf[s] = std::sqrt(buf[s]);
    } else {
      for (std::size_t s = 0; s < len; ++s) buf[s] = std::exp(buf[s] * neg_inv_two_sigma2);
    }
    for (std::size_t s = 0; s < len; ++s) total += buf[s];
  }
  return total;
}

template <bool kEnergy>
KernelProblem kernel_problem_impl(const SourceDataset& src, const TargetDataset& tgt, double sigma) {
  const std::size_t c = static_cast<std::size_t>(src.num_classes());
  const std::size_t n = src.size();
  const std::size_t m = tgt.size();
  const double neg_inv = kEnergy ? 0.0 : -1.0 / (2.0 * sigma * sigma);
  const double g_zero = kEnergy ? 0.0 : 1.0;  // g at zero distance
  constexpr std::size_t kPairBlock = 64;

  // Source rows grouped by class; class i occupies [offset[i], offset[i+1]).
  std::vector<std::size_t> order;
  order.reserve(n);
  std::vector<std::size_t> offset(c + 1, 0);
  std::vector<int> sorted_label(n);
  for (std::size_t i = 0; i < c; ++i) {
    offset[i] = order.size();
    for (std::size_t r = 0; r < n; ++r)
      if (static_cast<std::size_t>(src.labels()[r]) == i) order.push_back(r);
  }
  offset[c] = n;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t u = offset[i]; u < offset[i + 1]; ++u) sorted_label[u] = static_cast<int>(i);

  const Columns xs = to_columns(src.points(), order);
  std::vector<std::size_t> tgt_order(m);
  for (std::size_t t = 0; t < m; ++t) tgt_order[t] = t;
  const Columns zs = to_columns(tgt.points(), tgt_order);

  auto row_of = [](const Columns& cols, std::size_t s, std::span<double> out) {
    for (std::size_t j = 0; j < cols.cols; ++j) out[j] = cols.data[j * cols.rows + s];
  };

  // Pair sums within and across source classes (strict upper triangle for i == j).
  Vector pair = blocked_sum(n, kPairBlock, c * c,
                            [&](std::size_t, std::size_t begin, std::size_t end, std::span<double> out) {
                              Vector x(xs.cols);
                              for (std::size_t u = begin; u < end; ++u) {
                                row_of(xs, u, x);
                                const auto i = static_cast<std::size_t>(sorted_label[u]);
                                out[i * c + i] += range_sum<kEnergy>(x, xs, u + 1, offset[i + 1], neg_inv);
                                for (std::size_t j = i + 1; j < c; ++j)
                                  out[i * c + j] += range_sum<kEnergy>(x, xs, offset[j], offset[j + 1], neg_inv);
                              }
                            });
  Vector cross = blocked_sum(n, kPairBlock, c,
                             [&](std::size_t, std::size_t begin, std::size_t end, std::span<double> out) {
                               Vector x(xs.cols);
                               for (std::size_t u = begin; u < end; ++u) {
                                 row_of(xs, u, x);
                                 out[static_cast<std::size_t>(sorted_label[u])] +=
                                     range_sum<kEnergy>(x, zs, 0, m, neg_inv);
                               }
                             });
  Vector within_target = blocked_sum(m, kPairBlock, 1,
                                     [&](std::size_t, std::size_t begin, std::size_t end, std::span<double> out) {
                                       Vector z(zs.cols);
                                       for (std::size_t t = begin; t < end; ++t) {
                                         row_of(zs, t, z);
                                         out[0] += range_sum<kEnergy>(z, zs, t + 1, m, neg_inv);
                                       }
                                     });

  const auto& counts = src.class_counts();
  // Mean norms per class and over the target (energy kernel only).
  Vector class_norm(c, 0.0);
  double target_norm = 0.0;
  double max_norm = 0.0;
  if constexpr (kEnergy) {
    for (std::size_t i = 0; i < c; ++i) {
      double s = 0.0;
      for (std::size_t u = offset[i]; u < offset[i + 1]; ++u) {
        double sq = 0.0;
        for (std::size_t j = 0; j < xs.cols; ++j) sq += xs.col(j)[u] * xs.col(j)[u];
        const double nrm = std::sqrt(sq);
        s += nrm;
        max_norm = std::max(max_norm, nrm);
      }
      class_norm[i] = s / static_cast<double>(counts[i]);
    }
    double s = 0.0;
    for (std::size_t t = 0; t < m; ++t) {
      const double nrm = norm2(tgt.points().row(t));
      s += nrm;
      max_norm = std::max(max_norm, nrm);
    }
    target_norm = s / static_cast<double>(m);
  }

  KernelProblem kp;
  QuantProblem& p = kp.problem;
  p.gram = SymMatrix(c);
  p.linear.resize(c);
  for (std::size_t i = 0; i < c; ++i) {
    const double ni = static_cast<double>(counts[i]);
    for (std::size_t j = i; j < c; ++j) {
      const double nj = static_cast<double>(counts[j]);
      const double g_sum = i == j ? 2.0 * pair[i * c + i] + ni * g_zero : pair[i * c + j];
      double g_mean = g_sum / (ni * nj);
      if constexpr (kEnergy) g_mean = class_norm[i] + class_norm[j] - g_mean;
      p.gram.set(j, i, g_mean);
    }
    double q_mean = cross[i] / (ni * static_cast<double>(m));
    if constexpr (kEnergy) q_mean = class_norm[i] + target_norm - q_mean;
    p.linear[i] = q_mean;
  }
  const double md = static_cast<double>(m);
  double t_mean = (2.0 * within_target[0] + md * g_zero) / (md * md);
  if constexpr (kEnergy) t_mean = 2.0 * target_norm - t_mean;
  p.target_norm2 = t_mean;

  kp.counts = counts;
  kp.source_proportions = src.proportions();
  kp.target_size = m;
  kp.bound = kEnergy ? std::sqrt(2.0 * max_norm) : 1.0;
  return kp;
}

}  // namespace

KernelProblem kernel_problem(const KernelBackend& kb, const SourceDataset& src, const TargetDataset& tgt) {
  check_compatible(src, tgt);
  if (kb.kind == KernelKind::Gaussian) {
    if (!(kb.sigma > 0.0) || !std::isfinite(kb.sigma)) throw ParameterError("Gaussian bandwidth must be positive");
    return kernel_problem_impl<false>(src, tgt, kb.sigma);
  }
  return kernel_problem_impl<true>(src, tgt, 1.0);
}

}  // namespace dfm
