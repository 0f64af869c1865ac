#include "dfm/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dfm {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw ParameterError("matrix data size does not match shape");
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto src = row(indices[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

double SymMatrix::trace() const {
  double t = 0.0;
  for (std::size_t i = 0; i < order_; ++i) t += (*this)(i, i);
  return t;
}

double SymMatrix::frobenius_norm() const {
  double s = 0.0;
  for (std::size_t i = 0; i < order_; ++i)
    for (std::size_t j = 0; j < order_; ++j) s += (*this)(i, j) * (*this)(i, j);
  return std::sqrt(s);
}

Matrix SymMatrix::to_dense() const {
  Matrix out(order_, order_);
  for (std::size_t i = 0; i < order_; ++i)
    for (std::size_t j = 0; j < order_; ++j) out(i, j) = (*this)(i, j);
  return out;
}

Vector SymMatrix::multiply(std::span<const double> x) const {
  Vector y(order_, 0.0);
  for (std::size_t i = 0; i < order_; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < order_; ++j) s += (*this)(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

double SymMatrix::quadratic_form(std::span<const double> x) const {
  Vector y = multiply(x);
  return dot(x, y);
}

SymMatrix SymMatrix::with_zero_border() const {
  SymMatrix out(order_ + 1);
  for (std::size_t i = 0; i < order_; ++i)
    for (std::size_t j = 0; j <= i; ++j) out.set(i + 1, j + 1, (*this)(i, j));
  return out;
}

SymMatrix SymMatrix::permuted(std::span<const std::size_t> perm) const {
  SymMatrix out(order_);
  for (std::size_t i = 0; i < order_; ++i)
    for (std::size_t j = 0; j <= i; ++j) out.set(i, j, (*this)(perm[i], perm[j]));
  return out;
}

namespace {

void require_finite(const Matrix& m, const char* what) {
  for (double v : m.data())
    if (!std::isfinite(v)) throw NumericInputError(std::string(what) + " contains non-finite values");
}

}  // namespace

SourceDataset::SourceDataset(Matrix points, std::vector<int> labels, int num_classes)
    : points_(std::move(points)), labels_(std::move(labels)), num_classes_(num_classes) {
  if (num_classes_ < 1) throw ParameterError("source needs at least one class");
  if (labels_.size() != points_.rows())
    throw ParameterError("label count does not match source row count");
  if (points_.cols() == 0) throw ParameterError("source points have zero columns");
  require_finite(points_, "source points");
  counts_.assign(static_cast<std::size_t>(num_classes_), 0);
  for (int y : labels_) {
    if (y < 0 || y >= num_classes_) {
      std::ostringstream os;
      os << "source label " << y + 1 << " outside [1, " << num_classes_ << "]";
      throw ParameterError(os.str());
    }
    ++counts_[static_cast<std::size_t>(y)];
  }
  for (std::size_t i = 0; i < counts_.size(); ++i)
    if (counts_[i] == 0) throw ParameterError("source class " + std::to_string(i + 1) + " has no rows");
}

Vector SourceDataset::proportions() const {
  Vector beta(counts_.size());
  const double n = static_cast<double>(size());
  for (std::size_t i = 0; i < counts_.size(); ++i) beta[i] = static_cast<double>(counts_[i]) / n;
  return beta;
}

std::size_t SourceDataset::min_class_count() const {
  return *std::min_element(counts_.begin(), counts_.end());
}

TargetDataset::TargetDataset(Matrix points) : points_(std::move(points)) {
  if (points_.rows() == 0) throw ParameterError("target sample is empty");
  if (points_.cols() == 0) throw ParameterError("target points have zero columns");
  require_finite(points_, "target points");
}

void check_compatible(const SourceDataset& src, const TargetDataset& tgt) {
  if (src.dim() != tgt.dim()) {
    std::ostringstream os;
    os << "source has " << src.dim() << " feature columns but target has " << tgt.dim();
    throw ParameterError(os.str());
  }
}

std::vector<Matrix> split_by_class(const SourceDataset& src) {
  std::vector<std::vector<std::size_t>> rows(static_cast<std::size_t>(src.num_classes()));
  for (std::size_t r = 0; r < src.size(); ++r)
    rows[static_cast<std::size_t>(src.labels()[r])].push_back(r);
  std::vector<Matrix> out;
  out.reserve(rows.size());
  for (const auto& idx : rows) out.push_back(src.points().select_rows(idx));
  return out;
}

SymEigenResult sym_eigen(const SymMatrix& m) {
  const std::size_t n = m.order();
  if (n == 0) throw ParameterError("eigen-decomposition of an empty matrix");
  Matrix a = m.to_dense();
  for (double v : a.data())
    if (!std::isfinite(v)) throw NumericInputError("matrix has non-finite entries");

  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  constexpr int kMaxSweeps = 100;
  const double threshold = 1e-13 * m.frobenius_norm();
  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
    if (std::sqrt(off) <= threshold) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t;
        if (std::abs(tau) > 1e150)
          t = 0.5 / tau;
        else
          t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });

  SymEigenResult out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  out.sweeps = sweep;
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
  }
  return out;
}

Vector sym_eigenvalues(const SymMatrix& m) { return sym_eigen(m).values; }

Vector solve_linear(Matrix a, Vector b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw ParameterError("solve_linear: shape mismatch");
  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  if (scale == 0.0 && n > 0) throw NumericInputError("solve_linear: zero matrix");

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    if (std::abs(a(piv, k)) <= 1e-14 * scale) throw NumericInputError("solve_linear: singular matrix");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      b[i] -= f * b[k];
    }
  }
  Vector x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a(k, j) * x[j];
    x[k] = s / a(k, k);
  }
  return x;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace {

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(make_engine(seed, stream)) {}

RngStream RngStream::substream(std::uint64_t id) const {
  return RngStream(seed_, splitmix64(splitmix64(stream_) ^ (id + 0x632BE59BD9B4E019ULL)));
}

int RngStream::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return static_cast<int>(i);
    u -= weights[i];
  }
  // Roundoff can leave u just past the last positive weight.
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return static_cast<int>(i);
  return 0;
}

}  // namespace dfm
