#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfm {

// Error hierarchy. The CLI maps each kind onto a distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or configuration value.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or otherwise unusable numeric data.
class NumericInputError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or stream contents.
class InputFormatError : public Error {
 public:
  using Error::Error;
};

/// The class embeddings do not determine the proportions (singular Gram).
class IdentifiabilityError : public Error {
 public:
  IdentifiabilityError(const std::string& what, double lambda_min)
      : Error(what), lambda_min_(lambda_min) {}
  double lambda_min() const noexcept { return lambda_min_; }

 private:
  double lambda_min_;
};

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  /// Copy of the rows listed in `indices`, in that order.
  Matrix select_rows(std::span<const std::size_t> indices) const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Symmetric matrix stored as its lower triangle; symmetry holds by construction.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(std::size_t order, double fill = 0.0)
      : order_(order), packed_(order * (order + 1) / 2, fill) {}

  std::size_t order() const noexcept { return order_; }

  double operator()(std::size_t i, std::size_t j) const { return packed_[index(i, j)]; }
  void set(std::size_t i, std::size_t j, double v) { packed_[index(i, j)] = v; }
  void add(std::size_t i, std::size_t j, double v) { packed_[index(i, j)] += v; }

  double trace() const;
  double frobenius_norm() const;
  Matrix to_dense() const;
  Vector multiply(std::span<const double> x) const;
  /// xᵀ M x
  double quadratic_form(std::span<const double> x) const;

  /// Copy with an extra leading row/column of zeros.
  SymMatrix with_zero_border() const;
  /// Rows/columns reordered so that result(i, j) = (*this)(perm[i], perm[j]).
  SymMatrix permuted(std::span<const std::size_t> perm) const;

  bool operator==(const SymMatrix&) const = default;

 private:
  static std::size_t index(std::size_t i, std::size_t j) {
    return i >= j ? i * (i + 1) / 2 + j : j * (j + 1) / 2 + i;
  }
  std::size_t order_ = 0;
  std::vector<double> packed_;
};

/// Labeled source sample. Labels are 0-based; every class has at least one row.
class SourceDataset {
 public:
  SourceDataset(Matrix points, std::vector<int> labels, int num_classes);

  const Matrix& points() const noexcept { return points_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  int num_classes() const noexcept { return num_classes_; }
  std::size_t size() const noexcept { return points_.rows(); }
  std::size_t dim() const noexcept { return points_.cols(); }
  const std::vector<std::size_t>& class_counts() const noexcept { return counts_; }
  /// n_i / n
  Vector proportions() const;
  std::size_t min_class_count() const;

 private:
  Matrix points_;
  std::vector<int> labels_;
  int num_classes_;
  std::vector<std::size_t> counts_;
};

/// Unlabeled target sample.
class TargetDataset {
 public:
  explicit TargetDataset(Matrix points);

  const Matrix& points() const noexcept { return points_; }
  std::size_t size() const noexcept { return points_.rows(); }
  std::size_t dim() const noexcept { return points_.cols(); }

 private:
  Matrix points_;
};

/// Throws ParameterError unless the two samples share a feature dimension.
void check_compatible(const SourceDataset& src, const TargetDataset& tgt);

/// One matrix per class holding that class's rows in original order.
std::vector<Matrix> split_by_class(const SourceDataset& src);

struct SymEigenResult {
  Vector values;   // ascending
  Matrix vectors;  // column k pairs with values[k]
  int sweeps = 0;
};

/// Cyclic Jacobi eigen-decomposition of a small symmetric matrix.
SymEigenResult sym_eigen(const SymMatrix& m);

/// Eigenvalues in ascending order.
Vector sym_eigenvalues(const SymMatrix& m);

/// Solves A x = b by LU with partial pivoting. Throws NumericInputError when
/// a pivot vanishes.
Vector solve_linear(Matrix a, Vector b);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

/// Deterministic random stream keyed by (seed, stream id).
///
/// Substreams derived with `substream` are independent of the parent and of
/// each other, so parallel workers can each own one.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  RngStream substream(std::uint64_t id) const;

  std::uint64_t next_u64() { return engine_(); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return normal_(engine_); }
  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  /// Draw from a discrete distribution with the given (unnormalised) weights.
  int categorical(std::span<const double> weights);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dfm
