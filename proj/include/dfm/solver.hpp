#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "dfm/core.hpp"

namespace dfm {

enum class Mode { Hard, Soft };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view text);

/// Quadratic matching problem over class weights.
///
/// The stored objective is
///   f(α) = αᵀGα − 2qᵀα + target_norm2 = ‖Σ α_i φ_i − φ_target‖²,
/// where G_ij = ⟨φ_i, φ_j⟩ and q_i = ⟨φ_i, φ_target⟩.
struct QuantProblem {
  SymMatrix gram;
  Vector linear;
  double target_norm2 = 0.0;

  std::size_t num_classes() const noexcept { return linear.size(); }

  double objective(std::span<const double> alpha) const;
  /// ∇f(α) = 2(Gα − q)
  Vector gradient(std::span<const double> alpha) const;

  /// Adds the zero-embedding dummy class as coordinate 0.
  QuantProblem with_dummy_class() const;
  /// Relabels classes: new class i is old class perm[i].
  QuantProblem permuted(std::span<const std::size_t> perm) const;

  /// Throws ParameterError on shape mismatch or non-finite entries.
  void validate() const;
};

struct SolverOptions {
  double tol = 1e-10;
  std::size_t max_iter = 100000;
  /// Record f at every accepted iterate (for descent checks).
  bool record_history = false;
};

struct ProportionEstimate {
  Vector alpha;
  Mode mode = Mode::Hard;
  double objective = 0.0;
  std::size_t iterations = 0;
  double kkt_residual = 0.0;
  bool converged = false;
  Vector objective_history;

  /// Mass assigned to the dummy class, 1 − Σα (0 in hard mode).
  double noise_mass() const;
};

/// Euclidean projection onto {x ≥ 0, Σx = 1} by sort-and-threshold.
Vector project_to_simplex(std::span<const double> y);

/// Norm of the projection of −∇f(α) onto the tangent cone of the simplex at α.
double simplex_kkt_residual(const QuantProblem& p, std::span<const double> alpha);

/// argmin f over the simplex. Non-convergence within max_iter is reported
/// through `converged`, not thrown.
ProportionEstimate solve_hard(const QuantProblem& p, const SolverOptions& opts = {});

/// argmin f over {α ≥ 0, Σα ≤ 1} via the dummy class.
ProportionEstimate solve_soft(const QuantProblem& p, const SolverOptions& opts = {});

/// Unconstrained minimiser of f (the classic confusion-matrix inversion when
/// the problem comes from one-hot classifier features). Entries may be
/// negative. Throws IdentifiabilityError when G is numerically singular.
Vector solve_bbse_unconstrained(const QuantProblem& p);

}  // namespace dfm
