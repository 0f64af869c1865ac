#include "dfm/solver.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

namespace dfm {

std::string_view to_string(Mode mode) { return mode == Mode::Hard ? "hard" : "soft"; }

Mode parse_mode(std::string_view text) {
  if (text == "hard") return Mode::Hard;
  if (text == "soft") return Mode::Soft;
  throw ParameterError("unknown mode '" + std::string(text) + "' (expected hard or soft)");
}

double QuantProblem::objective(std::span<const double> alpha) const {
  return gram.quadratic_form(alpha) - 2.0 * dot(linear, alpha) + target_norm2;
}

Vector QuantProblem::gradient(std::span<const double> alpha) const {
  Vector g = gram.multiply(alpha);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (g[i] - linear[i]);
  return g;
}

QuantProblem QuantProblem::with_dummy_class() const {
  QuantProblem out;
  out.gram = gram.with_zero_border();
  out.linear.assign(linear.size() + 1, 0.0);
  std::copy(linear.begin(), linear.end(), out.linear.begin() + 1);
  out.target_norm2 = target_norm2;
  return out;
}

QuantProblem QuantProblem::permuted(std::span<const std::size_t> perm) const {
  QuantProblem out;
  out.gram = gram.permuted(perm);
  out.linear.resize(linear.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out.linear[i] = linear[perm[i]];
  out.target_norm2 = target_norm2;
  return out;
}

void QuantProblem::validate() const {
  if (linear.empty()) throw ParameterError("problem has no classes");
  if (gram.order() != linear.size()) throw ParameterError("Gram order does not match linear term");
  for (std::size_t i = 0; i < gram.order(); ++i)
    for (std::size_t j = 0; j <= i; ++j)
      if (!std::isfinite(gram(i, j))) throw NumericInputError("Gram matrix has non-finite entries");
  for (double v : linear)
    if (!std::isfinite(v)) throw NumericInputError("linear term has non-finite entries");
  if (!std::isfinite(target_norm2)) throw NumericInputError("target norm is not finite");
}

double ProportionEstimate::noise_mass() const {
  if (mode == Mode::Hard) return 0.0;
  return 1.0 - std::accumulate(alpha.begin(), alpha.end(), 0.0);
}

Vector project_to_simplex(std::span<const double> y) {
  const std::size_t n = y.size();
  Vector u(y.begin(), y.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    cumulative += u[j];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) theta = candidate;
  }
  Vector x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::max(y[i] - theta, 0.0);
  return x;
}

double simplex_kkt_residual(const QuantProblem& p, std::span<const double> alpha) {
  Vector y = p.gradient(alpha);
  for (double& v : y) v = -v;

  // Tangent cone at α: {v : Σv = 0, v_i ≥ 0 where α_i = 0}. Its projection
  // has the form v_i = y_i − μ (free) and max(0, y_i − μ) (active).
  double free_sum = 0.0;
  std::size_t free_count = 0;
  Vector active;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (alpha[i] > 0.0) {
      free_sum += y[i];
      ++free_count;
    } else {
      active.push_back(y[i]);
    }
  }
  std::sort(active.begin(), active.end(), std::greater<>());

  double mu = 0.0;
  if (free_count == 0 && active.empty()) return 0.0;
  double sum = free_sum;
  std::size_t count = free_count;
  std::size_t k = 0;
  for (;;) {
    mu = count > 0 ? sum / static_cast<double>(count) : active.front();
    if (k == active.size() || active[k] <= mu) break;
    sum += active[k];
    ++count;
    ++k;
  }

  double r2 = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    double v = y[i] - mu;
    if (!(alpha[i] > 0.0)) v = std::max(v, 0.0);
    r2 += v * v;
  }
  return std::sqrt(r2);
}

namespace {

double problem_scale(const QuantProblem& p) {
  double s = 1.0;
  for (std::size_t i = 0; i < p.gram.order(); ++i)
    for (std::size_t j = 0; j <= i; ++j) s = std::max(s, std::abs(p.gram(i, j)));
  for (double v : p.linear) s = std::max(s, std::abs(v));
  return s;
}

// Exact minimiser on the face spanned by the current support, if it is
// feasible. Returns an empty vector otherwise.
Vector polish_on_support(const QuantProblem& p, std::span<const double> x) {
  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0.0) support.push_back(i);
  const std::size_t s = support.size();
  if (s == 0) return {};

  Matrix kkt(s + 1, s + 1);
  Vector rhs(s + 1);
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t b = 0; b < s; ++b) kkt(a, b) = 2.0 * p.gram(support[a], support[b]);
    kkt(a, s) = 1.0;
    kkt(s, a) = 1.0;
    rhs[a] = 2.0 * p.linear[support[a]];
  }
  rhs[s] = 1.0;

  Vector sol;
  try {
    sol = solve_linear(std::move(kkt), std::move(rhs));
  } catch (const NumericInputError&) {
    return {};
  }
  Vector out(x.size(), 0.0);
  for (std::size_t a = 0; a < s; ++a) {
    if (!(sol[a] > 0.0)) return {};
    out[support[a]] = sol[a];
  }
  return out;
}

ProportionEstimate solve_on_simplex(const QuantProblem& p, const SolverOptions& opts, Mode mode) {
  if (!(opts.tol > 0.0)) throw ParameterError("solver tolerance must be positive");
  p.validate();

  const std::size_t k = p.num_classes();
  ProportionEstimate est;
  est.mode = mode;

  if (k == 1) {
    est.alpha = {1.0};
    est.objective = p.objective(est.alpha);
    est.kkt_residual = 0.0;
    est.converged = true;
    if (opts.record_history) est.objective_history.push_back(est.objective);
    return est;
  }

  const double lambda_max = sym_eigenvalues(p.gram).back();
  const double lipschitz = lambda_max > 0.0 ? 2.0 * lambda_max : 1.0;
  const double tol = opts.tol * problem_scale(p);

  Vector x(k, 1.0 / static_cast<double>(k));
  double fx = p.objective(x);
  double res = simplex_kkt_residual(p, x);
  Vector y = x;
  double t = 1.0;
  if (opts.record_history) est.objective_history.push_back(fx);

  auto step_from = [&](std::span<const double> base) {
    Vector g = p.gradient(base);
    Vector z(k);
    for (std::size_t i = 0; i < k; ++i) z[i] = base[i] - g[i] / lipschitz;
    return project_to_simplex(z);
  };

  auto try_polish = [&] {
    Vector cand = polish_on_support(p, x);
    if (cand.empty()) return;
    const double fc = p.objective(cand);
    const double rc = simplex_kkt_residual(p, cand);
    if (rc < res && fc <= fx + 1e-13 * std::max(1.0, std::abs(fx))) {
      x = std::move(cand);
      y = x;
      fx = fc;
      res = rc;
      t = 1.0;
      if (opts.record_history) est.objective_history.push_back(fx);
    }
  };

  // f(z) − f(x) from the step itself; differencing two objective values loses
  // everything below the rounding level of f.
  auto change = [&](std::span<const double> z) {
    Vector d(k);
    for (std::size_t i = 0; i < k; ++i) d[i] = z[i] - x[i];
    const Vector gd = p.gram.multiply(d);
    const Vector grad = p.gradient(x);
    return dot(d, gd) + dot(d, grad);
  };

  std::size_t it = 0;
  while (res > tol && it < opts.max_iter) {
    ++it;
    Vector z = step_from(y);
    if (change(z) > 0.0) {
      // Monotone restart: drop momentum and take a plain projected step.
      t = 1.0;
      z = step_from(x);
      if (change(z) > 0.0) {
        y = x;
        try_polish();
        if (res <= tol) break;
        // No descent left at working precision.
        break;
      }
    }
    const double fz = p.objective(z);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double momentum = (t - 1.0) / t_next;
    for (std::size_t i = 0; i < k; ++i) y[i] = z[i] + momentum * (z[i] - x[i]);
    x = std::move(z);
    fx = fz;
    t = t_next;
    res = simplex_kkt_residual(p, x);
    if (opts.record_history) est.objective_history.push_back(fx);
    if (res > tol && it % 10 == 0) try_polish();
  }
  if (res > tol) try_polish();

  est.alpha = std::move(x);
  est.objective = fx;
  est.iterations = it;
  est.kkt_residual = res;
  est.converged = res <= tol;
  return est;
}

}  // namespace

ProportionEstimate solve_hard(const QuantProblem& p, const SolverOptions& opts) {
  return solve_on_simplex(p, opts, Mode::Hard);
}

ProportionEstimate solve_soft(const QuantProblem& p, const SolverOptions& opts) {
  p.validate();
  ProportionEstimate est = solve_on_simplex(p.with_dummy_class(), opts, Mode::Soft);
  est.alpha.erase(est.alpha.begin());
  return est;
}

Vector solve_bbse_unconstrained(const QuantProblem& p) {
  p.validate();
  SymEigenResult eig = sym_eigen(p.gram);
  const double lambda_min = eig.values.front();
  const double lambda_max = eig.values.back();
  if (!(lambda_max > 0.0) || lambda_min <= 1e-14 * lambda_max) {
    throw IdentifiabilityError(
        "confusion matrix is singular or ill-conditioned (lambda_min = " + std::to_string(lambda_min) + ")",
        lambda_min);
  }
  const std::size_t k = p.num_classes();
  Vector alpha(k, 0.0);
  for (std::size_t e = 0; e < k; ++e) {
    double coef = 0.0;
    for (std::size_t i = 0; i < k; ++i) coef += eig.vectors(i, e) * p.linear[i];
    coef /= eig.values[e];
    for (std::size_t i = 0; i < k; ++i) alpha[i] += coef * eig.vectors(i, e);
  }
  return alpha;
}

}  // namespace dfm
