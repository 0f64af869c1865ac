#include "dfm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dfm/parallel.hpp"

namespace dfm {

SymMatrix centered_gram(const SymMatrix& gram) {
  const std::size_t c = gram.order();
  const double inv_c = 1.0 / static_cast<double>(c);
  Vector row_mean(c, 0.0);
  double total_mean = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) row_mean[i] += gram(i, j);
    row_mean[i] *= inv_c;
    total_mean += row_mean[i];
  }
  total_mean *= inv_c;
  SymMatrix out(c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j <= i; ++j) out.set(i, j, gram(i, j) - row_mean[i] - row_mean[j] + total_mean);
  return out;
}

SymMatrix centered_gram_from_features(std::span<const Vector> phi) {
  const std::size_t c = phi.size();
  const std::size_t dim = c > 0 ? phi[0].size() : 0;
  Vector mean(dim, 0.0);
  for (const auto& v : phi)
    for (std::size_t k = 0; k < dim; ++k) mean[k] += v[k];
  for (double& v : mean) v /= static_cast<double>(c);
  std::vector<Vector> centered(c, Vector(dim));
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t k = 0; k < dim; ++k) centered[i][k] = phi[i][k] - mean[k];
  SymMatrix out(c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j <= i; ++j) out.set(i, j, dot(centered[i], centered[j]));
  return out;
}

namespace {

SymMatrix gram_of(std::span<const Vector> phi) {
  SymMatrix g(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i)
    for (std::size_t j = 0; j <= i; ++j) g.set(i, j, dot(phi[i], phi[j]));
  return g;
}

SpectrumReport finish_spectrum(SymMatrix gram, SymMatrix centered) {
  SpectrumReport rep;
  rep.lambda_min = sym_eigenvalues(gram).front();
  if (centered.order() >= 2) rep.delta_min = sym_eigenvalues(centered)[1];
  rep.identifiable = rep.lambda_min >= 1e-12 * gram.trace() && gram.trace() > 0.0;
  rep.gram = std::move(gram);
  rep.centered = std::move(centered);
  return rep;
}

SpectrumReport spectrum_from_phi(std::span<const Vector> phi) {
  if (phi.empty()) throw ParameterError("spectrum needs at least one class");
  return finish_spectrum(gram_of(phi), centered_gram_from_features(phi));
}

// Minimum-norm solution of G x = rhs through the eigenbasis, dropping
// eigenvalues below 1e-12 · λ_max.
Vector pinv_solve(const SymEigenResult& eig, std::span<const double> rhs, bool& deficient) {
  const std::size_t c = eig.values.size();
  const double cut = 1e-12 * std::max(eig.values.back(), 0.0);
  Vector x(c, 0.0);
  deficient = false;
  for (std::size_t e = 0; e < c; ++e) {
    if (!(eig.values[e] > cut)) {
      deficient = true;
      continue;
    }
    double coef = 0.0;
    for (std::size_t i = 0; i < c; ++i) coef += eig.vectors(i, e) * rhs[i];
    coef /= eig.values[e];
    for (std::size_t i = 0; i < c; ++i) x[i] += coef * eig.vectors(i, e);
  }
  return x;
}

double combination_residual(std::span<const Vector> phi, std::span<const double> weights,
                            std::span<const double> target) {
  Vector r(phi.empty() ? 0 : phi[0].size(), 0.0);
  for (std::size_t k = 0; k < target.size(); ++k) r[k] = -target[k];
  for (std::size_t i = 0; i < phi.size(); ++i)
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += weights[i] * phi[i][k];
  return norm2(r);
}

}  // namespace

SpectrumReport spectrum(const ClassEmbeddings& ce) { return spectrum_from_phi(ce.phi); }

SpectrumReport spectrum(const SymMatrix& gram) {
  if (gram.order() == 0) throw ParameterError("spectrum needs at least one class");
  return finish_spectrum(gram, centered_gram(gram));
}

double r_constant(double x) { return 2.0 + std::sqrt(2.0 * std::log(2.0 * x)); }

BoundInputs bound_inputs(const ClassEmbeddings& ce) { return {ce.counts, ce.target_size, ce.bound}; }

BoundInputs bound_inputs(const KernelProblem& kp) { return {kp.counts, kp.target_size, kp.bound}; }

BoundCertificate theorem1_bound(const BoundInputs& in, const SpectrumReport& spec, const ProportionEstimate& est,
                                double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("confidence parameter delta must lie in (0, 1)");
  const std::size_t c = in.counts.size();
  if (c == 0 || est.alpha.size() != c) throw ParameterError("estimate does not match the class count");
  if (in.target_size == 0) throw ParameterError("certificate needs a non-empty target");

  BoundCertificate cert;
  cert.mode = est.mode;
  cert.delta = delta;
  cert.bound_c = in.bound_c;
  if (est.mode == Mode::Hard) {
    if (!spec.delta_min) throw IdentifiabilityError("Delta_min is undefined for a single class", spec.lambda_min);
    cert.conditioning = *spec.delta_min;
  } else {
    cert.conditioning = spec.lambda_min;
  }
  if (!(cert.conditioning > 0.0))
    throw IdentifiabilityError("conditioning constant is not positive; the certificate is vacuous", spec.lambda_min);

  double n = 0.0;
  std::size_t min_count = std::numeric_limits<std::size_t>::max();
  for (std::size_t k : in.counts) {
    n += static_cast<double>(k);
    min_count = std::min(min_count, k);
  }
  double w2 = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    const double w = est.alpha[i] * n / static_cast<double>(in.counts[i]);
    w2 += w * w;
  }
  cert.w_norm = std::sqrt(w2);

  const double m = static_cast<double>(in.target_size);
  cert.r = r_constant(static_cast<double>(c) / delta);
  const double prefactor = 2.0 * in.bound_c * cert.r / std::sqrt(cert.conditioning);
  cert.bound_w = prefactor * (cert.w_norm / std::sqrt(n) + 1.0 / std::sqrt(m));
  cert.bound_minclass = prefactor * (1.0 / std::sqrt(static_cast<double>(min_count)) + 1.0 / std::sqrt(m));
  cert.eps_n = in.bound_c * cert.r / std::sqrt(static_cast<double>(min_count));
  cert.eps_m = in.bound_c * r_constant(1.0 / delta) / std::sqrt(m);
  return cert;
}

BoundCertificate theorem1_bound(const ClassEmbeddings& ce, const ProportionEstimate& est, double delta) {
  return theorem1_bound(bound_inputs(ce), spectrum(ce), est, delta);
}

std::vector<double> default_bandwidth_grid(const SourceDataset& src, const TargetDataset& tgt, RngStream& rng) {
  check_compatible(src, tgt);
  constexpr std::size_t kMaxPoints = 2000;
  const std::size_t total = src.size() + tgt.size();
  std::vector<std::size_t> idx(total);
  for (std::size_t i = 0; i < total; ++i) idx[i] = i;
  std::size_t used = total;
  if (total > kMaxPoints) {
    // Partial Fisher-Yates: the first kMaxPoints entries are a uniform subsample.
    for (std::size_t i = 0; i < kMaxPoints; ++i) std::swap(idx[i], idx[i + rng.uniform_index(total - i)]);
    used = kMaxPoints;
  }
  auto point = [&](std::size_t k) {
    return k < src.size() ? src.points().row(k) : tgt.points().row(k - src.size());
  };

  std::vector<double> dists;
  dists.reserve(used * (used - 1) / 2);
  for (std::size_t a = 0; a < used; ++a) {
    auto x = point(idx[a]);
    for (std::size_t b = a + 1; b < used; ++b) {
      auto y = point(idx[b]);
      double s = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) s += (x[j] - y[j]) * (x[j] - y[j]);
      dists.push_back(std::sqrt(s));
    }
  }
  double median = 1.0;
  if (!dists.empty()) {
    auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    if (*mid > 0.0) median = *mid;
  }
  std::vector<double> grid;
  for (double f : {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) grid.push_back(median * f);
  return grid;
}

BandwidthSelection select_bandwidth(const SourceDataset& src, const TargetDataset& tgt, std::size_t features,
                                    std::span<const double> grid, const RngStream& rng) {
  check_compatible(src, tgt);
  if (grid.empty()) throw ParameterError("bandwidth grid is empty");
  for (double s : grid)
    if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("bandwidth grid values must be positive");

  BandwidthSelection sel;
  sel.entries.resize(grid.size());
  parallel_for_each(grid.size(), [&](std::size_t k) {
    RngStream stream = rng.substream(rff_stream_id(grid[k]));
    ExplicitEmbedder emb = rff_sample(src.dim(), features, grid[k], stream);
    sel.entries[k] = {grid[k], spectrum_from_phi(embed_class_means(emb, src))};
  });

  auto score = [](const BandwidthEntry& e) {
    return e.spectrum.delta_min ? *e.spectrum.delta_min : -std::numeric_limits<double>::infinity();
  };
  std::size_t best = 0;
  for (std::size_t k = 1; k < sel.entries.size(); ++k) {
    const double sk = score(sel.entries[k]), sb = score(sel.entries[best]);
    if (sk > sb || (sk == sb && sel.entries[k].sigma < sel.entries[best].sigma)) best = k;
  }
  sel.best_index = best;
  sel.sigma = sel.entries[best].sigma;
  return sel;
}

ContaminationReport contamination_decomposition(const ClassEmbeddings& ce, const ProportionEstimate& est,
                                                std::optional<std::span<const double>> noise_embedding) {
  const std::size_t c = ce.num_classes();
  if (est.alpha.size() != c) throw ParameterError("estimate does not match the class count");
  const QuantProblem p = problem_from_embeddings(ce);
  const SymEigenResult eig = sym_eigen(p.gram);

  ContaminationReport rep;
  bool deficient = false;
  rep.parallel_fit = pinv_solve(eig, p.linear, deficient);
  rep.span_rank_deficient = deficient;
  rep.conv_residual = combination_residual(ce.phi, est.alpha, ce.phi_target);
  // α̂ is itself a point of the span, so it competes in the least-squares minimum.
  rep.orth_norm = std::min(combination_residual(ce.phi, rep.parallel_fit, ce.phi_target), rep.conv_residual);
  rep.noise_mass = est.noise_mass();

  if (noise_embedding) {
    const auto z = *noise_embedding;
    if (z.size() != ce.dim()) throw ParameterError("noise embedding dimension does not match the feature map");
    Vector r(c);
    for (std::size_t i = 0; i < c; ++i) r[i] = dot(ce.phi[i], z);
    bool unused = false;
    Vector gamma = pinv_solve(eig, r, unused);
    rep.span_leak = combination_residual(ce.phi, gamma, {});
    rep.noise_norm = norm2(z);
  }
  return rep;
}

ContaminationReport contamination_decomposition(const QuantProblem& p, const ProportionEstimate& est) {
  p.validate();
  if (est.alpha.size() != p.num_classes()) throw ParameterError("estimate does not match the class count");
  const SymEigenResult eig = sym_eigen(p.gram);
  ContaminationReport rep;
  bool deficient = false;
  rep.parallel_fit = pinv_solve(eig, p.linear, deficient);
  rep.span_rank_deficient = deficient;
  const double f_hat = std::max(p.objective(est.alpha), 0.0);
  const double f_span = std::max(std::min(p.objective(rep.parallel_fit), f_hat), 0.0);
  rep.conv_residual = std::sqrt(f_hat);
  rep.orth_norm = std::sqrt(f_span);
  rep.noise_mass = est.noise_mass();
  return rep;
}

}  // namespace dfm
