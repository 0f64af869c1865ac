// Acceptance checks. Each criterion prints one PASS/FAIL line; the process
// exits non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "dfm/cli.hpp"
#include "dfm/diagnostics.hpp"
#include "dfm/harness.hpp"
#include "dfm/parallel.hpp"
#include "oracles.hpp"

using namespace dfm;

namespace {

// Tolerances and budgets.
constexpr double kIdentityTol = 1e-10;
constexpr double kRefineTol = 1e-3;
constexpr std::size_t kSphereSamples = 1000000;
constexpr double kBbseTol = 1e-6;
constexpr double kGridStep = 1e-3;
constexpr double kGridTol = 1e-4;
constexpr double kRffPairTol = 0.1;
constexpr double kRffPairShare = 0.99;
constexpr double kUnitNormTol = 1e-12;
constexpr double kCoverageDelta = 0.1;
constexpr double kCleanErrorMax = 0.05;
constexpr double kBackgroundSoftMax = 0.15;
constexpr double kFarMargin = 0.02;
constexpr double kBoundCoverage = 0.95;
constexpr double kSlopeLo = 0.8;
constexpr double kSlopeHi = 1.3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<Vector> random_phi(std::size_t c, std::size_t dim, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  std::vector<Vector> phi(c, Vector(dim));
  for (auto& v : phi)
    for (double& x : v) x = nd(gen);
  return phi;
}

ClassEmbeddings embeddings_of(std::vector<Vector> phi) {
  ClassEmbeddings ce;
  ce.counts.assign(phi.size(), 1);
  ce.source_proportions.assign(phi.size(), 1.0 / static_cast<double>(phi.size()));
  ce.phi_target = phi[0];
  ce.phi = std::move(phi);
  ce.target_size = 1;
  ce.bound = 1.0;
  return ce;
}

Outcome c1() {
  std::mt19937_64 gen(101);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto phi = random_phi(2, 1 + t % 16, gen);
    double d2 = 0.0;
    for (std::size_t k = 0; k < phi[0].size(); ++k) d2 += (phi[0][k] - phi[1][k]) * (phi[0][k] - phi[1][k]);
    const SpectrumReport s = spectrum(embeddings_of(phi));
    worst = std::max(worst, std::abs(*s.delta_min - 0.5 * d2));
  }
  return {worst <= kIdentityTol, "max |delta_min - |phi1-phi2|^2/2| = " + fmt("%.3g", worst)};
}

Outcome c2() {
  std::mt19937_64 gen(202);
  std::normal_distribution<double> nd;
  bool below = true;
  double worst_gap = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t c = 3 + static_cast<std::size_t>(t % 3);
    const SpectrumReport s = spectrum(embeddings_of(random_phi(c, c + 2, gen)));
    const Matrix g = s.gram.to_dense();
    auto quad = [&](const Vector& u) {
      double f = 0.0;
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) f += u[i] * g(i, j) * u[j];
      return f;
    };
    auto to_sphere = [&](Vector& u) {
      double mean = 0.0, len = 0.0;
      for (double v : u) mean += v;
      mean /= static_cast<double>(c);
      for (double& v : u) {
        v -= mean;
        len += v * v;
      }
      len = std::sqrt(len);
      for (double& v : u) v /= len;
    };
    double best = INFINITY;
    Vector best_u, u(c);
    for (std::size_t k = 0; k < kSphereSamples; ++k) {
      for (double& v : u) v = nd(gen);
      to_sphere(u);
      const double f = quad(u);
      if (f < best) {
        best = f;
        best_u = u;
      }
    }
    double scale = 0.0;
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) scale += g(i, j) * g(i, j);
    scale = std::sqrt(scale);
    // Shifted power iteration on (scale·I − G) restricted to the sum-zero sphere.
    for (int it = 0; it < 20000; ++it) {
      Vector next(c, 0.0);
      for (std::size_t i = 0; i < c; ++i) {
        next[i] = scale * best_u[i];
        for (std::size_t j = 0; j < c; ++j) next[i] -= g(i, j) * best_u[j];
      }
      to_sphere(next);
      best_u = next;
    }
    const double refined = std::min(best, quad(best_u));
    below = below && *s.delta_min <= best + 1e-12 * scale;
    worst_gap = std::max(worst_gap, std::abs(refined - *s.delta_min));
  }
  return {below && worst_gap <= kRefineTol,
          std::string("delta_min <= sampled minimum: ") + (below ? "yes" : "no") +
              ", max |refined - delta_min| = " + fmt("%.3g", worst_gap)};
}

// Gaussian elimination with partial pivoting.
std::vector<double> eliminate(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i][k]) > std::abs(a[p][k])) p = i;
    std::swap(a[k], a[p]);
    std::swap(b[k], b[p]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i][k] / a[k][k];
      for (std::size_t j = k; j < n; ++j) a[i][j] -= f * a[k][j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a[k][j] * x[j];
    x[k] = s / a[k][k];
  }
  return x;
}

Outcome c3() {
  std::mt19937_64 gen(303);
  std::uniform_real_distribution<double> unif;
  double worst = 0.0;
  int accepted = 0, drawn = 0;
  while (accepted < 50) {
    ++drawn;
    const int c = 2 + static_cast<int>(gen() % 4);
    const double acc = 0.6 + 0.35 * unif(gen);
    const std::size_t n = 3000, m = 3000;
    auto predict = [&](int y) {
      if (unif(gen) < acc) return y;
      const int other = static_cast<int>(gen() % static_cast<std::uint64_t>(c - 1));
      return other >= y ? other + 1 : other;
    };
    std::vector<int> ys(n), ps(n), pt(m);
    for (std::size_t r = 0; r < n; ++r) {
      ys[r] = static_cast<int>(r % static_cast<std::size_t>(c));
      ps[r] = predict(ys[r]);
    }
    std::vector<double> alpha(static_cast<std::size_t>(c));
    double sum = 0.0;
    for (double& a : alpha) sum += (a = -std::log(1.0 - unif(gen)));
    for (double& a : alpha) a /= sum;
    for (std::size_t r = 0; r < m; ++r) {
      double u = unif(gen), acc_w = 0.0;
      int y = c - 1;
      for (int i = 0; i < c; ++i)
        if (u < (acc_w += alpha[static_cast<std::size_t>(i)])) {
          y = i;
          break;
        }
      pt[r] = predict(y);
    }

    std::vector<std::vector<double>> conf(static_cast<std::size_t>(c), std::vector<double>(static_cast<std::size_t>(c)));
    std::vector<double> per_class(static_cast<std::size_t>(c)), yv(static_cast<std::size_t>(c));
    for (std::size_t r = 0; r < n; ++r) {
      conf[static_cast<std::size_t>(ps[r])][static_cast<std::size_t>(ys[r])] += 1.0;
      per_class[static_cast<std::size_t>(ys[r])] += 1.0;
    }
    for (auto& row : conf)
      for (std::size_t i = 0; i < row.size(); ++i) row[i] /= per_class[i];
    for (int p : pt) yv[static_cast<std::size_t>(p)] += 1.0 / static_cast<double>(m);
    const std::vector<double> x = eliminate(conf, yv);
    if (std::any_of(x.begin(), x.end(), [](double v) { return v < 0.0; })) continue;

    const ExplicitEmbedder emb = onehot_from_predictions(ps, pt, c);
    const SourceDataset src(Matrix(n, 1), ys, c);
    const TargetDataset tgt{Matrix(m, 1)};
    const ProportionEstimate est = solve_hard(problem_from_embeddings(embed_means(emb, src, tgt)));
    for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(est.alpha[i] - x[i]));
    ++accepted;
  }
  return {worst <= kBbseTol, "50 setups (" + std::to_string(drawn) + " drawn), max l_inf gap to M^-1 Y = " +
                                 fmt("%.3g", worst)};
}

Outcome c4() {
  std::mt19937_64 gen(404);
  std::normal_distribution<double> nd;
  double worst_hard = 0.0, worst_soft = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 1 + static_cast<std::size_t>(t % 4);
    std::vector<Vector> phi(3, Vector(k));
    Vector target(k);
    for (auto& v : phi)
      for (double& x : v) x = nd(gen);
    for (double& x : target) x = nd(gen);
    oracle::Dense g(3, std::vector<double>(3));
    std::vector<double> q(3);
    double tn = 0.0;
    for (double x : target) tn += x * x;
    QuantProblem p;
    p.gram = SymMatrix(3);
    p.linear.assign(3, 0.0);
    p.target_norm2 = tn;
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t l = 0; l < k; ++l) g[i][j] += phi[i][l] * phi[j][l];
      for (std::size_t l = 0; l < k; ++l) q[i] += phi[i][l] * target[l];
      for (std::size_t j = 0; j <= i; ++j) p.gram.set(i, j, g[i][j]);
      p.linear[i] = q[i];
    }
    const ProportionEstimate hard = solve_hard(p);
    const ProportionEstimate soft = solve_soft(p);
    const double fh = oracle::quad_objective(g, q, tn, hard.alpha);
    const double fs = oracle::quad_objective(g, q, tn, soft.alpha);
    worst_hard = std::max(worst_hard, std::abs(fh - oracle::simplex_grid_min3(g, q, tn, kGridStep).value));
    worst_soft = std::max(worst_soft, std::abs(fs - oracle::subsimplex_grid_min3(g, q, tn, kGridStep).value));
  }
  return {worst_hard <= kGridTol && worst_soft <= kGridTol,
          "max objective gap to grid: hard " + fmt("%.3g", worst_hard) + ", soft " + fmt("%.3g", worst_soft)};
}

Outcome c5() {
  RngStream rng(505);
  const std::size_t d = 3;
  const double sigma = 1.0;
  const ExplicitEmbedder emb = rff_sample(d, 2048, sigma, rng);
  std::mt19937_64 gen(5050);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> radius(0.0, 3.0 * sigma);
  std::size_t close = 0;
  double worst_norm = 0.0;
  for (int t = 0; t < 1000; ++t) {
    Vector x(d), dir(d), y(d);
    double len = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      x[j] = nd(gen);
      dir[j] = nd(gen);
      len += dir[j] * dir[j];
    }
    const double r = radius(gen);
    for (std::size_t j = 0; j < d; ++j) y[j] = x[j] + r * dir[j] / std::sqrt(len);
    const Vector fx = emb.embed_point(x), fy = emb.embed_point(y);
    double dist2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) dist2 += (x[j] - y[j]) * (x[j] - y[j]);
    const double exact = std::exp(-dist2 / (2.0 * sigma * sigma));
    if (std::abs(dot(fx, fy) - exact) <= kRffPairTol) ++close;
    worst_norm = std::max({worst_norm, std::abs(norm2(fx) - 1.0), std::abs(norm2(fy) - 1.0)});
  }
  const double share = static_cast<double>(close) / 1000.0;
  return {share >= kRffPairShare && worst_norm <= kUnitNormTol,
          "pairs within 0.1: " + std::to_string(close) + "/1000, max | |phi(x)| - 1 | = " + fmt("%.3g", worst_norm)};
}

Outcome c6() {
  RngStream rng(606);
  const ExplicitEmbedder emb = rff_sample(2, 512, 1.0, rng);
  const std::size_t support = 8, n = 400, trials = 500;
  Matrix atoms(support, 2);
  Vector weights(support);
  double wsum = 0.0;
  for (std::size_t k = 0; k < support; ++k) {
    atoms(k, 0) = rng.uniform(-2.0, 2.0);
    atoms(k, 1) = rng.uniform(-2.0, 2.0);
    wsum += (weights[k] = rng.uniform(0.1, 1.0));
  }
  for (double& w : weights) w /= wsum;
  std::vector<Vector> feat(support);
  Vector mean(emb.dim(), 0.0);
  for (std::size_t k = 0; k < support; ++k) {
    feat[k] = emb.embed_point(atoms.row(k));
    for (std::size_t j = 0; j < emb.dim(); ++j) mean[j] += weights[k] * feat[k][j];
  }
  const double radius = (2.0 + std::sqrt(2.0 * std::log(2.0 / kCoverageDelta))) / std::sqrt(static_cast<double>(n));
  std::size_t covered = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    Vector emp(emb.dim(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const auto k = static_cast<std::size_t>(rng.categorical(weights));
      for (std::size_t j = 0; j < emb.dim(); ++j) emp[j] += feat[k][j] / static_cast<double>(n);
    }
    double dist = 0.0;
    for (std::size_t j = 0; j < emb.dim(); ++j) dist += (emp[j] - mean[j]) * (emp[j] - mean[j]);
    covered += std::sqrt(dist) <= radius;
  }
  const double need = (1.0 - kCoverageDelta) * trials -
                      3.0 * std::sqrt(trials * kCoverageDelta * (1.0 - kCoverageDelta));
  return {static_cast<double>(covered) >= need,
          "covered " + std::to_string(covered) + "/500 (need >= " + fmt("%.2f", need) + ")"};
}

SweepConfig paper_sweep(std::vector<NoiseKind> kinds, double eps, std::uint64_t seed) {
  SweepConfig cfg;
  cfg.classes = 5;
  cfg.noise_kinds = std::move(kinds);
  cfg.eps_grid = {eps};
  cfg.dims = {5};
  cfg.reps = 20;
  cfg.n = 10000;
  cfg.m = 10000;
  cfg.seed = seed;
  cfg.method.features = 2048;
  cfg.method.delta = 0.05;
  return cfg;
}

const ExperimentResult& clean_sweep() {
  static const ExperimentResult result = run_contamination_sweep(paper_sweep({NoiseKind::Background}, 0.0, 7));
  return result;
}

double mean_of(const ExperimentResult& r, Method m, const std::string& kind) {
  double s = 0.0;
  int k = 0;
  for (const auto& row : r.rows)
    if (row.method == m && row.noise_kind == kind && row.status == "ok") {
      s += row.error_l2;
      ++k;
    }
  return k ? s / k : NAN;
}

Outcome c7() {
  const ExperimentResult& r = clean_sweep();
  bool ok = std::all_of(r.rows.begin(), r.rows.end(), [](const ResultRow& row) { return row.status == "ok"; });
  std::string detail = "mean error over 20 seeds:";
  for (Method m : {Method::RffHard, Method::RffSoft, Method::EnergySoft, Method::BbseSoft}) {
    const double e = mean_of(r, m, "background");
    ok = ok && e <= kCleanErrorMax;
    detail += " " + std::string(to_string(m)) + " " + fmt("%.4f", e);
  }
  return {ok, detail};
}

Outcome c9() {
  const ExperimentResult& r = clean_sweep();
  std::size_t total = 0, covering = 0, ordered = 0;
  for (const auto& row : r.rows) {
    if (!row.bound_w || !row.bound_minclass) continue;
    ++total;
    covering += *row.bound_w > row.error_l2;
    ordered += *row.bound_w <= *row.bound_minclass;
  }
  const double share = total ? static_cast<double>(covering) / static_cast<double>(total) : 0.0;
  const bool a = total > 0 && share >= kBoundCoverage;
  const bool b = total > 0 && ordered == total;
  return {a && b, "bound_w > error in " + std::to_string(covering) + "/" + std::to_string(total) +
                      " runs (" + (a ? "ok" : "below 95%") + "); bound_w <= bound_minclass in " +
                      std::to_string(ordered) + "/" + std::to_string(total) + " runs (" +
                      (b ? "ok" : "violated") + ")"};
}

Outcome c8() {
  const ExperimentResult r =
      run_contamination_sweep(paper_sweep({NoiseKind::Background, NoiseKind::Far, NoiseKind::Near}, 0.3, 8));
  const double bg_soft = mean_of(r, Method::RffSoft, "background");
  const double bg_hard = mean_of(r, Method::RffHard, "background");
  const double far_soft = mean_of(r, Method::RffSoft, "far");
  const double far_energy = mean_of(r, Method::EnergySoft, "far");
  const double far_bbse = mean_of(r, Method::BbseSoft, "far");
  const bool a = bg_soft <= kBackgroundSoftMax && bg_soft < bg_hard;
  const bool b = far_soft + kFarMargin < far_energy && far_soft + kFarMargin < far_bbse;
  std::string near = "near:";
  for (Method m : {Method::RffHard, Method::RffSoft, Method::EnergySoft, Method::BbseSoft})
    near += " " + std::string(to_string(m)) + " " + fmt("%.4f", mean_of(r, m, "near"));
  return {a && b, "background soft " + fmt("%.4f", bg_soft) + " hard " + fmt("%.4f", bg_hard) + "; far soft " +
                      fmt("%.4f", far_soft) + " energy " + fmt("%.4f", far_energy) + " bbse " +
                      fmt("%.4f", far_bbse) + "; " + near + " (not asserted)"};
}

Outcome c10() {
  RngStream rng(1010);
  const std::vector<std::size_t> sizes{10000, 100000, 1000000};
  const ScalingReport rep = scaling_probe(sizes, 5, 2048, rng, 5.0);

  MixtureSpec spec;
  spec.classes = 5;
  spec.dim = 5;
  spec.means = random_means(5, 5, 20.0, 6.0, rng);
  spec.source_proportions.assign(5, 0.2);
  spec.target_proportions = random_simplex_point(5, rng);
  spec.n = 10000;
  spec.m = 10000;
  const ExperimentSample s = sample_experiment(spec, NoiseSpec{}, rng);
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  RngStream draw = rng.substream(rff_stream_id(5.0));
  const ProportionEstimate rff_est =
      solve_soft(problem_from_embeddings(embed_means(rff_sample(5, 2048, 5.0, draw), s.source, s.target)));
  const double rff_s = std::chrono::duration<double>(clock::now() - t0).count();
  t0 = clock::now();
  const ProportionEstimate en_est =
      solve_soft(kernel_problem(KernelBackend{KernelKind::Energy, 1.0}, s.source, s.target).problem);
  const double energy_s = std::chrono::duration<double>(clock::now() - t0).count();
  (void)rff_est;
  (void)en_est;

  std::string times;
  for (const auto& p : rep.points) times += " " + std::to_string(p.size) + ":" + fmt("%.3gs", p.seconds);
  const bool ok = rep.slope >= kSlopeLo && rep.slope <= kSlopeHi && energy_s > rff_s;
  return {ok, "slope " + fmt("%.3f", rep.slope) + " (" + times.substr(1) + "); n=m=1e4 energy " +
                  fmt("%.3gs", energy_s) + " vs rff " + fmt("%.3gs", rff_s)};
}

std::string strip_runtime(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    std::size_t start = 0;
    for (int k = 0; k < 9; ++k) start = line.find(',', start) + 1;
    const std::size_t end = line.find(',', start);
    out += line.substr(0, start) + line.substr(end) + "\n";
  }
  return out;
}

Outcome c11() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("dfm_accept_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  const std::string cfg = (dir / "bench.json").string();
  std::ofstream(cfg) << R"({"noise_kinds": ["background", "far", "near"], "eps_grid": [0.0, 0.2],
      "dims": [2, 5], "reps": 2, "n": 500, "m": 500, "features": 256, "seed": 11})";
  auto bench = [&](const char* threads) {
    const char* argv[] = {"dfm", "benchmark", "--config", cfg.c_str(), "--threads", threads};
    std::ostringstream out, err;
    const int code = run_cli(6, argv, out, err);
    return code == 0 ? strip_runtime(out.str()) : std::string("exit ") + std::to_string(code);
  };
  const std::string a = bench("1"), b = bench("1"), c = bench("4");
  fs::remove_all(dir);
  const bool rows = std::count(a.begin(), a.end(), '\n') == 1 + 3 * 2 * 2 * 2 * 4;
  return {rows && a == b && a == c, std::string("rerun identical: ") + (a == b ? "yes" : "no") +
                                        ", threads 1 vs 4 identical: " + (a == c ? "yes" : "no")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> selected;
  app.add_option("--criterion", selected, "Criteria to run (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "two-class delta_min identity", 1.0, c1},
      {2, "delta_min as a sum-zero Rayleigh minimum", 30.0, c2},
      {3, "hard one-hot solve equals confusion inversion", 5.0, c3},
      {4, "QP against brute-force grid", 60.0, c4},
      {5, "RFF kernel fidelity", 5.0, c5},
      {6, "mean-embedding concentration", 30.0, c6},
      {7, "clean label-shift recovery", 300.0, c7},
      {8, "robustness ordering at eps 0.3", 900.0, c8},
      {9, "plug-in certificate sanity", 300.0, c9},
      {10, "RFF scaling and energy comparison", 600.0, c10},
      {11, "benchmark reproducibility", 300.0, c11},
  };

  bool all_pass = true;
  for (const auto& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = secs <= c.budget_s;
    const bool pass = o.pass && in_budget;
    all_pass = all_pass && pass;
    std::printf("%s criterion %d (%s): %s | %.2fs of %.0fs budget%s\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.budget_s, in_budget ? "" : " (over budget)");
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
