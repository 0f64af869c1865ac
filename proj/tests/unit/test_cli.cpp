#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "dfm/cli.hpp"
#include "json.hpp"

using namespace dfm;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "dfm");
  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch_dir() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / ("dfm_cli_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string write_file(const std::string& name, const std::string& text) {
  const fs::path p = scratch_dir() / name;
  std::ofstream(p) << text;
  return p.string();
}

// Two well separated 2-d blobs; labels 3 and 7.
std::string blob_csv(std::size_t n3, std::size_t n7, bool with_label, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::ostringstream os;
  os << "x,y" << (with_label ? ",label" : "") << "\n";
  os.precision(17);
  for (std::size_t k = 0; k < n3 + n7; ++k) {
    const bool first = k < n3;
    os << (first ? 0.0 : 8.0) + nd(gen) << ',' << nd(gen);
    if (with_label) os << ',' << (first ? 3 : 7);
    os << '\n';
  }
  return os.str();
}

std::string label_file(std::size_t n3, std::size_t n7) {
  std::string s = "pred\n";
  for (std::size_t k = 0; k < n3; ++k) s += "3\n";
  for (std::size_t k = 0; k < n7; ++k) s += "7\n";
  return s;
}

nlohmann::json parse(const std::string& s) { return nlohmann::json::parse(s); }

std::string drop_runtime(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (line.back() == ',') f.push_back("");
    f.erase(f.begin() + 9);
    for (const auto& x : f) out += x + ",";
    out += "\n";
  }
  return out;
}

}  // namespace

TEST_CASE("estimate with perfect predictions recovers the target shares exactly") {
  const auto src = write_file("ex_src.csv", blob_csv(40, 60, true, 1));
  const auto tgt = write_file("ex_tgt.csv", blob_csv(30, 70, false, 2));
  const auto ps = write_file("ex_ps.csv", label_file(40, 60));
  const auto pt = write_file("ex_pt.csv", label_file(30, 70));
  for (const char* mode : {"hard", "soft"}) {
    const Run r = run({"estimate", "--source", src, "--target", tgt, "--method", "bbse", "--predictions-source", ps,
                       "--predictions-target", pt, "--mode", mode, "--json"});
    REQUIRE(r.code == kExitOk);
    const auto j = parse(r.out);
    CHECK(j["alpha"]["3"].get<double>() == doctest::Approx(0.3).epsilon(1e-9));
    CHECK(j["alpha"]["7"].get<double>() == doctest::Approx(0.7).epsilon(1e-9));
    CHECK(j["bbse_unconstrained"]["3"].get<double>() == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(j["labels"] == nlohmann::json::array({3, 7}));
    CHECK(j["spectrum"]["delta_min"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(j["certificate"]["kind"] == "plug-in");
    CHECK(j["solver"]["converged"] == true);
    CHECK(j["schema_version"] == 1);
  }
}

TEST_CASE("singleton classes and a target equal to the first") {
  const auto src = write_file("sg_src.csv", "x,y,label\n0,0,1\n5,0,2\n");
  const auto tgt = write_file("sg_tgt.csv", "x,y\n0,0\n");
  const Run r = run({"estimate", "--source", src, "--target", tgt, "--mode", "soft", "--sigma", "1", "--json"});
  REQUIRE(r.code == kExitOk);
  const auto j = parse(r.out);
  CHECK(j["alpha"]["1"].get<double>() == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(std::abs(j["alpha"]["2"].get<double>()) <= 1e-8);
  CHECK(std::abs(j["noise_mass"].get<double>()) <= 1e-8);
}

TEST_CASE("constrained and unconstrained BBSE agree inside the simplex") {
  const auto src = write_file("bb_src.csv", blob_csv(50, 50, true, 3));
  const auto tgt = write_file("bb_tgt.csv", blob_csv(20, 80, false, 4));
  const Run r = run({"estimate", "--source", src, "--target", tgt, "--method", "bbse", "--json"});
  REQUIRE(r.code == kExitOk);
  const auto j = parse(r.out);
  for (const char* k : {"3", "7"})
    CHECK(j["alpha"][k].get<double>() == doctest::Approx(j["bbse_unconstrained"][k].get<double>()).epsilon(1e-8));
}

TEST_CASE("estimate with RFF and energy features") {
  const auto src = write_file("rf_src.csv", blob_csv(300, 300, true, 5));
  const auto tgt = write_file("rf_tgt.csv", blob_csv(150, 450, false, 6));
  const Run a = run({"estimate", "--source", src, "--target", tgt, "--features", "256", "--json"});
  REQUIRE(a.code == kExitOk);
  const auto ja = parse(a.out);
  CHECK(std::abs(ja["alpha"]["3"].get<double>() - 0.25) < 0.05);
  CHECK(ja["sigma"].get<double>() > 0.0);

  const Run e = run({"estimate", "--source", src, "--target", tgt, "--method", "energy", "--mode", "soft"});
  REQUIRE(e.code == kExitOk);
  CHECK(e.out.find("alpha.3=") != std::string::npos);
  CHECK(e.out.find("noise_mass=") != std::string::npos);
}

TEST_CASE("a label column in the target is ignored with a warning") {
  const auto src = write_file("wl_src.csv", blob_csv(30, 30, true, 7));
  const auto tgt = write_file("wl_tgt.csv", blob_csv(30, 30, true, 8));
  const Run r = run({"estimate", "--source", src, "--target", tgt, "--method", "bbse"});
  CHECK(r.code == kExitOk);
  CHECK(r.err.find("warning:") != std::string::npos);
}

TEST_CASE("diagnose: two perfect classes") {
  const auto src = write_file("dg_src.csv", blob_csv(20, 20, true, 9));
  const auto tgt = write_file("dg_tgt.csv", blob_csv(10, 30, false, 10));
  const auto ps = write_file("dg_ps.csv", label_file(20, 20));
  const auto pt = write_file("dg_pt.csv", label_file(10, 30));
  const Run r = run({"diagnose", "--source", src, "--target", tgt, "--method", "bbse", "--predictions-source", ps,
                     "--predictions-target", pt, "--json"});
  REQUIRE(r.code == kExitOk);
  const auto j = parse(r.out);
  const auto& g = j["spectrum"]["gram"];
  const double d2 = g[0][0].get<double>() + g[1][1].get<double>() - 2.0 * g[0][1].get<double>();
  CHECK(j["spectrum"]["delta_min"].get<double>() == doctest::Approx(0.5 * d2).epsilon(1e-12));
  CHECK(j["contamination"]["conv_residual"].get<double>() < 1e-6);
  CHECK(j["contamination"]["span_rank_deficient"] == false);
}

TEST_CASE("diagnose: a single class has undefined delta_min") {
  const auto src = write_file("one_src.csv", "x,label\n0.0,5\n1.0,5\n2.0,5\n");
  const auto tgt = write_file("one_tgt.csv", "x\n0.5\n1.5\n");
  const Run r = run({"diagnose", "--source", src, "--target", tgt, "--method", "energy"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("spectrum.delta_min=undefined") != std::string::npos);
  const Run j = run({"diagnose", "--source", src, "--target", tgt, "--method", "energy", "--json"});
  CHECK(parse(j.out)["spectrum"]["delta_min"].is_null());
}

TEST_CASE("a constant classifier is not identifiable") {
  const auto src = write_file("cc_src.csv", blob_csv(20, 20, true, 11));
  const auto tgt = write_file("cc_tgt.csv", blob_csv(20, 20, false, 12));
  const auto ps = write_file("cc_ps.csv", label_file(40, 0));
  const auto pt = write_file("cc_pt.csv", label_file(40, 0));
  for (const char* cmd : {"estimate", "diagnose"}) {
    const Run r = run({cmd, "--source", src, "--target", tgt, "--method", "bbse", "--predictions-source", ps,
                       "--predictions-target", pt});
    CHECK(r.code == kExitNotIdentifiable);
    CHECK(r.err.find("not identifiable") != std::string::npos);
  }
}

TEST_CASE("select-bandwidth and reuse of the chosen sigma") {
  const auto src = write_file("sb_src.csv", blob_csv(200, 200, true, 13));
  const auto tgt = write_file("sb_tgt.csv", blob_csv(100, 300, false, 14));
  const Run one = run({"select-bandwidth", "--source", src, "--target", tgt, "--features", "128", "--sigma", "2.5",
                       "--json"});
  REQUIRE(one.code == kExitOk);
  CHECK(parse(one.out)["sigma_star"].get<double>() == 2.5);

  const Run sel = run({"select-bandwidth", "--source", src, "--target", tgt, "--features", "128", "--seed", "4",
                       "--json"});
  REQUIRE(sel.code == kExitOk);
  const auto js = parse(sel.out);
  CHECK(js["grid"].size() == 7);
  const double sigma = js["sigma_star"].get<double>();
  const double dmin = js["entries"][js["best_index"].get<std::size_t>()]["delta_min"].get<double>();

  const Run est = run({"estimate", "--source", src, "--target", tgt, "--features", "128", "--seed", "4",
                       "--sigma", format_double(sigma), "--json"});
  REQUIRE(est.code == kExitOk);
  CHECK(parse(est.out)["spectrum"]["delta_min"].get<double>() == dmin);

  const Run bad = run({"select-bandwidth", "--source", src, "--target", tgt, "--method", "energy"});
  CHECK(bad.code == kExitBadInput);
}

TEST_CASE("benchmark: one row, determinism and outputs") {
  const auto cfg = write_file("bench.json", R"({"noise_kinds": ["far"], "eps_grid": [0.1], "dims": [2],
    "reps": 1, "methods": ["rffm-soft"], "n": 200, "m": 200, "features": 64, "seed": 5})");
  const Run a = run({"benchmark", "--config", cfg});
  REQUIRE(a.code == kExitOk);
  std::istringstream in(a.out);
  std::string header, row, extra;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "method,noise_kind,eps,dim,rep,error_l2,delta_min,lambda_min,noise_mass_est,runtime_ms,status");
  CHECK(row.rfind("rffm-soft,far,0.10000000000000001,2,0,", 0) == 0);
  CHECK_FALSE(std::getline(in, extra));

  const Run b = run({"benchmark", "--config", cfg, "--threads", "2"});
  CHECK(drop_runtime(a.out) == drop_runtime(b.out));
  const Run c = run({"benchmark", "--config", cfg, "--seed", "6"});
  CHECK(drop_runtime(a.out) != drop_runtime(c.out));

  const auto csv = (scratch_dir() / "bench_out.csv").string();
  const auto svg = (scratch_dir() / "bench.svg").string();
  const Run d = run({"benchmark", "--config", cfg, "--out", csv, "--svg", svg});
  REQUIRE(d.code == kExitOk);
  CHECK(d.out.rfind("rows=1\n", 0) == 0);
  std::ifstream f(svg);
  std::string first;
  std::getline(f, first);
  CHECK(first.rfind("<svg", 0) == 0);
}

TEST_CASE("benchmark: full-size configuration parses to the expected cell count") {
  const BenchmarkConfig cfg = parse_benchmark_config(R"({
    "noise_kinds": ["background"], "eps_grid": [0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
    "dims": [2, 3, 4, 5, 6, 7, 8, 9, 10], "reps": 20,
    "methods": ["rffm-hard", "rffm-soft", "energy-soft", "bbse+-soft"], "n": 10000, "m": 10000})");
  CHECK_NOTHROW(cfg.sweep.validate());
  const std::size_t rows = cfg.sweep.noise_kinds.size() * cfg.sweep.eps_grid.size() * cfg.sweep.dims.size() *
                           cfg.sweep.reps * cfg.sweep.methods.size();
  CHECK(rows == 5040);
}

TEST_CASE("benchmark: holdout protocol") {
  const auto src = write_file("ho_src.csv", blob_csv(100, 100, true, 15));
  const auto tgt = write_file("ho_tgt.csv", blob_csv(40, 60, true, 16));
  const auto cfg = write_file("ho.json", R"({"protocol": "holdout", "source": ")" + src + R"(", "target": ")" + tgt +
                                             R"(", "methods": ["rffm-hard"], "features": 64, "sigma": 2.0})");
  const Run r = run({"benchmark", "--config", cfg});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("rffm-hard,baseline,") != std::string::npos);
  CHECK(r.out.find("rffm-hard,holdout,0.40000000000000002,2,1,") != std::string::npos);

  const auto nolabel = write_file("ho_tgt2.csv", blob_csv(40, 60, false, 16));
  const auto cfg2 = write_file("ho2.json", R"({"protocol": "holdout", "source": ")" + src + R"(", "target": ")" +
                                               nolabel + R"("})");
  CHECK(run({"benchmark", "--config", cfg2}).code == kExitBadInput);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_benchmark_config(R"({"reps": 1, "colour": "red"})"), ParameterError);
  CHECK_THROWS_AS(parse_benchmark_config(R"({"reps": "many"})"), ParameterError);
  CHECK_THROWS_AS(parse_benchmark_config("{not json"), InputFormatError);
  CHECK_THROWS_AS(parse_benchmark_config(R"({"features": 7})"), ParameterError);
  const auto cfg = write_file("badkey.json", R"({"colour": 1})");
  CHECK(run({"benchmark", "--config", cfg}).code == kExitBadInput);
}

TEST_CASE("input and flag errors exit with code 2") {
  const auto src = write_file("er_src.csv", blob_csv(10, 10, true, 17));
  const auto tgt = write_file("er_tgt.csv", blob_csv(10, 10, false, 18));
  const auto ragged = write_file("ragged.csv", "x,y,label\n1,2,3\n4,5\n");
  const auto text = write_file("text.csv", "x,y,label\n1,abc,3\n");
  const auto wide = write_file("wide.csv", "x,y,z\n1,2,3\n");
  CHECK(run({"estimate", "--source", ragged, "--target", tgt}).code == kExitBadInput);
  CHECK(run({"estimate", "--source", text, "--target", tgt}).code == kExitBadInput);
  CHECK(run({"estimate", "--source", src, "--target", wide}).code == kExitBadInput);
  CHECK(run({"estimate", "--source", "/nonexistent.csv", "--target", tgt}).code == kExitBadInput);
  CHECK(run({"estimate", "--source", src, "--target", tgt, "--mode", "medium"}).code == kExitBadInput);
  CHECK(run({"estimate", "--source", src, "--target", tgt, "--sigma", "1", "--auto-sigma"}).code == kExitBadInput);
  CHECK(run({"estimate", "--source", src, "--target", tgt, "--features", "7"}).code == kExitBadInput);
  CHECK(run({"estimate", "--source", src, "--target", tgt, "--delta", "1.5"}).code == kExitBadInput);
  CHECK(run({"estimate", "--target", tgt}).code == kExitBadInput);
  CHECK(run({"frobnicate"}).code == kExitBadInput);
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("prediction labels must be source classes") {
  const auto src = write_file("pl_src.csv", blob_csv(5, 5, true, 19));
  const auto tgt = write_file("pl_tgt.csv", blob_csv(5, 5, false, 20));
  const auto ps = write_file("pl_ps.csv", label_file(5, 5));
  const auto pt = write_file("pl_pt.csv", "pred\n3\n3\n3\n3\n3\n9\n7\n7\n7\n7\n");
  const Run r = run({"estimate", "--source", src, "--target", tgt, "--method", "bbse", "--predictions-source", ps,
                     "--predictions-target", pt});
  CHECK(r.code == kExitBadInput);
  CHECK(r.err.find("9") != std::string::npos);
}

TEST_CASE("CSV parsing details") {
  std::istringstream in("\xEF\xBB\xBF" "a, b ,label\r\n\r\n1.5,\"2\",2.0\r\n-3,4e1,10\r\n");
  const LabeledCsv c = read_source_csv(in);
  CHECK(c.feature_names == std::vector<std::string>{"a", "b"});
  CHECK(c.class_labels == std::vector<long long>{2, 10});
  CHECK(c.classes == std::vector<int>{0, 1});
  CHECK(c.points(1, 1) == 40.0);
  std::istringstream inf("x,label\ninf,1\n");
  CHECK_THROWS_AS(read_source_csv(inf), NumericInputError);
  std::istringstream nolabel("x,y\n1,2\n");
  CHECK_THROWS_AS(read_source_csv(nolabel), InputFormatError);
}

TEST_CASE("doubles round-trip through 17 significant digits") {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> exponent(-300.0, 300.0);
  for (int k = 0; k < 10000; ++k) {
    const double v = std::pow(10.0, exponent(gen)) * (gen() % 2 ? 1.0 : -1.0);
    CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
  }
  CHECK(format_double(std::nan("")) == "nan");
  CHECK(format_double(-INFINITY) == "-inf");
}
