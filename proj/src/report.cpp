#include "report.hpp"

#include <cmath>
#include <ostream>
#include <string>

#include "dfm/cli.hpp"

namespace dfm {

namespace report {

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json number(const std::optional<double>& v) { return v ? number(*v) : Json(nullptr); }

namespace {

std::string scalar_text(const Json& v) {
  switch (v.type()) {
    case Json::value_t::null:
      return "undefined";
    case Json::value_t::boolean:
      return v.get<bool>() ? "true" : "false";
    case Json::value_t::number_float:
      return format_double(v.get<double>());
    case Json::value_t::number_integer:
      return std::to_string(v.get<long long>());
    case Json::value_t::number_unsigned:
      return std::to_string(v.get<unsigned long long>());
    case Json::value_t::string:
      return v.get<std::string>();
    default:
      return v.dump();
  }
}

bool all_scalar(const Json& arr) {
  for (const auto& v : arr)
    if (v.is_structured()) return false;
  return true;
}

void flatten(const Json& v, const std::string& key, std::ostream& out) {
  if (v.is_object()) {
    for (const auto& [k, child] : v.items()) flatten(child, key.empty() ? k : key + "." + k, out);
  } else if (v.is_array() && all_scalar(v)) {
    out << key << '=';
    bool first = true;
    for (const auto& e : v) {
      out << (first ? "" : ",") << scalar_text(e);
      first = false;
    }
    out << '\n';
  } else if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) flatten(v[i], key + "." + std::to_string(i), out);
  } else {
    out << key << '=' << scalar_text(v) << '\n';
  }
}

}  // namespace

void write(const Json& doc, bool as_json, std::ostream& out) {
  if (as_json)
    out << doc.dump(2) << '\n';
  else
    flatten(doc, "", out);
}

}  // namespace report

namespace {

using report::Json;

template <class T>
T get_as(const Json& v, const char* key) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParameterError(std::string("benchmark config: '") + key + "' has the wrong type");
  }
}

}  // namespace

BenchmarkConfig parse_benchmark_config(const std::string& json_text) {
  Json doc;
  try {
    doc = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputFormatError(std::string("benchmark config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw InputFormatError("benchmark config must be a JSON object");

  BenchmarkConfig cfg;
  SweepConfig& sw = cfg.sweep;
  MethodOptions mo;
  std::optional<std::vector<Method>> methods;
  std::optional<std::uint64_t> seed;

  for (const auto& [key, v] : doc.items()) {
    const char* k = key.c_str();
    if (key == "protocol") {
      const auto p = get_as<std::string>(v, k);
      if (p == "sweep")
        cfg.protocol = BenchmarkConfig::Protocol::Sweep;
      else if (p == "holdout")
        cfg.protocol = BenchmarkConfig::Protocol::Holdout;
      else
        throw ParameterError("benchmark config: protocol must be 'sweep' or 'holdout'");
    } else if (key == "classes") {
      sw.classes = get_as<int>(v, k);
    } else if (key == "noise_kinds") {
      sw.noise_kinds.clear();
      for (const auto& s : get_as<std::vector<std::string>>(v, k)) sw.noise_kinds.push_back(parse_noise_kind(s));
    } else if (key == "eps_grid") {
      sw.eps_grid = get_as<std::vector<double>>(v, k);
    } else if (key == "dims") {
      sw.dims = get_as<std::vector<std::size_t>>(v, k);
    } else if (key == "reps") {
      sw.reps = get_as<std::size_t>(v, k);
    } else if (key == "methods") {
      methods.emplace();
      for (const auto& s : get_as<std::vector<std::string>>(v, k)) methods->push_back(parse_method(s));
    } else if (key == "seed") {
      seed = get_as<std::uint64_t>(v, k);
    } else if (key == "n") {
      sw.n = get_as<std::size_t>(v, k);
    } else if (key == "m") {
      sw.m = get_as<std::size_t>(v, k);
    } else if (key == "box") {
      sw.box = get_as<double>(v, k);
    } else if (key == "min_separation") {
      sw.min_separation = get_as<double>(v, k);
    } else if (key == "far_offset") {
      sw.far_offset = get_as<double>(v, k);
    } else if (key == "features") {
      mo.features = get_as<std::size_t>(v, k);
    } else if (key == "sigma") {
      mo.sigma = get_as<double>(v, k);
    } else if (key == "sigma_grid") {
      mo.sigma_grid = get_as<std::vector<double>>(v, k);
    } else if (key == "delta") {
      mo.delta = get_as<double>(v, k);
    } else if (key == "tol") {
      mo.solver.tol = get_as<double>(v, k);
    } else if (key == "max_iter") {
      mo.solver.max_iter = get_as<std::size_t>(v, k);
    } else if (key == "source") {
      cfg.source_path = get_as<std::string>(v, k);
    } else if (key == "target") {
      cfg.target_path = get_as<std::string>(v, k);
    } else {
      throw ParameterError("benchmark config: unknown key '" + key + "'");
    }
  }

  if (mo.features == 0 || (mo.features % 2) != 0) throw ParameterError("benchmark config: features must be even");
  if (!(mo.solver.tol > 0.0)) throw ParameterError("benchmark config: tol must be positive");
  sw.method = mo;
  cfg.holdout.method = mo;
  if (methods) {
    if (methods->empty()) throw ParameterError("benchmark config: methods must be non-empty");
    sw.methods = *methods;
    cfg.holdout.methods = *methods;
  }
  if (seed) {
    sw.seed = *seed;
    cfg.holdout.seed = *seed;
  }
  if (cfg.protocol == BenchmarkConfig::Protocol::Holdout) {
    if (cfg.source_path.empty() || cfg.target_path.empty())
      throw ParameterError("benchmark config: the holdout protocol needs 'source' and 'target' paths");
  } else {
    if (!cfg.source_path.empty() || !cfg.target_path.empty())
      throw ParameterError("benchmark config: 'source'/'target' only apply to the holdout protocol");
    sw.validate();
  }
  return cfg;
}

}  // namespace dfm
