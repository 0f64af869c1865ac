#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "dfm/cli.hpp"

namespace dfm {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
  std::string out(s.substr(b, e - b));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                             : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

RawTable read_table(std::istream& in) {
  RawTable t;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      for (const auto& name : t.header)
        if (name.empty()) throw InputFormatError("CSV header has an empty column name");
      continue;
    }
    if (fields.size() != t.header.size()) {
      std::ostringstream os;
      os << "line " << lineno << ": expected " << t.header.size() << " fields, found " << fields.size();
      throw InputFormatError(os.str());
    }
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(lineno);
  }
  if (!have_header) throw InputFormatError("CSV file is empty (a header row is required)");
  return t;
}

double parse_double(const std::string& s, std::size_t lineno) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty()) {
    throw InputFormatError("line " + std::to_string(lineno) + ": '" + s + "' is not a number");
  }
  if (!std::isfinite(v))
    throw NumericInputError("line " + std::to_string(lineno) + ": non-finite value '" + s + "'");
  return v;
}

long long parse_integer(const std::string& s, std::size_t lineno) {
  long long v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty()) {
    // Accept integral values written as reals, e.g. "2.0".
    double d = 0.0;
    auto [p2, e2] = std::from_chars(first, last, d);
    if (e2 == std::errc() && p2 == last && std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9e15)
      return static_cast<long long>(d);
    throw InputFormatError("line " + std::to_string(lineno) + ": label '" + s + "' is not an integer");
  }
  return v;
}

std::ifstream open_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputFormatError("cannot open '" + path + "'");
  return f;
}

std::optional<std::size_t> find_column(const std::vector<std::string>& header, const char* name) {
  std::optional<std::size_t> at;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) {
      if (at) throw InputFormatError(std::string("duplicate '") + name + "' column");
      at = j;
    }
  return at;
}

Matrix feature_matrix(const RawTable& t, std::optional<std::size_t> skip, std::vector<std::string>& names) {
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (!skip || j != *skip) {
      cols.push_back(j);
      names.push_back(t.header[j]);
    }
  if (cols.empty()) throw InputFormatError("CSV has no feature columns");
  Matrix m(t.rows.size(), cols.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t k = 0; k < cols.size(); ++k) m(r, k) = parse_double(t.rows[r][cols[k]], t.line_numbers[r]);
  return m;
}

}  // namespace

SourceDataset LabeledCsv::to_source() const {
  return SourceDataset(points, classes, static_cast<int>(class_labels.size()));
}

LabeledCsv read_source_csv(std::istream& in) {
  const RawTable t = read_table(in);
  const auto label_col = find_column(t.header, "label");
  if (!label_col) throw InputFormatError("source CSV needs a 'label' column");
  if (t.rows.empty()) throw InputFormatError("source CSV has no data rows");
  LabeledCsv out;
  out.points = feature_matrix(t, label_col, out.feature_names);
  std::vector<long long> raw(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) raw[r] = parse_integer(t.rows[r][*label_col], t.line_numbers[r]);
  out.class_labels = raw;
  std::sort(out.class_labels.begin(), out.class_labels.end());
  out.class_labels.erase(std::unique(out.class_labels.begin(), out.class_labels.end()), out.class_labels.end());
  out.classes = map_labels(raw, out.class_labels, "source label");
  return out;
}

LabeledCsv read_source_csv(const std::string& path) {
  auto f = open_file(path);
  return read_source_csv(f);
}

TargetCsv read_target_csv(std::istream& in, std::vector<std::string>* warnings) {
  const RawTable t = read_table(in);
  if (t.rows.empty()) throw InputFormatError("target CSV has no data rows");
  const auto label_col = find_column(t.header, "label");
  TargetCsv out;
  out.points = feature_matrix(t, label_col, out.feature_names);
  if (label_col) {
    std::vector<long long> labels(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      labels[r] = parse_integer(t.rows[r][*label_col], t.line_numbers[r]);
    out.labels = std::move(labels);
    if (warnings) warnings->push_back("target CSV has a 'label' column; it is ignored for estimation");
  }
  return out;
}

TargetCsv read_target_csv(const std::string& path, std::vector<std::string>* warnings) {
  auto f = open_file(path);
  return read_target_csv(f, warnings);
}

std::vector<long long> read_predictions_csv(std::istream& in) {
  const RawTable t = read_table(in);
  if (t.header.size() != 1) throw InputFormatError("predictions CSV must have exactly one column");
  std::vector<long long> out(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) out[r] = parse_integer(t.rows[r][0], t.line_numbers[r]);
  return out;
}

std::vector<long long> read_predictions_csv(const std::string& path) {
  auto f = open_file(path);
  return read_predictions_csv(f);
}

std::vector<int> map_labels(const std::vector<long long>& raw, const std::vector<long long>& class_labels,
                            const char* what) {
  std::vector<int> out(raw.size());
  for (std::size_t r = 0; r < raw.size(); ++r) {
    auto it = std::lower_bound(class_labels.begin(), class_labels.end(), raw[r]);
    if (it == class_labels.end() || *it != raw[r])
      throw ParameterError(std::string(what) + " " + std::to_string(raw[r]) + " (row " + std::to_string(r + 1) +
                           ") is not a source class");
    out[r] = static_cast<int>(it - class_labels.begin());
  }
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_results_csv(const ExperimentResult& result, std::ostream& out) {
  out << "method,noise_kind,eps,dim,rep,error_l2,delta_min,lambda_min,noise_mass_est,runtime_ms,status\n";
  for (const auto& r : result.rows) {
    out << to_string(r.method) << ',' << r.noise_kind << ',' << format_double(r.eps) << ',' << r.dim << ','
        << r.rep << ',' << format_double(r.error_l2) << ',' << (r.delta_min ? format_double(*r.delta_min) : "")
        << ',' << format_double(r.lambda_min) << ',' << format_double(r.noise_mass_est) << ','
        << format_double(r.runtime_ms) << ',' << r.status << '\n';
  }
}

}  // namespace dfm
