#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/harness.hpp"

namespace dfm {

/// Source CSV with the class labels kept as written in the file.
struct LabeledCsv {
  Matrix points;
  std::vector<std::string> feature_names;
  /// Distinct label values in ascending order; internal class i is labels[i].
  std::vector<long long> class_labels;
  /// 0-based internal class per row.
  std::vector<int> classes;

  SourceDataset to_source() const;
};

struct TargetCsv {
  Matrix points;
  std::vector<std::string> feature_names;
  /// Raw values of a `label` column when the file has one.
  std::optional<std::vector<long long>> labels;
};

/// Comma-separated, header row required, label column named `label`.
/// Throws InputFormatError on malformed contents.
LabeledCsv read_source_csv(std::istream& in);
LabeledCsv read_source_csv(const std::string& path);

/// A `label` column is dropped (with a note in `warnings`).
TargetCsv read_target_csv(std::istream& in, std::vector<std::string>* warnings = nullptr);
TargetCsv read_target_csv(const std::string& path, std::vector<std::string>* warnings = nullptr);

/// Single-column file of integer labels under a header row.
std::vector<long long> read_predictions_csv(std::istream& in);
std::vector<long long> read_predictions_csv(const std::string& path);

/// Maps raw labels onto internal classes; unknown labels are a ParameterError.
std::vector<int> map_labels(const std::vector<long long>& raw, const std::vector<long long>& class_labels,
                            const char* what);

/// Shortest decimal string that reads back as the same double (17
/// significant digits), "nan" and "inf" for non-finite values.
std::string format_double(double v);

/// Harness CSV: method, noise_kind, eps, dim, rep, error_l2, delta_min,
/// lambda_min, noise_mass_est, runtime_ms, status.
void write_results_csv(const ExperimentResult& result, std::ostream& out);

/// Self-contained SVG with one panel per noise kind: mean error against ε for
/// each method.
void write_error_chart(const ExperimentResult& result, std::ostream& out);

/// Parses a benchmark JSON document. Unknown keys are rejected.
struct BenchmarkConfig {
  enum class Protocol { Sweep, Holdout } protocol = Protocol::Sweep;
  SweepConfig sweep;
  HoldoutConfig holdout;
  std::string source_path;
  std::string target_path;
};
BenchmarkConfig parse_benchmark_config(const std::string& json_text);

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitBadInput = 2;
inline constexpr int kExitNotIdentifiable = 3;
inline constexpr int kExitNotConverged = 4;

/// Entry point of the `dfm` tool.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dfm
