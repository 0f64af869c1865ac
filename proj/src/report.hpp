#pragma once

#include <iosfwd>
#include <optional>

#include "json.hpp"

namespace dfm::report {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Finite doubles as numbers, NaN/inf and empty optionals as null.
Json number(double v);
Json number(const std::optional<double>& v);

/// key=value lines (nested keys joined with '.') or a JSON document.
void write(const Json& doc, bool as_json, std::ostream& out);

}  // namespace dfm::report
