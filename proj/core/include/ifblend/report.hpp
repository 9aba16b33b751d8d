#pragma once

#include "ifblend/evaluate.hpp"

#include <filesystem>
#include <string>

namespace ifblend {

/// Shortest round-trip decimal for finite values; "inf", "-inf", "nan"
/// otherwise. Empty optionals become the empty string.
std::string format_metric(double value);

/// One row per image, then a final "mean" row of the aggregates.
std::string report_to_csv(const EvalReport& report);

/// {"rows": [...], "aggregates": {...}, "excluded": {...}, "protocol": {...}}.
/// Non-finite numbers are written as the strings "inf" / "nan".
std::string report_to_json(const EvalReport& report);

/// Writes <dir>/<stem>.csv and <dir>/<stem>.json.
void write_report(const EvalReport& report, const std::filesystem::path& dir,
                  const std::string& stem = "eval");

}  // namespace ifblend
