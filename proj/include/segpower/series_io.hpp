#pragma once

#include <string>
#include <string_view>

#include "segpower/tfcp.hpp"

namespace segpower {

/// CSV with a header row. Columns: y (required), z, label, b (optional); other columns are ignored.
/// Row numbers in diagnostics are 1-based file lines, so the header is row 1.
Series<double> parse_series_csv(std::string_view text);
Series<double> ingest_series(const std::string& path);

}  // namespace segpower
