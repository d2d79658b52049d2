#include "segpower/series_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include "segpower/errors.hpp"

namespace segpower {
namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void fail(long row, const std::string& column, const std::string& message) {
    std::string where;
    if (row > 0) where = "row " + std::to_string(row);
    if (!column.empty()) where += (where.empty() ? "" : ", ") + std::string("column '") + column + "'";
    throw IngestionError(static_cast<std::size_t>(row), column, where.empty() ? message : where + ": " + message);
}

// RFC 4180 subset: double-quoted fields with "" escapes, no embedded newlines.
std::vector<std::string> split_row(const std::string& line, long row) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"' && trim(cur).empty()) {
            quoted = was_quoted = true;
            cur.clear();
        } else if (c == ',') {
            out.push_back(was_quoted ? cur : trim(cur));
            cur.clear();
            was_quoted = false;
        } else {
            cur += c;
        }
    }
    if (quoted) fail(row, "", "unterminated quoted field");
    out.push_back(was_quoted ? cur : trim(cur));
    return out;
}

double parse_cell(const std::string& cell, long row, const std::string& name) {
    if (cell.empty()) fail(row, name, "empty cell");
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (*first == '+') ++first;
    double v = 0;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
        fail(row, name, "'" + cell + "' is not a finite number");
    }
    return v;
}

}  // namespace

Series<double> parse_series_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    long row = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++row;
        if (!trim(line).empty()) {
            header = split_row(line, row);
            break;
        }
    }
    if (header.empty()) fail(0, "", "file is empty");
    if (header[0].compare(0, 3, "\xef\xbb\xbf") == 0) header[0].erase(0, 3);
    for (auto& h : header) {
        std::transform(h.begin(), h.end(), h.begin(), [](unsigned char c) { return std::tolower(c); });
    }

    auto column = [&](const char* name) -> std::optional<std::size_t> {
        std::optional<std::size_t> found;
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (header[c] != name) continue;
            if (found) fail(row, name, "duplicate column");
            found = c;
        }
        return found;
    };
    const auto cy = column("y");
    if (!cy) fail(row, "y", "missing required column");
    const auto cz = column("z");
    const auto cl = column("label");
    const auto cb = column("b");

    std::vector<double> y, z, b;
    std::vector<std::string> labels;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto cells = split_row(line, row);
        if (cells.size() != header.size()) {
            fail(row, "", "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
        }
        auto num = [&](std::size_t c) { return parse_cell(cells[c], row, header[c]); };
        y.push_back(num(*cy));
        if (cz) z.push_back(num(*cz));
        if (cb) b.push_back(num(*cb));
        if (cl) {
            if (cells[*cl].empty()) fail(row, "label", "empty cell");
            labels.push_back(cells[*cl]);
        }
    }
    if (y.size() < 4) {
        fail(row, "", "need at least 4 observations, found " + std::to_string(y.size()));
    }

    const auto n = static_cast<Index>(y.size());
    auto s = Series<double>::from_values(Eigen::Map<const Eigen::VectorXd>(y.data(), n));
    if (cz) s.z = Eigen::Map<const Eigen::VectorXd>(z.data(), n);
    if (cb) s.b = Eigen::Map<const Eigen::VectorXd>(b.data(), n);
    s.labels = std::move(labels);
    return s;
}

Series<double> ingest_series(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(0, "", "cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_series_csv(ss.str());
}

}  // namespace segpower
