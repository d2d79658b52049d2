#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace segpower {

/// Shortest decimal text that parses back to the same double.
inline std::string shortest(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

}  // namespace segpower
