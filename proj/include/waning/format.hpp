#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace waning {

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
    if (std::isnan(x)) return "NA";
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, end);
}

} // namespace waning
