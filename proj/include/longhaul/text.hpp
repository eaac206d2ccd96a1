#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "longhaul/errors.hpp"

namespace longhaul {
namespace text {

// %.17g round-trips IEEE doubles exactly through strtod.
inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw Error(Errc::parse_error, "bad number '" + s + "'");
    return v;
}

inline long long parse_int(const std::string& s) {
    char* end = nullptr;
    long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
        throw Error(Errc::parse_error, "bad integer '" + s + "'");
    return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

} // namespace text
} // namespace longhaul
