#pragma once

#include <charconv>
#include <cstdio>
#include <string>
#include <system_error>

#include "error.hpp"

namespace imspeech {

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_roundtrip(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

inline double parse_double(const std::string& s) {
    double v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    require(r.ec == std::errc() && r.ptr == s.data() + s.size(), ErrorKind::Format, "not a number: '" + s + "'");
    return v;
}

}  // namespace imspeech
