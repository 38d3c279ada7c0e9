#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

namespace blockflow::util {

/// Shortest decimal string that parses back to exactly the same double.
/// Used for CSV traces, diagram dumps, and generated source so that all
/// text output is deterministic and lossless.
inline std::string fmtDouble(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// fmtDouble, forced to look like a C floating literal ("5" becomes "5.0").
inline std::string fmtDoubleC(double v) {
    std::string s = fmtDouble(v);
    if (s.find_first_of(".eE") == std::string::npos && s != "nan" &&
        s.find("inf") == std::string::npos) {
        s += ".0";
    }
    return s;
}

}  // namespace blockflow::util
