#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace stp {

/// Round-trip exact decimal rendering; infinities print as inf / -inf.
inline std::string fmt_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace stp
