#include "core/array.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace sadag {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        SADAG_CHECK(d >= 0, "negative extent in shape ", shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

bool all_finite(const Array& a) {
    for (double v : a.data)
        if (!std::isfinite(v)) return false;
    return true;
}

double max_abs_diff(const Array& a, const Array& b) {
    SADAG_CHECK(a.size() == b.size(), "size mismatch ", a.size(), " vs ", b.size());
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

bool bit_equal(const Array& a, const Array& b) {
    if (!same_shape(a.shape, b.shape)) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

}  // namespace sadag
