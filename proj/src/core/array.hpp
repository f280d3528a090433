#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace sadag {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major f64 array. Plain value type; autodiff wraps it in Tensor.
struct Array {
    Shape shape;
    std::vector<double> data;

    Array() = default;
    Array(Shape s, double fill = 0.0) : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), fill) {}
    Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        SADAG_CHECK(numel(shape) == static_cast<int64_t>(data.size()), "array shape ", shape_str(shape),
                    " does not match data length ", data.size());
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    static Array scalar(double v) { return Array({}, std::vector<double>{v}); }
    bool is_scalar() const { return data.size() == 1 && shape.empty(); }
    double item() const {
        SADAG_CHECK(data.size() == 1, "item() on array of ", data.size(), " elements");
        return data[0];
    }
};

bool all_finite(const Array& a);
double max_abs_diff(const Array& a, const Array& b);
bool bit_equal(const Array& a, const Array& b);

}  // namespace sadag
