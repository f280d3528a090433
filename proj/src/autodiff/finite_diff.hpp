#pragma once

#include <functional>

#include "core/array.hpp"

namespace sadag::ad {

// Central-difference gradient estimate of a scalar function, same shape as
// `at`. The independent oracle for every gradient test in the suite.
Array finite_diff(const std::function<double(const Array&)>& f, const Array& at, double step);

}  // namespace sadag::ad
