#include "autodiff/finite_diff.hpp"

#include <cmath>

namespace sadag::ad {

Array finite_diff(const std::function<double(const Array&)>& f, const Array& at, double step) {
    SADAG_CHECK(step > 0.0, "finite_diff step must be positive, got ", step);
    Array grad(at.shape, 0.0);
    Array probe = at;
    for (int64_t i = 0; i < at.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double fp = f(probe);
        probe[i] = orig - step;
        const double fm = f(probe);
        probe[i] = orig;
        SADAG_CHECK(std::isfinite(fp) && std::isfinite(fm), "finite_diff: non-finite function value at coordinate ",
                    i);
        grad[i] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

}  // namespace sadag::ad
