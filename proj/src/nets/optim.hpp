#pragma once

#include <vector>

#include "core/array.hpp"

namespace sadag::nets {

struct SgdMomentum {
    explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}
    void init(const std::vector<Array*>& params);
    void step(const std::vector<Array*>& params, const std::vector<const Array*>& grads, double lr);

private:
    double momentum_;
    std::vector<Array> vel_;
};

struct Adam {
    explicit Adam(double lr) : lr(lr) {}
    double lr;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    void init(const std::vector<Array*>& params);
    void step(const std::vector<Array*>& params, const std::vector<const Array*>& grads);

private:
    std::vector<Array> m_, v_;
    int64_t t_ = 0;
};

// Adam over the rows of one (T, D) matrix; moment state and step counts are
// per row, advanced only for the rows present in a step.
struct AdamRows {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    void init(int64_t rows, int64_t dim);
    void step(Array& target, const std::vector<int64_t>& rows, const Array& grad_rows, double lr);

private:
    Array m_, v_;
    std::vector<int64_t> t_;
};

}  // namespace sadag::nets
