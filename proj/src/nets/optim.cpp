#include "nets/optim.hpp"

#include <cmath>

namespace sadag::nets {

void SgdMomentum::init(const std::vector<Array*>& params) {
    vel_.clear();
    for (const Array* p : params) vel_.push_back(Array(p->shape, 0.0));
}

void SgdMomentum::step(const std::vector<Array*>& params, const std::vector<const Array*>& grads, double lr) {
    SADAG_CHECK(params.size() == vel_.size() && grads.size() == params.size(), "optimizer state/parameter mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        Array& p = *params[i];
        const Array& g = *grads[i];
        Array& v = vel_[i];
        for (int64_t j = 0; j < p.size(); ++j) {
            v[j] = momentum_ * v[j] + g[j];
            p[j] -= lr * v[j];
        }
    }
}

void Adam::init(const std::vector<Array*>& params) {
    m_.clear();
    v_.clear();
    t_ = 0;
    for (const Array* p : params) {
        m_.push_back(Array(p->shape, 0.0));
        v_.push_back(Array(p->shape, 0.0));
    }
}

void Adam::step(const std::vector<Array*>& params, const std::vector<const Array*>& grads) {
    SADAG_CHECK(params.size() == m_.size() && grads.size() == params.size(), "optimizer state/parameter mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Array& p = *params[i];
        const Array& g = *grads[i];
        for (int64_t j = 0; j < p.size(); ++j) {
            m_[i][j] = beta1 * m_[i][j] + (1.0 - beta1) * g[j];
            v_[i][j] = beta2 * v_[i][j] + (1.0 - beta2) * g[j] * g[j];
            const double mh = m_[i][j] / bc1;
            const double vh = v_[i][j] / bc2;
            p[j] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

void AdamRows::init(int64_t rows, int64_t dim) {
    m_ = Array({rows, dim}, 0.0);
    v_ = Array({rows, dim}, 0.0);
    t_.assign(static_cast<size_t>(rows), 0);
}

void AdamRows::step(Array& target, const std::vector<int64_t>& rows, const Array& grad_rows, double lr) {
    const int64_t dim = target.shape[1];
    SADAG_CHECK(grad_rows.size() == static_cast<int64_t>(rows.size()) * dim, "row-gradient size mismatch");
    for (size_t r = 0; r < rows.size(); ++r) {
        const int64_t row = rows[r];
        const int64_t t = ++t_[static_cast<size_t>(row)];
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (int64_t j = 0; j < dim; ++j) {
            const double g = grad_rows[static_cast<int64_t>(r) * dim + j];
            double& m = m_[row * dim + j];
            double& v = v_[row * dim + j];
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g * g;
            target[row * dim + j] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
        }
    }
}

}  // namespace sadag::nets
