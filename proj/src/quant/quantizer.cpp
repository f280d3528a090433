#include "quant/quantizer.hpp"

#include <algorithm>
#include <cmath>

namespace sadag::quant {

using namespace sadag::ad;

ScaleInfo compute_scale(const Array& w, int bits) {
    SADAG_CHECK(bits >= 2, "quantizer needs at least 2 bits, got ", bits);
    SADAG_CHECK(bits < kNoQuantBits, "compute_scale called for the no-quantization sentinel");
    SADAG_CHECK(w.size() > 0, "compute_scale of empty tensor");
    const auto [mn, mx] = std::minmax_element(w.data.begin(), w.data.end());
    SADAG_CHECK(*mx > *mn, "degenerate weight range: constant tensor (value ", *mn, ")");
    const int64_t levels = (int64_t{1} << bits) - 1;
    return {(*mx - *mn) / static_cast<double>(levels), 0, levels};
}

WeightQuantizer WeightQuantizer::build(const Array& w, int bits, const std::string& layer_name) {
    WeightQuantizer q;
    q.bits = bits;
    if (q.identity()) return q;
    try {
        const ScaleInfo si = compute_scale(w, bits);
        q.scale = si.scale;
        q.qmin = si.qmin;
        q.qmax = si.qmax;
    } catch (const Error& e) {
        SADAG_THROW("layer ", layer_name, ": ", e.what());
    }
    q.offset = *std::min_element(w.data.begin(), w.data.end());
    q.V = Array(w.shape);
    for (int64_t i = 0; i < w.size(); ++i) {
        const double idx = (w[i] - q.offset) / q.scale;
        double frac = idx - std::floor(idx);
        frac = std::min(1.0, std::max(0.0, frac));
        q.V[i] = std::log((frac + 0.1) / (1.1 - frac));
    }
    return q;
}

Tensor h_soft(Tensor v) { return clip(affine(sigmoid(v), 1.2, -0.1), 0.0, 1.0); }

namespace {

double h_soft_val(double v) {
    const double s = 1.0 / (1.0 + std::exp(-v));
    return std::min(1.0, std::max(0.0, 1.2 * s - 0.1));
}

double clip_val(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

}  // namespace

Tensor quantize_nearest_t(Tensor w, const WeightQuantizer& q) {
    if (q.identity()) return w;
    Graph& g = *w.g;
    Tensor idx = div(w, g.scalar(q.scale));
    Tensor k = clip(round_ste(idx), static_cast<double>(q.qmin), static_cast<double>(q.qmax));
    return scale(k, q.scale);
}

Array quantize_nearest(const Array& w, const WeightQuantizer& q) {
    if (q.identity()) return w;
    Array out(w.shape);
    for (int64_t i = 0; i < w.size(); ++i)
        out[i] = q.scale * clip_val(std::floor(w[i] / q.scale + 0.5), static_cast<double>(q.qmin),
                                    static_cast<double>(q.qmax));
    return out;
}

Tensor quantize_adaround_t(Tensor w, Tensor v, const WeightQuantizer& q) {
    if (q.identity()) return w;
    Graph& g = *w.g;
    Tensor idx = div(w, g.scalar(q.scale));
    Tensor soft = add(floor_ste(idx), h_soft(v));
    // Residual to the hard decision, injected as a constant: the forward
    // value rounds, the backward pass sees only the smooth surrogate.
    Array residual(soft.shape());
    const Array& soft_val = soft.val();
    const Array& idx_val = idx.val();
    const Array& v_val = v.val();
    for (int64_t i = 0; i < residual.size(); ++i) {
        const double hard = std::floor(idx_val[i]) + (h_soft_val(v_val[i]) >= 0.5 ? 1.0 : 0.0);
        residual[i] = hard - soft_val[i];
    }
    Tensor ste = add(soft, g.constant(residual));
    return scale(clip(ste, static_cast<double>(q.qmin), static_cast<double>(q.qmax)), q.scale);
}

Array quantize_adaround(const Array& w, const Array& v, const WeightQuantizer& q) {
    if (q.identity()) return w;
    SADAG_CHECK(same_shape(w.shape, v.shape), "rounding logits shape ", shape_str(v.shape),
                " does not match weights ", shape_str(w.shape));
    Array out(w.shape);
    for (int64_t i = 0; i < w.size(); ++i) {
        const double hard = std::floor(w[i] / q.scale) + (h_soft_val(v[i]) >= 0.5 ? 1.0 : 0.0);
        out[i] = q.scale * clip_val(hard, static_cast<double>(q.qmin), static_cast<double>(q.qmax));
    }
    return out;
}

Tensor round_regularizer_t(Tensor v, double beta) {
    SADAG_CHECK(beta >= 2.0, "rounding regularizer needs beta >= 2, got ", beta);
    Tensor t = abs_(affine(h_soft(v), 2.0, -1.0));
    Tensor tb = exp_(scale(log_(clip(t, 1e-12, 1.0)), beta));
    return sum(affine(tb, -1.0, 1.0));
}

double round_regularizer(const Array& v, double beta) {
    SADAG_CHECK(beta >= 2.0, "rounding regularizer needs beta >= 2, got ", beta);
    double acc = 0.0;
    for (double x : v.data) acc += 1.0 - std::pow(std::fabs(2.0 * h_soft_val(x) - 1.0), beta);
    return acc;
}

void ActQuantizer::freeze_from(const Array& x, const std::string& layer_name) {
    if (bits >= kNoQuantBits || frozen) return;
    const auto [mn, mx] = std::minmax_element(x.data.begin(), x.data.end());
    SADAG_CHECK(*mx - *mn > 1e-12, "layer ", layer_name, ": degenerate activation range [", *mn, ", ", *mx, "]");
    lo = *mn;
    hi = *mx;
    frozen = true;
}

Tensor act_quantize_t(Tensor x, const ActQuantizer& q) {
    if (!q.active()) return x;
    Graph& g = *x.g;
    const double levels = static_cast<double>((int64_t{1} << q.bits) - 1);
    const double step = (q.hi - q.lo) / levels;
    Tensor k = round_ste(div(affine(x, 1.0, -q.lo), g.scalar(step)));
    return affine(scale(clip(k, 0.0, levels), step), 1.0, q.lo);
}

}  // namespace sadag::quant
