#pragma once

#include <string>

#include "autodiff/ops.hpp"

namespace sadag::quant {

// bits >= 32 means pass-through (no quantization).
constexpr int kNoQuantBits = 32;

struct ScaleInfo {
    double scale;
    int64_t qmin, qmax;  // grid index bounds: 0 and 2^bits - 1
};

// s = (max(w) - min(w)) / (2^bits - 1). Rejects constant tensors.
ScaleInfo compute_scale(const Array& w, int bits);

// Learned-rounding weight quantizer. Operates on min-shifted weights (the
// layer stores `offset` = min of the original tensor and quantizes
// w - offset, so the grid index range [qmin, qmax] is nonnegative and the
// range endpoints are exactly representable).
struct WeightQuantizer {
    int bits = kNoQuantBits;
    double offset = 0.0;
    double scale = 1.0;
    int64_t qmin = 0, qmax = 0;
    Array V;                  // rounding logits, shaped like the weight
    double beta_round = 20.0; // annealed 20 -> 2 over a calibration run

    bool identity() const { return bits >= kNoQuantBits; }

    // Logits chosen so h(V) equals the fractional part of w/s: the hard
    // rounding decision at init reproduces round-to-nearest exactly.
    static WeightQuantizer build(const Array& w, int bits, const std::string& layer_name);
};

// h(V) = clip(1.2*sigmoid(V) - 0.1, 0, 1): hits 0 and 1 at finite V.
ad::Tensor h_soft(ad::Tensor v);

// s * clip(round(w/s), qmin, qmax); straight-through rounding backward.
ad::Tensor quantize_nearest_t(ad::Tensor w, const WeightQuantizer& q);
Array quantize_nearest(const Array& w, const WeightQuantizer& q);

// s * clip(floor(w/s) + H(V), qmin, qmax) with the hard decision
// H = (h(V) >= 0.5) in the forward value and the smooth surrogate
// floor(w/s) + h(V) carrying the backward pass.
ad::Tensor quantize_adaround_t(ad::Tensor w, ad::Tensor v, const WeightQuantizer& q);
Array quantize_adaround(const Array& w, const Array& v, const WeightQuantizer& q);

// sum(1 - |2h(V)-1|^beta); zero iff every h is exactly 0 or 1.
ad::Tensor round_regularizer_t(ad::Tensor v, double beta);
double round_regularizer(const Array& v, double beta);

// Per-tensor affine min-max activation quantizer; the range freezes on the
// first calibration batch and the quantizer passes values through until then.
struct ActQuantizer {
    int bits = kNoQuantBits;
    bool frozen = false;
    double lo = 0.0, hi = 0.0;

    bool active() const { return frozen && bits < kNoQuantBits; }
    void freeze_from(const Array& x, const std::string& layer_name);
};

ad::Tensor act_quantize_t(ad::Tensor x, const ActQuantizer& q);

}  // namespace sadag::quant
