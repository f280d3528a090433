#pragma once

#include "nets/teacher.hpp"
#include "quant/quantizer.hpp"

namespace sadag::quant {

// Resolved per-layer bit widths: one weight entry per conv block plus the fc
// head, one activation entry per block output plus the fc input.
struct BitsConfig {
    std::vector<int> w_bits;
    std::vector<int> a_bits;

    // Body width for all middle layers. Unless the body is the 32-bit
    // sentinel, first conv and fc weights are pinned at 8 bits and the fc
    // input activation at 8 bits.
    static BitsConfig uniform(const nets::TeacherNet& t, int body_w, int body_a);
};

// Fake-quantized mirror of a TeacherNet: shares architecture and BN state,
// carries a weight quantizer per conv/fc layer and an activation quantizer
// per block output plus fc input.
struct QuantNet {
    nets::TeacherNet base;
    std::vector<WeightQuantizer> wq;  // blocks then fc
    std::vector<ActQuantizer> aq;     // block outputs then fc input

    int64_t layer_count() const { return base.layer_count(); }
    std::string wq_name(size_t i) const;

    // Quantized weight values as used by the forward pass (offset + grid value).
    Array effective_weight(size_t layer) const;
    // Effective parameters in a fixed order: per block (w_eff, gamma, beta),
    // then fc_w_eff, fc_b. The domain of the sharpness probe.
    std::vector<Array> effective_params() const;
};

QuantNet init_quantnet(const nets::TeacherNet& teacher, const BitsConfig& bits);

struct QuantFwdOpts {
    bool v_rg = false;        // expose rounding logits as differentiable leaves
    bool weights_rg = false;  // expose continuous weights as differentiable leaves
    // Forward from free effective-parameter leaves (no quantization ops);
    // used by the sharpness probe. `effective_override` substitutes values.
    bool effective_leaves = false;
    const std::vector<Array>* effective_override = nullptr;
    bool freeze_act_ranges = false;  // capture unfrozen activation ranges from this batch
};

struct QuantTrace {
    std::vector<ad::Tensor> layer_outputs;  // block outputs (post act-quant) then logits
    ad::Tensor fc_input;                    // (N, d) post act-quant
    ad::Tensor logits;
    std::vector<ad::Tensor> v_leaves;
    std::vector<ad::Tensor> w_leaves;
    std::vector<ad::Tensor> eff_leaves;
};

QuantTrace quant_forward(ad::Graph& g, QuantNet& qn, ad::Tensor x, const QuantFwdOpts& opts = {});

void check_same_architecture(const QuantNet& q, const nets::TeacherNet& t);

}  // namespace sadag::quant
