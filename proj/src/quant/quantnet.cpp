#include "quant/quantnet.hpp"

namespace sadag::quant {

using namespace sadag::ad;
using nets::TeacherNet;

BitsConfig BitsConfig::uniform(const TeacherNet& t, int body_w, int body_a) {
    BitsConfig bc;
    const size_t nblocks = t.blocks.size();
    bc.w_bits.assign(nblocks + 1, body_w);
    bc.a_bits.assign(nblocks + 1, body_a);
    if (body_w < kNoQuantBits) {
        bc.w_bits.front() = 8;
        bc.w_bits.back() = 8;
    }
    if (body_a < kNoQuantBits) bc.a_bits.back() = 8;
    return bc;
}

std::string QuantNet::wq_name(size_t i) const {
    return i + 1 == wq.size() ? "fc" : "conv" + std::to_string(i);
}

Array QuantNet::effective_weight(size_t layer) const {
    const Array& w = layer + 1 == wq.size() ? base.fc_w : base.blocks[layer].w;
    const WeightQuantizer& q = wq[layer];
    if (q.identity()) return w;
    Array shifted(w.shape);
    for (int64_t i = 0; i < w.size(); ++i) shifted[i] = w[i] - q.offset;
    Array quantized = quantize_adaround(shifted, q.V, q);
    for (int64_t i = 0; i < quantized.size(); ++i) quantized[i] += q.offset;
    return quantized;
}

std::vector<Array> QuantNet::effective_params() const {
    std::vector<Array> ps;
    for (size_t i = 0; i < base.blocks.size(); ++i) {
        ps.push_back(effective_weight(i));
        ps.push_back(base.blocks[i].gamma);
        ps.push_back(base.blocks[i].beta);
    }
    ps.push_back(effective_weight(base.blocks.size()));
    ps.push_back(base.fc_b);
    return ps;
}

QuantNet init_quantnet(const TeacherNet& teacher, const BitsConfig& bits) {
    SADAG_CHECK(bits.w_bits.size() == teacher.blocks.size() + 1, "weight bit map has ", bits.w_bits.size(),
                " entries for ", teacher.blocks.size() + 1, " layers");
    SADAG_CHECK(bits.a_bits.size() == teacher.blocks.size() + 1, "activation bit map has ", bits.a_bits.size(),
                " entries for ", teacher.blocks.size() + 1, " quantization points");
    QuantNet qn;
    qn.base = teacher;
    for (size_t i = 0; i < bits.w_bits.size(); ++i) {
        const Array& w = i == teacher.blocks.size() ? teacher.fc_w : teacher.blocks[i].w;
        const std::string name = i == teacher.blocks.size() ? "fc" : "conv" + std::to_string(i);
        qn.wq.push_back(WeightQuantizer::build(w, bits.w_bits[i], name));
    }
    for (int b : bits.a_bits) {
        ActQuantizer a;
        a.bits = b;
        qn.aq.push_back(a);
    }
    return qn;
}

void check_same_architecture(const QuantNet& q, const TeacherNet& t) {
    SADAG_CHECK(q.base.blocks.size() == t.blocks.size() && q.base.classes == t.classes &&
                    q.base.in_ch == t.in_ch && q.base.in_h == t.in_h && q.base.in_w == t.in_w,
                "architecture mismatch between quantized net and reference net");
    for (size_t i = 0; i < t.blocks.size(); ++i)
        SADAG_CHECK(same_shape(q.base.blocks[i].w.shape, t.blocks[i].w.shape),
                    "architecture mismatch at block ", i);
}

QuantTrace quant_forward(Graph& g, QuantNet& qn, Tensor x, const QuantFwdOpts& opts) {
    SADAG_CHECK(x.shape().size() == 4 && x.shape()[0] >= 1, "quant_forward needs a non-empty NCHW batch, got ",
                shape_str(x.shape()));
    SADAG_CHECK(!(opts.effective_leaves && (opts.v_rg || opts.weights_rg)),
                "effective-leaf mode excludes quantizer leaves");
    const TeacherNet& net = qn.base;
    QuantTrace tr;

    std::vector<Array> eff;
    if (opts.effective_leaves) {
        eff = opts.effective_override ? *opts.effective_override : qn.effective_params();
        SADAG_CHECK(eff.size() == 3 * net.blocks.size() + 2, "effective parameter list has wrong arity");
    }
    const auto eff_leaf = [&](size_t i) {
        Tensor t = g.leaf(eff[i], true);
        tr.eff_leaves.push_back(t);
        return t;
    };

    // Quantized weight tensor for a layer, built according to the mode.
    const auto layer_weight = [&](size_t layer) -> Tensor {
        const Array& w = layer == net.blocks.size() ? net.fc_w : net.blocks[layer].w;
        const WeightQuantizer& q = qn.wq[layer];
        if (q.identity()) {
            Tensor wl = g.leaf(w, opts.weights_rg);
            if (opts.weights_rg) tr.w_leaves.push_back(wl);
            return wl;
        }
        Tensor wl = g.leaf(w, opts.weights_rg);
        if (opts.weights_rg) tr.w_leaves.push_back(wl);
        Tensor v = g.leaf(q.V, opts.v_rg);
        if (opts.v_rg) tr.v_leaves.push_back(v);
        Tensor shifted = affine(wl, 1.0, -q.offset);
        return affine(quantize_adaround_t(shifted, v, q), 1.0, q.offset);
    };

    const auto act_q = [&](Tensor h, size_t i, const std::string& name) {
        if (opts.freeze_act_ranges && !qn.aq[i].frozen) qn.aq[i].freeze_from(h.val(), name);
        return act_quantize_t(h, qn.aq[i]);
    };

    Tensor h = x;
    for (size_t bi = 0; bi < net.blocks.size(); ++bi) {
        const nets::ConvBlock& b = net.blocks[bi];
        Tensor w = opts.effective_leaves ? eff_leaf(3 * bi) : layer_weight(bi);
        Tensor gamma = opts.effective_leaves ? eff_leaf(3 * bi + 1) : g.constant(b.gamma);
        Tensor beta = opts.effective_leaves ? eff_leaf(3 * bi + 2) : g.constant(b.beta);
        Tensor pre = conv2d(h, w, 2, 1);
        Tensor norm = batchnorm_apply(pre, gamma, beta, g.constant(b.run_mu), g.constant(b.run_sigma));
        h = act_q(relu(norm), bi, "act" + std::to_string(bi));
        tr.layer_outputs.push_back(h);
    }

    Tensor pooled = reshape(mean_axes(h, 0b1100, true), {h.shape()[0], h.shape()[1]});
    tr.fc_input = act_q(pooled, net.blocks.size(), "fc_in");
    Tensor fw = opts.effective_leaves ? eff_leaf(3 * net.blocks.size()) : layer_weight(net.blocks.size());
    Tensor fb = opts.effective_leaves ? eff_leaf(3 * net.blocks.size() + 1) : g.constant(net.fc_b);
    tr.logits = add(matmul(tr.fc_input, fw), fb);
    tr.layer_outputs.push_back(tr.logits);
    return tr;
}

}  // namespace sadag::quant
