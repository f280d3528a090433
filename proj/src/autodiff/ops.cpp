#include "autodiff/ops.hpp"

#include <cmath>

namespace sadag::ad {

namespace {

Graph* common_graph(std::initializer_list<Tensor> ts) {
    Graph* g = nullptr;
    for (const Tensor& t : ts) {
        SADAG_CHECK(t.valid(), "operation on invalid tensor");
        SADAG_CHECK(g == nullptr || g == t.g, "operands live on different graphs");
        g = t.g;
    }
    return g;
}

Tensor emit1(Op op, Tensor x, std::array<int64_t, 6> iattr = {}, double d0 = 0, double d1 = 0) {
    Node n;
    n.op = op;
    n.a = x.id;
    n.iattr = iattr;
    n.d0 = d0;
    n.d1 = d1;
    return x.g->emit(std::move(n));
}

Tensor emit2(Op op, Tensor a, Tensor b, std::array<int64_t, 6> iattr = {}) {
    common_graph({a, b});
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.iattr = iattr;
    return a.g->emit(std::move(n));
}

void require_rank(const Tensor& t, size_t rank, const char* who) {
    SADAG_CHECK(t.shape().size() == rank, who, " expects rank-", rank, " input, got ", shape_str(t.shape()));
}

}  // namespace

Tensor add(Tensor a, Tensor b) { return emit2(Op::Add, a, b); }
Tensor sub(Tensor a, Tensor b) { return emit2(Op::Sub, a, b); }
Tensor mul(Tensor a, Tensor b) { return emit2(Op::Mul, a, b); }
Tensor div(Tensor a, Tensor b) { return emit2(Op::Div, a, b); }

Tensor affine(Tensor x, double sc, double sh) { return emit1(Op::Affine, x, {}, sc, sh); }

Tensor matmul(Tensor a, Tensor b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    SADAG_CHECK(a.shape()[1] == b.shape()[0], "matmul inner-dimension mismatch: ", shape_str(a.shape()), " x ",
                shape_str(b.shape()));
    return emit2(Op::Matmul, a, b);
}

Tensor transpose2d(Tensor m) {
    require_rank(m, 2, "transpose2d");
    return emit1(Op::Transpose2d, m);
}

Tensor swap01(Tensor t) {
    SADAG_CHECK(t.shape().size() >= 2, "swap01 expects rank >= 2, got ", shape_str(t.shape()));
    return emit1(Op::Swap01, t);
}

Tensor conv2d(Tensor x, Tensor w, int64_t stride, int64_t pad) { return conv2d(x, w, stride, pad, pad); }

Tensor conv2d(Tensor x, Tensor w, int64_t stride, int64_t pad_h, int64_t pad_w) {
    require_rank(x, 4, "conv2d");
    require_rank(w, 4, "conv2d weights");
    SADAG_CHECK(x.shape()[1] == w.shape()[1], "conv2d channel mismatch: input ", shape_str(x.shape()),
                " vs weights ", shape_str(w.shape()));
    SADAG_CHECK(stride >= 1, "conv2d stride must be >= 1");
    SADAG_CHECK(pad_h >= 0 && pad_h <= w.shape()[2] - 1 && pad_w >= 0 && pad_w <= w.shape()[3] - 1,
                "conv2d pad must be in [0, k-1] per axis");
    SADAG_CHECK(x.shape()[2] + 2 * pad_h >= w.shape()[2] && x.shape()[3] + 2 * pad_w >= w.shape()[3],
                "conv2d kernel larger than padded input: ", shape_str(x.shape()), " vs ", shape_str(w.shape()));
    return emit2(Op::Conv2d, x, w, {stride, pad_h, pad_w});
}

Tensor dilate2d(Tensor x, int64_t stride) {
    require_rank(x, 4, "dilate2d");
    SADAG_CHECK(stride >= 1, "dilate2d stride must be >= 1");
    return emit1(Op::Dilate2d, x, {stride});
}

Tensor subsample2d(Tensor x, int64_t stride) {
    require_rank(x, 4, "subsample2d");
    SADAG_CHECK(stride >= 1, "subsample2d stride must be >= 1");
    return emit1(Op::Subsample2d, x, {stride});
}

Tensor crop2d(Tensor x, int64_t oy, int64_t ox, int64_t h, int64_t w) {
    require_rank(x, 4, "crop2d");
    SADAG_CHECK(oy >= 0 && ox >= 0 && oy + h <= x.shape()[2] && ox + w <= x.shape()[3],
                "crop2d window out of bounds for ", shape_str(x.shape()));
    return emit1(Op::Crop2d, x, {oy, ox, h, w});
}

Tensor embed2d(Tensor x, int64_t oy, int64_t ox, int64_t H, int64_t W) {
    require_rank(x, 4, "embed2d");
    SADAG_CHECK(oy >= 0 && ox >= 0 && oy + x.shape()[2] <= H && ox + x.shape()[3] <= W,
                "embed2d target too small for ", shape_str(x.shape()));
    return emit1(Op::Embed2d, x, {oy, ox, H, W});
}

Tensor flip_kernel(Tensor w) {
    require_rank(w, 4, "flip_kernel");
    return emit1(Op::FlipKernel, w);
}

Tensor upsample2(Tensor x) {
    require_rank(x, 4, "upsample2");
    return emit1(Op::Upsample2, x);
}

Tensor block_sum2(Tensor x) {
    require_rank(x, 4, "block_sum2");
    SADAG_CHECK(x.shape()[2] % 2 == 0 && x.shape()[3] % 2 == 0, "block_sum2 needs even spatial dims, got ",
                shape_str(x.shape()));
    return emit1(Op::BlockSum2, x);
}

Tensor relu(Tensor x) { return emit1(Op::Relu, x); }
Tensor exp_(Tensor x) { return emit1(Op::Exp, x); }
Tensor log_(Tensor x) { return emit1(Op::Log, x); }
Tensor sqrt_(Tensor x) { return emit1(Op::Sqrt, x); }
Tensor tanh_(Tensor x) { return emit1(Op::Tanh, x); }
Tensor sigmoid(Tensor x) { return emit1(Op::Sigmoid, x); }
Tensor abs_(Tensor x) { return emit1(Op::Abs, x); }

Tensor clip(Tensor x, double lo, double hi) {
    SADAG_CHECK(lo < hi, "clip requires lo < hi, got ", lo, " and ", hi);
    return emit1(Op::Clip, x, {}, lo, hi);
}

Tensor sum(Tensor x) {
    uint32_t mask = 0;
    for (size_t i = 0; i < x.shape().size(); ++i) mask |= 1u << i;
    Tensor s = emit1(Op::SumAxes, x, {mask, 0});
    return reshape(s, {});
}

Tensor sum_axes(Tensor x, uint32_t axes_mask, bool keepdims) {
    return emit1(Op::SumAxes, x, {axes_mask, keepdims ? 1 : 0});
}

Tensor mean(Tensor x) {
    SADAG_CHECK(x.size() > 0, "mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor mean_axes(Tensor x, uint32_t axes_mask, bool keepdims) {
    int64_t cnt = 1;
    for (size_t i = 0; i < x.shape().size(); ++i)
        if (axes_mask & (1u << i)) cnt *= x.shape()[i];
    SADAG_CHECK(cnt > 0, "mean over empty axes");
    return scale(sum_axes(x, axes_mask, keepdims), 1.0 / static_cast<double>(cnt));
}

Tensor variance(Tensor x) {
    Tensor d = sub(x, mean(x));
    return mean(mul(d, d));
}

Tensor variance_axes(Tensor x, uint32_t axes_mask, bool keepdims) {
    Tensor m = mean_axes(x, axes_mask, true);
    Tensor d = sub(x, m);
    Tensor v = mean_axes(mul(d, d), axes_mask, true);
    if (!keepdims) {
        Shape s;
        for (size_t i = 0; i < x.shape().size(); ++i)
            if (!(axes_mask & (1u << i))) s.push_back(x.shape()[i]);
        v = reshape(v, s);
    }
    return v;
}

Tensor reshape(Tensor x, Shape s) {
    SADAG_CHECK(numel(s) == x.size(), "reshape from ", shape_str(x.shape()), " to ", shape_str(s),
                " changes element count");
    SADAG_CHECK(s.size() <= 5, "reshape target rank too large");
    std::array<int64_t, 6> ia{};
    ia[0] = static_cast<int64_t>(s.size());
    for (size_t i = 0; i < s.size(); ++i) ia[i + 1] = s[i];
    return emit1(Op::Reshape, x, ia);
}

Tensor concat0(const std::vector<Tensor>& parts) {
    SADAG_CHECK(!parts.empty(), "concat0 of zero tensors");
    Graph* g = parts[0].g;
    const Shape& ref = parts[0].shape();
    for (const Tensor& p : parts) {
        SADAG_CHECK(p.g == g, "concat0 operands on different graphs");
        SADAG_CHECK(p.shape().size() == ref.size() && !p.shape().empty(), "concat0 rank mismatch");
        for (size_t i = 1; i < ref.size(); ++i)
            SADAG_CHECK(p.shape()[i] == ref[i], "concat0 trailing-dim mismatch: ", shape_str(p.shape()), " vs ",
                        shape_str(ref));
    }
    Node n;
    n.op = Op::Concat0;
    for (const Tensor& p : parts) n.more.push_back(p.id);
    return g->emit(std::move(n));
}

Tensor slice0(Tensor x, int64_t start, int64_t len) {
    SADAG_CHECK(!x.shape().empty(), "slice0 of scalar");
    SADAG_CHECK(start >= 0 && len >= 0 && start + len <= x.shape()[0], "slice0 [", start, ",", start + len,
                ") out of bounds for ", shape_str(x.shape()));
    return emit1(Op::Slice0, x, {start, len});
}

Tensor embed0(Tensor x, int64_t start, int64_t n) {
    SADAG_CHECK(!x.shape().empty(), "embed0 of scalar");
    SADAG_CHECK(start >= 0 && start + x.shape()[0] <= n, "embed0 target too small");
    return emit1(Op::Embed0, x, {start, n});
}

Tensor mask_pos(Tensor x) { return emit1(Op::MaskPos, x); }
Tensor mask_sign(Tensor x) { return emit1(Op::MaskSign, x); }
Tensor mask_inside(Tensor x, double lo, double hi) { return emit1(Op::MaskInside, x, {}, lo, hi); }

Tensor row_max(Tensor x) {
    require_rank(x, 2, "row_max");
    return emit1(Op::RowMax, x);
}

Tensor floor_ste(Tensor x) { return emit1(Op::Floor, x); }
Tensor round_ste(Tensor x) { return emit1(Op::Round, x); }
Tensor detach(Tensor x) { return emit1(Op::Detach, x); }

Tensor dot(Tensor u, Tensor v) {
    SADAG_CHECK(u.size() == v.size(), "dot length mismatch: ", shape_str(u.shape()), " vs ", shape_str(v.shape()));
    Tensor uf = u.shape().size() == 1 ? u : reshape(u, {u.size()});
    Tensor vf = v.shape().size() == 1 ? v : reshape(v, {v.size()});
    return sum(mul(uf, vf));
}

Tensor l2norm(Tensor x) { return sqrt_(dot(x, x)); }

Tensor sum_to(Tensor t, const Shape& target) {
    if (same_shape(t.shape(), target)) return t;
    const size_t rank = t.shape().size();
    SADAG_CHECK(target.size() <= rank, "sum_to target rank exceeds source");
    Shape padded(rank, 1);
    for (size_t i = 0; i < target.size(); ++i) padded[rank - target.size() + i] = target[i];
    uint32_t mask = 0;
    for (size_t i = 0; i < rank; ++i) {
        if (padded[i] == t.shape()[i]) continue;
        SADAG_CHECK(padded[i] == 1, "sum_to: ", shape_str(t.shape()), " not broadcast-reducible to ",
                    shape_str(target));
        mask |= 1u << i;
    }
    Tensor r = mask ? sum_axes(t, mask, true) : t;
    return same_shape(r.shape(), target) ? r : reshape(r, target);
}

Tensor batchnorm_apply(Tensor x, Tensor gamma, Tensor beta, Tensor mu, Tensor sigma) {
    require_rank(x, 4, "batchnorm_apply");
    const int64_t c = x.shape()[1];
    for (const Tensor* p : {&gamma, &beta, &mu, &sigma})
        SADAG_CHECK(p->size() == c, "batchnorm_apply parameter size ", p->size(), " does not match channels ", c);
    for (double v : sigma.val().data) SADAG_CHECK(v > 0.0, "batchnorm_apply requires positive sigma, got ", v);
    const Shape cs{1, c, 1, 1};
    Tensor xm = sub(x, reshape(mu, cs));
    Tensor xn = div(xm, reshape(sigma, cs));
    return add(mul(xn, reshape(gamma, cs)), reshape(beta, cs));
}

Tensor softmax_crossentropy(Tensor logits, Tensor onehot) {
    require_rank(logits, 2, "softmax_crossentropy");
    SADAG_CHECK(same_shape(logits.shape(), onehot.shape()), "softmax_crossentropy target shape ",
                shape_str(onehot.shape()), " does not match logits ", shape_str(logits.shape()));
    const int64_t n = logits.shape()[0];
    // Row max is treated as a constant shift; it cancels in the softmax.
    Tensor z = sub(logits, row_max(logits));
    Tensor lse = log_(sum_axes(exp_(z), 0b10, true));
    Tensor picked = sum_axes(mul(z, onehot), 0b10, true);
    return scale(sum(sub(lse, picked)), 1.0 / static_cast<double>(n));
}

}  // namespace sadag::ad
