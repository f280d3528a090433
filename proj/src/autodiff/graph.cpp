#include "autodiff/graph.hpp"

#include <cmath>
#include <cstring>

#include "autodiff/ops.hpp"
#include "kernels/kernels.hpp"

namespace sadag::ad {

namespace {

// Shapes are padded on the left with 1s to a common rank for broadcasting.
Shape pad_left(const Shape& s, size_t rank) {
    Shape r(rank, 1);
    for (size_t i = 0; i < s.size(); ++i) r[rank - s.size() + i] = s[i];
    return r;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const size_t rank = std::max(a.size(), b.size());
    SADAG_CHECK(rank <= 4, "broadcast limited to rank 4, got ", shape_str(a), " and ", shape_str(b));
    const Shape pa = pad_left(a, rank), pb = pad_left(b, rank);
    Shape out(rank);
    for (size_t i = 0; i < rank; ++i) {
        SADAG_CHECK(pa[i] == pb[i] || pa[i] == 1 || pb[i] == 1, "shape mismatch: ", shape_str(a), " vs ",
                    shape_str(b));
        out[i] = std::max(pa[i], pb[i]);
    }
    return out;
}

std::array<int64_t, 4> strides_for(const Shape& padded, const Shape& out) {
    std::array<int64_t, 4> st{0, 0, 0, 0};
    int64_t acc = 1;
    for (int i = static_cast<int>(padded.size()) - 1; i >= 0; --i) {
        st[static_cast<size_t>(i)] = (padded[static_cast<size_t>(i)] == 1 && out[static_cast<size_t>(i)] != 1) ? 0 : acc;
        acc *= padded[static_cast<size_t>(i)];
    }
    return st;
}

enum class Bin { Add, Sub, Mul, Div };

double apply_bin(Bin k, double a, double b) {
    switch (k) {
        case Bin::Add: return a + b;
        case Bin::Sub: return a - b;
        case Bin::Mul: return a * b;
        case Bin::Div: return a / b;
    }
    return 0.0;
}

void kernel_bin(Bin k, const double* a, const double* b, double* out, size_t n) {
    const auto& t = kernels::table();
    switch (k) {
        case Bin::Add: t.add(a, b, out, n); break;
        case Bin::Sub: t.sub(a, b, out, n); break;
        case Bin::Mul: t.mul(a, b, out, n); break;
        case Bin::Div: t.div(a, b, out, n); break;
    }
}

void kernel_bin_scalar(Bin k, const double* a, double s, double* out, size_t n) {
    const auto& t = kernels::table();
    switch (k) {
        case Bin::Add: t.add_s(a, s, out, n); break;
        case Bin::Sub: t.sub_s(a, s, out, n); break;
        case Bin::Mul: t.mul_s(a, s, out, n); break;
        case Bin::Div: t.div_s(a, s, out, n); break;
    }
}

Array binary_broadcast(Bin k, const Array& A, const Array& B) {
    if (k == Bin::Div) {
        for (double v : B.data) SADAG_CHECK(v != 0.0, "division by zero");
    }
    if (same_shape(A.shape, B.shape)) {
        Array out(A.shape);
        kernel_bin(k, A.data.data(), B.data.data(), out.data.data(), A.data.size());
        return out;
    }
    const Shape os = broadcast_shape(A.shape, B.shape);
    if (B.size() == 1) {
        Array out(os);
        kernel_bin_scalar(k, A.data.data(), B[0], out.data.data(), A.data.size());
        return out;
    }
    if (A.size() == 1) {
        Array out(os);
        if (k == Bin::Add || k == Bin::Mul) {
            kernel_bin_scalar(k, B.data.data(), A[0], out.data.data(), B.data.size());
        } else if (k == Bin::Sub) {
            kernels::table().rsub_s(B.data.data(), A[0], out.data.data(), B.data.size());
        } else {
            for (size_t i = 0; i < B.data.size(); ++i) out.data[i] = A[0] / B.data[i];
        }
        return out;
    }

    const size_t rank = os.size();
    const Shape pa = pad_left(A.shape, rank), pb = pad_left(B.shape, rank);

    // B matches a trailing suffix of the output: apply the full elementwise
    // kernel per leading block. Covers row-vector bias adds.
    if (same_shape(pa, os)) {
        bool suffix = true;
        size_t split = 0;
        for (size_t i = 0; i < rank; ++i) {
            if (pb[i] != 1) {
                split = i;
                break;
            }
            split = i + 1;
        }
        for (size_t i = split; i < rank; ++i) suffix = suffix && pb[i] == os[i];
        if (suffix && static_cast<int64_t>(B.data.size()) == numel(Shape(os.begin() + static_cast<long>(split), os.end()))) {
            Array out(os);
            const size_t block = B.data.size();
            const size_t blocks = out.data.size() / block;
            for (size_t i = 0; i < blocks; ++i)
                kernel_bin(k, A.data.data() + i * block, B.data.data(), out.data.data() + i * block, block);
            return out;
        }
        // B constant over a trailing block (all trailing dims 1): per-block
        // scalar kernel. Covers (1,C,1,1) batch-norm parameters.
        size_t last_nontrivial = 0;
        for (size_t i = 0; i < rank; ++i)
            if (pb[i] != 1) last_nontrivial = i;
        bool leading_ok = true;
        for (size_t i = 0; i <= last_nontrivial; ++i) leading_ok = leading_ok && (pb[i] == 1 || pb[i] == os[i]);
        if (leading_ok && B.size() > 1) {
            int64_t block = 1;
            for (size_t i = last_nontrivial + 1; i < rank; ++i) block *= os[i];
            if (block > 1) {
                Array out(os);
                const auto bst = strides_for(pb, os);
                int64_t lead = 1;
                for (size_t i = 0; i <= last_nontrivial; ++i) lead *= os[i];
                std::array<int64_t, 4> ldims{1, 1, 1, 1};
                for (size_t i = 0; i <= last_nontrivial; ++i) ldims[i] = os[i];
                for (int64_t li = 0; li < lead; ++li) {
                    int64_t rem = li, bidx = 0;
                    for (int i = static_cast<int>(last_nontrivial); i >= 0; --i) {
                        const int64_t c = rem % ldims[static_cast<size_t>(i)];
                        rem /= ldims[static_cast<size_t>(i)];
                        bidx += c * bst[static_cast<size_t>(i)];
                    }
                    kernel_bin_scalar(k, A.data.data() + li * block, B[bidx], out.data.data() + li * block,
                                      static_cast<size_t>(block));
                }
                return out;
            }
        }
    }

    // Generic strided fallback.
    Array out(os);
    const auto ast = strides_for(pa, os);
    const auto bst = strides_for(pb, os);
    std::array<int64_t, 4> dims{1, 1, 1, 1};
    for (size_t i = 0; i < rank; ++i) dims[i] = os[i];
    int64_t idx = 0;
    for (int64_t i0 = 0; i0 < dims[0]; ++i0)
        for (int64_t i1 = 0; i1 < dims[1]; ++i1)
            for (int64_t i2 = 0; i2 < dims[2]; ++i2)
                for (int64_t i3 = 0; i3 < dims[3]; ++i3) {
                    const int64_t ai = i0 * ast[0] + i1 * ast[1] + i2 * ast[2] + i3 * ast[3];
                    const int64_t bi = i0 * bst[0] + i1 * bst[1] + i2 * bst[2] + i3 * bst[3];
                    out[idx++] = apply_bin(k, A[ai], B[bi]);
                }
    return out;
}

Array reduce_axes(const Array& A, uint32_t mask, bool keepdims) {
    const size_t rank = A.shape.size();
    SADAG_CHECK(rank <= 4, "reduction limited to rank 4");
    Shape kshape = A.shape;
    uint32_t full = 0;
    for (size_t i = 0; i < rank; ++i) full |= 1u << i;
    SADAG_CHECK((mask & ~full) == 0, "reduction axis out of range for rank ", rank);
    for (size_t i = 0; i < rank; ++i)
        if (mask & (1u << i)) kshape[i] = 1;

    Array out(kshape, 0.0);
    const auto& kt = kernels::table();
    if (mask == full || rank == 0) {
        out.data[0] = kt.sum(A.data.data(), A.data.size());
    } else {
        // Trailing-suffix reductions run one kernel sum per prefix.
        int suffix_start = static_cast<int>(rank);
        for (int i = static_cast<int>(rank) - 1; i >= 0 && (mask & (1u << i)); --i) suffix_start = i;
        bool only_suffix = true;
        for (int i = 0; i < suffix_start; ++i) only_suffix = only_suffix && !(mask & (1u << i));
        if (only_suffix && suffix_start < static_cast<int>(rank)) {
            int64_t block = 1;
            for (size_t i = static_cast<size_t>(suffix_start); i < rank; ++i) block *= A.shape[i];
            const int64_t prefixes = A.size() / block;
            for (int64_t i = 0; i < prefixes; ++i)
                out[i] = kt.sum(A.data.data() + i * block, static_cast<size_t>(block));
        } else if (rank == 4 && mask == 0b1101u) {
            // (N,C,H,W) -> (1,C,1,1): per-channel sums, blockwise.
            const int64_t n = A.shape[0], c = A.shape[1], hw = A.shape[2] * A.shape[3];
            for (int64_t in = 0; in < n; ++in)
                for (int64_t ic = 0; ic < c; ++ic)
                    out[ic] += kt.sum(A.data.data() + (in * c + ic) * hw, static_cast<size_t>(hw));
        } else {
            const Shape padded = pad_left(A.shape, rank);
            const auto ost = strides_for(pad_left(kshape, rank), A.shape);
            std::array<int64_t, 4> dims{1, 1, 1, 1};
            for (size_t i = 0; i < rank; ++i) dims[i] = padded[i];
            int64_t idx = 0;
            for (int64_t i0 = 0; i0 < dims[0]; ++i0)
                for (int64_t i1 = 0; i1 < dims[1]; ++i1)
                    for (int64_t i2 = 0; i2 < dims[2]; ++i2)
                        for (int64_t i3 = 0; i3 < dims[3]; ++i3) {
                            const int64_t oi = i0 * ost[0] + i1 * ost[1] + i2 * ost[2] + i3 * ost[3];
                            out[oi] += A[idx++];
                        }
        }
    }
    if (!keepdims) {
        Shape squeezed;
        for (size_t i = 0; i < rank; ++i)
            if (!(mask & (1u << i))) squeezed.push_back(A.shape[i]);
        out.shape = squeezed;
    }
    return out;
}

Array unary_map(const Array& x, double (*f)(double)) {
    Array out(x.shape);
    for (int64_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return out;
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Affine: return "affine";
        case Op::Matmul: return "matmul";
        case Op::Transpose2d: return "transpose2d";
        case Op::Swap01: return "swap01";
        case Op::Conv2d: return "conv2d";
        case Op::Dilate2d: return "dilate2d";
        case Op::Subsample2d: return "subsample2d";
        case Op::Crop2d: return "crop2d";
        case Op::Embed2d: return "embed2d";
        case Op::FlipKernel: return "flip_kernel";
        case Op::Upsample2: return "upsample2";
        case Op::BlockSum2: return "block_sum2";
        case Op::Relu: return "relu";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sqrt: return "sqrt";
        case Op::Tanh: return "tanh";
        case Op::Sigmoid: return "sigmoid";
        case Op::Abs: return "abs";
        case Op::Clip: return "clip";
        case Op::SumAxes: return "sum_axes";
        case Op::Reshape: return "reshape";
        case Op::Concat0: return "concat0";
        case Op::Slice0: return "slice0";
        case Op::Embed0: return "embed0";
        case Op::MaskPos: return "mask_pos";
        case Op::MaskSign: return "mask_sign";
        case Op::MaskInside: return "mask_inside";
        case Op::RowMax: return "row_max";
        case Op::Floor: return "floor";
        case Op::Round: return "round";
        case Op::Detach: return "detach";
    }
    return "?";
}

bool op_blocks_grad(Op op) {
    switch (op) {
        case Op::MaskPos:
        case Op::MaskSign:
        case Op::MaskInside:
        case Op::RowMax:
        case Op::Detach:
            return true;
        default:
            return false;
    }
}

int Node::parent_count() const {
    if (op == Op::Concat0) return static_cast<int>(more.size());
    if (b >= 0) return 2;
    if (a >= 0) return 1;
    return 0;
}

int32_t Node::parent(int i) const {
    if (op == Op::Concat0) return more[static_cast<size_t>(i)];
    return i == 0 ? a : b;
}

const Shape& Tensor::shape() const { return g->node(id).value.shape; }
int64_t Tensor::size() const { return g->node(id).value.size(); }
const Array& Tensor::val() const { return g->node(id).value; }

Tensor Graph::leaf(Array v, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = requires_grad;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return Tensor{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor Graph::emit(Node&& n) {
    bool rg = false;
    for (int i = 0; i < n.parent_count(); ++i) rg = rg || nodes_[static_cast<size_t>(n.parent(i))].requires_grad;
    n.requires_grad = rg && !op_blocks_grad(n.op);
    n.value = eval(n);
    nodes_.push_back(std::move(n));
    return Tensor{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Array Graph::eval(const Node& n) const {
    const auto pv = [&](int i) -> const Array& { return nodes_[static_cast<size_t>(n.parent(i))].value; };
    const auto& kt = kernels::table();
    switch (n.op) {
        case Op::Leaf:
            return n.value;
        case Op::Add: return binary_broadcast(Bin::Add, pv(0), pv(1));
        case Op::Sub: return binary_broadcast(Bin::Sub, pv(0), pv(1));
        case Op::Mul: return binary_broadcast(Bin::Mul, pv(0), pv(1));
        case Op::Div: return binary_broadcast(Bin::Div, pv(0), pv(1));
        case Op::Affine: {
            Array out(pv(0).shape);
            kt.affine(pv(0).data.data(), n.d0, n.d1, out.data.data(), out.data.size());
            return out;
        }
        case Op::Matmul: {
            const Array& A = pv(0);
            const Array& B = pv(1);
            const int64_t m = A.shape[0], k = A.shape[1], c = B.shape[1];
            Array out({m, c});
            kt.matmul(A.data.data(), B.data.data(), out.data.data(), static_cast<size_t>(m), static_cast<size_t>(k),
                      static_cast<size_t>(c), false);
            return out;
        }
        case Op::Transpose2d: {
            const Array& A = pv(0);
            const int64_t r = A.shape[0], c = A.shape[1];
            Array out({c, r});
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
            return out;
        }
        case Op::Swap01: {
            const Array& A = pv(0);
            Shape os = A.shape;
            std::swap(os[0], os[1]);
            Array out(os);
            int64_t inner = 1;
            for (size_t i = 2; i < A.shape.size(); ++i) inner *= A.shape[i];
            const int64_t d0 = A.shape[0], d1 = A.shape[1];
            for (int64_t i = 0; i < d0; ++i)
                for (int64_t j = 0; j < d1; ++j)
                    std::memcpy(out.data.data() + (j * d0 + i) * inner, A.data.data() + (i * d1 + j) * inner,
                                static_cast<size_t>(inner) * sizeof(double));
            return out;
        }
        case Op::Conv2d: {
            const Array& X = pv(0);
            const Array& W = pv(1);
            kernels::ConvDims d{X.shape[0], X.shape[1], X.shape[2], X.shape[3],
                                W.shape[0], W.shape[2], W.shape[3], n.iattr[0], n.iattr[1], n.iattr[2]};
            Array out({d.n, d.co, d.oh(), d.ow()});
            kt.conv2d(X.data.data(), W.data.data(), out.data.data(), d);
            return out;
        }
        case Op::Dilate2d: {
            const Array& A = pv(0);
            const int64_t s = n.iattr[0];
            const int64_t h = A.shape[2], w = A.shape[3];
            const int64_t oh = (h - 1) * s + 1, ow = (w - 1) * s + 1;
            Array out({A.shape[0], A.shape[1], oh, ow}, 0.0);
            for (int64_t img = 0; img < A.shape[0] * A.shape[1]; ++img)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x)
                        out[(img * oh + y * s) * ow + x * s] = A[(img * h + y) * w + x];
            return out;
        }
        case Op::Subsample2d: {
            const Array& A = pv(0);
            const int64_t s = n.iattr[0];
            const int64_t h = A.shape[2], w = A.shape[3];
            const int64_t oh = (h - 1) / s + 1, ow = (w - 1) / s + 1;
            Array out({A.shape[0], A.shape[1], oh, ow});
            for (int64_t img = 0; img < A.shape[0] * A.shape[1]; ++img)
                for (int64_t y = 0; y < oh; ++y)
                    for (int64_t x = 0; x < ow; ++x)
                        out[(img * oh + y) * ow + x] = A[(img * h + y * s) * w + x * s];
            return out;
        }
        case Op::Crop2d: {
            const Array& A = pv(0);
            const int64_t oy = n.iattr[0], ox = n.iattr[1], h = n.iattr[2], w = n.iattr[3];
            const int64_t ih = A.shape[2], iw = A.shape[3];
            Array out({A.shape[0], A.shape[1], h, w});
            for (int64_t img = 0; img < A.shape[0] * A.shape[1]; ++img)
                for (int64_t y = 0; y < h; ++y)
                    std::memcpy(out.data.data() + (img * h + y) * w,
                                A.data.data() + (img * ih + oy + y) * iw + ox, static_cast<size_t>(w) * sizeof(double));
            return out;
        }
        case Op::Embed2d: {
            const Array& A = pv(0);
            const int64_t oy = n.iattr[0], ox = n.iattr[1], H = n.iattr[2], W = n.iattr[3];
            const int64_t ih = A.shape[2], iw = A.shape[3];
            Array out({A.shape[0], A.shape[1], H, W}, 0.0);
            for (int64_t img = 0; img < A.shape[0] * A.shape[1]; ++img)
                for (int64_t y = 0; y < ih; ++y)
                    std::memcpy(out.data.data() + (img * H + oy + y) * W + ox,
                                A.data.data() + (img * ih + y) * iw, static_cast<size_t>(iw) * sizeof(double));
            return out;
        }
        case Op::FlipKernel: {
            const Array& A = pv(0);
            const int64_t co = A.shape[0], ci = A.shape[1], kh = A.shape[2], kw = A.shape[3];
            Array out({ci, co, kh, kw});
            for (int64_t o = 0; o < co; ++o)
                for (int64_t i = 0; i < ci; ++i)
                    for (int64_t y = 0; y < kh; ++y)
                        for (int64_t x = 0; x < kw; ++x)
                            out[((i * co + o) * kh + (kh - 1 - y)) * kw + (kw - 1 - x)] =
                                A[((o * ci + i) * kh + y) * kw + x];
            return out;
        }
        case Op::Upsample2: {
            const Array& A = pv(0);
            const int64_t h = A.shape[2], w = A.shape[3];
            Array out({A.shape[0], A.shape[1], 2 * h, 2 * w});
            for (int64_t img = 0; img < A.shape[0] * A.shape[1]; ++img)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x) {
                        const double v = A[(img * h + y) * w + x];
                        double* o = out.data.data() + (img * 2 * h + 2 * y) * 2 * w + 2 * x;
                        o[0] = v;
                        o[1] = v;
                        o[2 * w] = v;
                        o[2 * w + 1] = v;
                    }
            return out;
        }
        case Op::BlockSum2: {
            const Array& A = pv(0);
            const int64_t h = A.shape[2] / 2, w = A.shape[3] / 2;
            Array out({A.shape[0], A.shape[1], h, w});
            for (int64_t img = 0; img < A.shape[0] * A.shape[1]; ++img)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x) {
                        const double* i = A.data.data() + (img * 2 * h + 2 * y) * 2 * w + 2 * x;
                        out[(img * h + y) * w + x] = (i[0] + i[1]) + (i[2 * w] + i[2 * w + 1]);
                    }
            return out;
        }
        case Op::Relu: {
            Array out(pv(0).shape);
            kt.relu(pv(0).data.data(), out.data.data(), out.data.size());
            return out;
        }
        case Op::Exp: return unary_map(pv(0), [](double v) { return std::exp(v); });
        case Op::Log: {
            for (double v : pv(0).data) SADAG_CHECK(v > 0.0, "log of non-positive value ", v);
            return unary_map(pv(0), [](double v) { return std::log(v); });
        }
        case Op::Sqrt: {
            for (double v : pv(0).data) SADAG_CHECK(v >= 0.0, "sqrt of negative value ", v);
            return unary_map(pv(0), [](double v) { return std::sqrt(v); });
        }
        case Op::Tanh: return unary_map(pv(0), [](double v) { return std::tanh(v); });
        case Op::Sigmoid: return unary_map(pv(0), [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
        case Op::Abs: return unary_map(pv(0), [](double v) { return std::fabs(v); });
        case Op::Clip: {
            Array out(pv(0).shape);
            for (int64_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(pv(0)[i], n.d0), n.d1);
            return out;
        }
        case Op::SumAxes:
            return reduce_axes(pv(0), static_cast<uint32_t>(n.iattr[0]), n.iattr[1] != 0);
        case Op::Reshape: {
            Array out = pv(0);
            out.shape.assign(n.iattr.begin() + 1, n.iattr.begin() + 1 + n.iattr[0]);
            return out;
        }
        case Op::Concat0: {
            Shape os = pv(0).shape;
            int64_t rows = 0;
            for (int i = 0; i < n.parent_count(); ++i) rows += pv(i).shape[0];
            os[0] = rows;
            Array out(os);
            double* dst = out.data.data();
            for (int i = 0; i < n.parent_count(); ++i) {
                std::memcpy(dst, pv(i).data.data(), pv(i).data.size() * sizeof(double));
                dst += pv(i).data.size();
            }
            return out;
        }
        case Op::Slice0: {
            const Array& A = pv(0);
            const int64_t start = n.iattr[0], len = n.iattr[1];
            const int64_t inner = A.shape[0] ? A.size() / A.shape[0] : 0;
            Shape os = A.shape;
            os[0] = len;
            Array out(os);
            std::memcpy(out.data.data(), A.data.data() + start * inner,
                        static_cast<size_t>(len * inner) * sizeof(double));
            return out;
        }
        case Op::Embed0: {
            const Array& A = pv(0);
            const int64_t start = n.iattr[0], total = n.iattr[1];
            const int64_t inner = A.shape[0] ? A.size() / A.shape[0] : 0;
            Shape os = A.shape;
            os[0] = total;
            Array out(os, 0.0);
            std::memcpy(out.data.data() + start * inner, A.data.data(), A.data.size() * sizeof(double));
            return out;
        }
        case Op::MaskPos: {
            Array out(pv(0).shape);
            kt.mask_pos(pv(0).data.data(), out.data.data(), out.data.size());
            return out;
        }
        case Op::MaskSign:
            return unary_map(pv(0), [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
        case Op::MaskInside: {
            Array out(pv(0).shape);
            for (int64_t i = 0; i < out.size(); ++i) out[i] = (pv(0)[i] > n.d0 && pv(0)[i] < n.d1) ? 1.0 : 0.0;
            return out;
        }
        case Op::RowMax: {
            const Array& A = pv(0);
            const int64_t r = A.shape[0], c = A.shape[1];
            Array out({r, 1});
            for (int64_t i = 0; i < r; ++i) {
                double m = A[i * c];
                for (int64_t j = 1; j < c; ++j) m = std::max(m, A[i * c + j]);
                out[i] = m;
            }
            return out;
        }
        case Op::Floor: return unary_map(pv(0), [](double v) { return std::floor(v); });
        case Op::Round: return unary_map(pv(0), [](double v) { return std::floor(v + 0.5); });
        case Op::Detach: return pv(0);
    }
    SADAG_THROW("unreachable op");
}

bool Graph::replay_bitexact() const {
    for (const Node& n : nodes_) {
        if (n.op == Op::Leaf) continue;
        const Array fresh = eval(n);
        if (!bit_equal(fresh, n.value)) return false;
    }
    return true;
}

namespace {

// contributions of `g` to the parents of `n` (self = the node's own output).
// Entries for parents whose `needed` flag is false may be left invalid; the
// caller skips them, and the builder avoids emitting their subgraphs.
void backward_node(const Node& n, Tensor self, Tensor g, const std::vector<Tensor>& parents,
                   const std::vector<char>& needed, std::vector<Tensor>& contrib) {
    const Tensor none{};
    switch (n.op) {
        case Op::Add:
            contrib = {needed[0] ? sum_to(g, parents[0].shape()) : none,
                       needed[1] ? sum_to(g, parents[1].shape()) : none};
            return;
        case Op::Sub:
            contrib = {needed[0] ? sum_to(g, parents[0].shape()) : none,
                       needed[1] ? sum_to(neg(g), parents[1].shape()) : none};
            return;
        case Op::Mul:
            contrib = {needed[0] ? sum_to(mul(g, parents[1]), parents[0].shape()) : none,
                       needed[1] ? sum_to(mul(g, parents[0]), parents[1].shape()) : none};
            return;
        case Op::Div:
            contrib = {needed[0] ? sum_to(div(g, parents[1]), parents[0].shape()) : none,
                       needed[1] ? sum_to(neg(div(mul(g, self), parents[1])), parents[1].shape()) : none};
            return;
        case Op::Affine:
            contrib = {scale(g, n.d0)};
            return;
        case Op::Matmul:
            contrib = {needed[0] ? matmul(g, transpose2d(parents[1])) : none,
                       needed[1] ? matmul(transpose2d(parents[0]), g) : none};
            return;
        case Op::Transpose2d:
            contrib = {transpose2d(g)};
            return;
        case Op::Swap01:
            contrib = {swap01(g)};
            return;
        case Op::Conv2d: {
            const Tensor x = parents[0], w = parents[1];
            const int64_t s = n.iattr[0], ph = n.iattr[1], pw = n.iattr[2];
            const int64_t kh = w.shape()[2], kw = w.shape()[3];
            const int64_t H = x.shape()[2], W = x.shape()[3];
            // Remainders of the forward stride sweep: those trailing input
            // positions are still read by the forward pass, so the dilated
            // adjoint is zero-extended on the bottom/right before the
            // transposed convolution.
            const int64_t rh = (H + 2 * ph - kh) % s, rw = (W + 2 * pw - kw) % s;
            Tensor gd = s > 1 ? dilate2d(g, s) : g;
            Tensor gx = none, gww = none;
            if (needed[0]) {
                Tensor gdx = (rh > 0 || rw > 0)
                                 ? embed2d(gd, 0, 0, gd.shape()[2] + rh, gd.shape()[3] + rw)
                                 : gd;
                gx = conv2d(gdx, flip_kernel(w), 1, kh - 1 - ph, kw - 1 - pw);
            }
            if (needed[1]) {
                Tensor gw = conv2d(swap01(x), swap01(gd), 1, ph, pw);
                if (gw.shape()[2] != kh || gw.shape()[3] != kw) gw = crop2d(gw, 0, 0, kh, kw);
                gww = swap01(gw);
            }
            contrib = {gx, gww};
            return;
        }
        case Op::Dilate2d:
            contrib = {subsample2d(g, n.iattr[0])};
            return;
        case Op::Subsample2d: {
            const int64_t H = parents[0].shape()[2], W = parents[0].shape()[3];
            Tensor gi = dilate2d(g, n.iattr[0]);
            if (gi.shape()[2] != H || gi.shape()[3] != W) gi = embed2d(gi, 0, 0, H, W);
            contrib = {gi};
            return;
        }
        case Op::Crop2d:
            contrib = {embed2d(g, n.iattr[0], n.iattr[1], parents[0].shape()[2], parents[0].shape()[3])};
            return;
        case Op::Embed2d:
            contrib = {crop2d(g, n.iattr[0], n.iattr[1], parents[0].shape()[2], parents[0].shape()[3])};
            return;
        case Op::FlipKernel:
            contrib = {flip_kernel(g)};
            return;
        case Op::Upsample2:
            contrib = {block_sum2(g)};
            return;
        case Op::BlockSum2:
            contrib = {upsample2(g)};
            return;
        case Op::Relu:
            contrib = {mul(g, mask_pos(parents[0]))};
            return;
        case Op::Exp:
            contrib = {mul(g, self)};
            return;
        case Op::Log:
            contrib = {div(g, parents[0])};
            return;
        case Op::Sqrt:
            contrib = {div(g, scale(self, 2.0))};
            return;
        case Op::Tanh:
            contrib = {mul(g, affine(mul(self, self), -1.0, 1.0))};
            return;
        case Op::Sigmoid:
            contrib = {mul(g, mul(self, affine(self, -1.0, 1.0)))};
            return;
        case Op::Abs:
            contrib = {mul(g, mask_sign(parents[0]))};
            return;
        case Op::Clip:
            contrib = {mul(g, mask_inside(parents[0], n.d0, n.d1))};
            return;
        case Op::SumAxes: {
            Tensor gk = g;
            if (!n.iattr[1]) {
                Shape kshape = parents[0].shape();
                for (size_t i = 0; i < kshape.size(); ++i)
                    if (n.iattr[0] & (1 << i)) kshape[i] = 1;
                gk = reshape(g, kshape);
            }
            contrib = {mul(gk, g.g->full(parents[0].shape(), 1.0))};
            return;
        }
        case Op::Reshape:
            contrib = {reshape(g, parents[0].shape())};
            return;
        case Op::Concat0: {
            contrib.clear();
            int64_t off = 0;
            for (const Tensor& p : parents) {
                contrib.push_back(slice0(g, off, p.shape()[0]));
                off += p.shape()[0];
            }
            return;
        }
        case Op::Slice0:
            contrib = {embed0(g, n.iattr[0], parents[0].shape()[0])};
            return;
        case Op::Embed0:
            contrib = {slice0(g, n.iattr[0], parents[0].shape()[0])};
            return;
        case Op::Floor:
        case Op::Round:
            contrib = {g};
            return;
        default:
            SADAG_THROW("backward of non-differentiable op ", op_name(n.op));
    }
}

}  // namespace

std::vector<Tensor> Graph::grad(const Tensor& out, const std::vector<Tensor>& wrt, bool create_graph) {
    SADAG_CHECK(out.g == this, "grad: output tensor is not on this graph");
    SADAG_CHECK(out.size() == 1, "grad: output must be scalar, got shape ", shape_str(out.shape()));
    for (const Tensor& w : wrt) {
        SADAG_CHECK(w.g == this, "grad: wrt tensor is not on this graph");
        SADAG_CHECK(node(w.id).requires_grad, "grad: wrt tensor (node ", w.id, ") is not differentiable");
    }

    // Reachability from the output, parents-only walk.
    std::vector<uint8_t> reach(static_cast<size_t>(out.id) + 1, 0);
    std::vector<int32_t> stack{out.id};
    reach[static_cast<size_t>(out.id)] = 1;
    while (!stack.empty()) {
        const Node& n = nodes_[static_cast<size_t>(stack.back())];
        stack.pop_back();
        for (int i = 0; i < n.parent_count(); ++i) {
            const int32_t p = n.parent(i);
            if (!reach[static_cast<size_t>(p)]) {
                reach[static_cast<size_t>(p)] = 1;
                stack.push_back(p);
            }
        }
    }

    std::vector<int32_t> adj(static_cast<size_t>(out.id) + 1, -1);
    Tensor seed = full(out.shape(), 1.0);
    adj[static_cast<size_t>(out.id)] = seed.id;

    for (int32_t id = out.id; id >= 0; --id) {
        if (!reach[static_cast<size_t>(id)]) continue;
        const int32_t gid = adj[static_cast<size_t>(id)];
        if (gid < 0) continue;
        // nodes_ may reallocate while emitting backward ops; copy the node
        // metadata (not its value) before building contributions.
        Node n;
        {
            const Node& src = nodes_[static_cast<size_t>(id)];
            n.op = src.op;
            n.requires_grad = src.requires_grad;
            n.a = src.a;
            n.b = src.b;
            n.more = src.more;
            n.iattr = src.iattr;
            n.d0 = src.d0;
            n.d1 = src.d1;
        }
        if (n.op == Op::Leaf || !n.requires_grad) continue;

        std::vector<Tensor> parents;
        std::vector<char> needed;
        for (int i = 0; i < n.parent_count(); ++i) {
            parents.push_back(Tensor{this, n.parent(i)});
            needed.push_back(nodes_[static_cast<size_t>(n.parent(i))].requires_grad ? 1 : 0);
        }
        std::vector<Tensor> contrib;
        backward_node(n, Tensor{this, id}, Tensor{this, gid}, parents, needed, contrib);
        SADAG_CHECK(contrib.size() == static_cast<size_t>(n.parent_count()), "backward arity mismatch for ",
                    op_name(n.op));
        for (int i = 0; i < n.parent_count(); ++i) {
            const int32_t p = n.parent(i);
            if (!needed[static_cast<size_t>(i)] || !contrib[static_cast<size_t>(i)].valid()) continue;
            SADAG_CHECK(same_shape(contrib[static_cast<size_t>(i)].shape(), nodes_[static_cast<size_t>(p)].value.shape),
                        "backward shape mismatch for ", op_name(n.op), ": ",
                        shape_str(contrib[static_cast<size_t>(i)].shape()), " vs parent ",
                        shape_str(nodes_[static_cast<size_t>(p)].value.shape));
            if (adj[static_cast<size_t>(p)] < 0) {
                adj[static_cast<size_t>(p)] = contrib[static_cast<size_t>(i)].id;
            } else {
                adj[static_cast<size_t>(p)] = add(Tensor{this, adj[static_cast<size_t>(p)]},
                                                  contrib[static_cast<size_t>(i)]).id;
            }
        }
    }

    std::vector<Tensor> result;
    result.reserve(wrt.size());
    for (const Tensor& w : wrt) {
        const int32_t gid = (w.id <= out.id) ? adj[static_cast<size_t>(w.id)] : -1;
        Tensor gt = gid >= 0 ? Tensor{this, gid} : full(w.shape(), 0.0);
        if (!create_graph && gid >= 0) gt = detach(gt);
        result.push_back(gt);
    }
    return result;
}

}  // namespace sadag::ad
