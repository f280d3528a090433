#pragma once

#include <vector>

#include "autodiff/graph.hpp"

namespace sadag::ad {

// Broadcasting binaries (numpy-style, rank <= 4).
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor div(Tensor a, Tensor b);

Tensor affine(Tensor x, double scale, double shift);
inline Tensor scale(Tensor x, double s) { return affine(x, s, 0.0); }
inline Tensor neg(Tensor x) { return affine(x, -1.0, 0.0); }

Tensor matmul(Tensor a, Tensor b);
Tensor transpose2d(Tensor m);
Tensor swap01(Tensor t);

// Direct convolution, NCHW, zero padding, pad <= k-1 per axis.
Tensor conv2d(Tensor x, Tensor w, int64_t stride, int64_t pad);
Tensor conv2d(Tensor x, Tensor w, int64_t stride, int64_t pad_h, int64_t pad_w);
Tensor dilate2d(Tensor x, int64_t stride);
Tensor subsample2d(Tensor x, int64_t stride);
Tensor crop2d(Tensor x, int64_t oy, int64_t ox, int64_t h, int64_t w);
Tensor embed2d(Tensor x, int64_t oy, int64_t ox, int64_t H, int64_t W);
Tensor flip_kernel(Tensor w);
Tensor upsample2(Tensor x);
Tensor block_sum2(Tensor x);

Tensor relu(Tensor x);
Tensor exp_(Tensor x);
Tensor log_(Tensor x);
Tensor sqrt_(Tensor x);
Tensor tanh_(Tensor x);
Tensor sigmoid(Tensor x);
Tensor abs_(Tensor x);
Tensor clip(Tensor x, double lo, double hi);

Tensor sum(Tensor x);
Tensor sum_axes(Tensor x, uint32_t axes_mask, bool keepdims);
Tensor mean(Tensor x);
Tensor mean_axes(Tensor x, uint32_t axes_mask, bool keepdims);
Tensor variance(Tensor x);  // biased (1/n)
Tensor variance_axes(Tensor x, uint32_t axes_mask, bool keepdims);

Tensor reshape(Tensor x, Shape s);
Tensor concat0(const std::vector<Tensor>& parts);
Tensor slice0(Tensor x, int64_t start, int64_t len);
Tensor embed0(Tensor x, int64_t start, int64_t n);

Tensor mask_pos(Tensor x);
Tensor mask_sign(Tensor x);
Tensor mask_inside(Tensor x, double lo, double hi);
Tensor row_max(Tensor x);
Tensor floor_ste(Tensor x);
Tensor round_ste(Tensor x);  // nearest, ties up: floor(x + 0.5)
Tensor detach(Tensor x);

Tensor dot(Tensor u, Tensor v);
Tensor l2norm(Tensor x);

// Reduce by summation to a broadcast-compatible target shape (adjoint of
// broadcasting).
Tensor sum_to(Tensor t, const Shape& target);

// y = gamma * (x - mu) / sigma + beta with per-channel (1,C,1,1) parameters.
Tensor batchnorm_apply(Tensor x, Tensor gamma, Tensor beta, Tensor mu, Tensor sigma);

// Mean cross-entropy of row-wise softmax against one-hot targets.
Tensor softmax_crossentropy(Tensor logits, Tensor onehot);

}  // namespace sadag::ad
