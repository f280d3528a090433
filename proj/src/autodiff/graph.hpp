#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "core/array.hpp"

namespace sadag::ad {

// Node operations. Backward passes are themselves built from these ops, so
// gradients of gradients come out of the same machinery.
enum class Op : uint8_t {
    Leaf,
    Add, Sub, Mul, Div,        // broadcasting binaries
    Affine,                    // x*d0 + d1
    Matmul,                    // (m,k)x(k,n)
    Transpose2d,
    Swap01,                    // swap first two axes, rank >= 2
    Conv2d,                    // iattr: stride, pad; square kernels
    Dilate2d,                  // zero-insertion upsample of the two spatial dims
    Subsample2d,               // out[y,x] = in[s*y, s*x]
    Crop2d,                    // iattr: oy, ox, h, w (spatial window)
    Embed2d,                   // iattr: oy, ox, H, W (zero-embed spatial window)
    FlipKernel,                // reverse spatial dims and swap axes 0/1 of a rank-4 weight
    Upsample2,                 // nearest-neighbor x2 on spatial dims
    BlockSum2,                 // sum over 2x2 spatial blocks (adjoint of Upsample2)
    Relu, Exp, Log, Sqrt, Tanh, Sigmoid, Abs,
    Clip,                      // d0 = lo, d1 = hi
    SumAxes,                   // iattr0 = reduced-axes bitmask, iattr1 = keepdims
    Reshape,                   // iattr0 = rank, iattr1.. = dims
    Concat0,                   // along axis 0; parents in `more`
    Slice0,                    // iattr: start, len (axis 0)
    Embed0,                    // iattr: start, N  (zero-embed along axis 0)
    MaskPos,                   // x > 0 ? 1 : 0           (not differentiable)
    MaskSign,                  // sign(x), 0 at 0         (not differentiable)
    MaskInside,                // d0 < x < d1 ? 1 : 0     (not differentiable)
    RowMax,                    // (n,m) -> (n,1) row max  (not differentiable)
    Floor, Round,              // straight-through: backward is identity
    Detach,
};

const char* op_name(Op op);
bool op_blocks_grad(Op op);

struct Node {
    Op op = Op::Leaf;
    bool requires_grad = false;
    int32_t a = -1, b = -1;
    std::vector<int32_t> more;  // Concat0 only
    std::array<int64_t, 6> iattr{};
    double d0 = 0.0, d1 = 0.0;
    Array value;

    int parent_count() const;
    int32_t parent(int i) const;
};

class Graph;

// Handle to a node on a Graph. Cheap to copy; never outlives its graph.
struct Tensor {
    Graph* g = nullptr;
    int32_t id = -1;

    bool valid() const { return g != nullptr && id >= 0; }
    const Shape& shape() const;
    int64_t size() const;
    const Array& val() const;
    double item() const { return val().item(); }
};

class Graph {
public:
    Tensor leaf(Array v, bool requires_grad = false);
    Tensor constant(Array v) { return leaf(std::move(v), false); }
    Tensor scalar(double v) { return constant(Array::scalar(v)); }
    Tensor full(Shape s, double v) { return constant(Array(std::move(s), v)); }

    // Appends a node, computing its cached forward value. Used by the op
    // builders in ops.hpp; not meant to be called with ad-hoc nodes.
    Tensor emit(Node&& n);

    size_t size() const { return nodes_.size(); }
    const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

    // d(out)/d(wrt[i]). out must be a single value reachable from this graph.
    // A wrt tensor outside out's ancestry yields a zero tensor. With
    // create_graph the returned tensors are differentiable nodes themselves.
    std::vector<Tensor> grad(const Tensor& out, const std::vector<Tensor>& wrt, bool create_graph = false);

    // Recomputes every non-leaf value from the leaves and compares bitwise
    // with the caches.
    bool replay_bitexact() const;

private:
    Array eval(const Node& n) const;
    std::vector<Node> nodes_;
};

}  // namespace sadag::ad
