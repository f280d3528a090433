#include "nets/generator.hpp"

#include <cmath>

namespace sadag::nets {

using namespace sadag::ad;

GeneratorNet GeneratorNet::init(uint64_t seed) {
    GeneratorNet gen;
    Rng rng(derive_seed(seed, "generator-init"));
    const auto he = [&](Shape s, int64_t fan_in) {
        return Array(s, rng.normal_vec(static_cast<size_t>(numel(s)), 0.0,
                                       std::sqrt(2.0 / static_cast<double>(fan_in))));
    };
    gen.dense_w = he({kEmbedDim, 16 * 4 * 4}, kEmbedDim);
    gen.dense_b = Array({16 * 4 * 4}, 0.0);
    gen.conv1_w = he({16, 16, 3, 3}, 16 * 9);
    gen.n1_gamma = Array({16}, 1.0);
    gen.n1_beta = Array({16}, 0.0);
    gen.conv2_w = he({8, 16, 3, 3}, 16 * 9);
    gen.n2_gamma = Array({8}, 1.0);
    gen.n2_beta = Array({8}, 0.0);
    gen.out_w = he({3, 8, 3, 3}, 8 * 9);
    gen.out_b = Array({3}, 0.0);
    return gen;
}

std::vector<Array*> GeneratorNet::parameters() {
    return {&dense_w, &dense_b, &conv1_w, &n1_gamma, &n1_beta, &conv2_w, &n2_gamma, &n2_beta, &out_w, &out_b};
}

std::vector<std::pair<std::string, Array*>> GeneratorNet::named_tensors() {
    return {{"dense.w", &dense_w},   {"dense.b", &dense_b},   {"conv1.w", &conv1_w}, {"n1.gamma", &n1_gamma},
            {"n1.beta", &n1_beta},   {"conv2.w", &conv2_w},   {"n2.gamma", &n2_gamma}, {"n2.beta", &n2_beta},
            {"out.w", &out_w},       {"out.b", &out_b}};
}

namespace {

Tensor spatial_norm(Tensor x, Tensor gamma, Tensor beta) {
    const int64_t c = x.shape()[1];
    Tensor m = mean_axes(x, 0b1100, true);
    Tensor v = variance_axes(x, 0b1100, true);
    Tensor xn = div(sub(x, m), sqrt_(affine(v, 1.0, 1e-5)));
    return add(mul(xn, reshape(gamma, {1, c, 1, 1})), reshape(beta, {1, c, 1, 1}));
}

}  // namespace

GeneratorFwd generator_forward(Graph& g, const GeneratorNet& gen, Tensor z, bool params_rg,
                               const std::vector<Tensor>* reuse_params) {
    SADAG_CHECK(z.shape().size() == 2 && z.shape()[1] == GeneratorNet::kEmbedDim, "generator expects (B,",
                GeneratorNet::kEmbedDim, ") embeddings, got ", shape_str(z.shape()));
    SADAG_CHECK(!reuse_params || reuse_params->size() == 10, "generator parameter leaf list has wrong arity");
    GeneratorFwd out;
    size_t reuse_at = 0;
    const auto param = [&](const Array& a) {
        if (reuse_params) return (*reuse_params)[reuse_at++];
        Tensor t = g.leaf(a, params_rg);
        if (params_rg) out.params.push_back(t);
        return t;
    };

    // one statement per parameter leaf: registration order must match
    // parameters() regardless of argument evaluation order
    Tensor dense_w = param(gen.dense_w);
    Tensor dense_b = param(gen.dense_b);
    Tensor conv1_w = param(gen.conv1_w);
    Tensor n1_gamma = param(gen.n1_gamma);
    Tensor n1_beta = param(gen.n1_beta);
    Tensor conv2_w = param(gen.conv2_w);
    Tensor n2_gamma = param(gen.n2_gamma);
    Tensor n2_beta = param(gen.n2_beta);
    Tensor out_w = param(gen.out_w);
    Tensor out_b = param(gen.out_b);

    const int64_t b = z.shape()[0];
    Tensor h = add(matmul(z, dense_w), dense_b);
    h = reshape(h, {b, 16, 4, 4});

    h = upsample2(h);  // 8x8
    h = conv2d(h, conv1_w, 1, 1);
    h = relu(spatial_norm(h, n1_gamma, n1_beta));

    h = upsample2(h);  // 16x16
    h = conv2d(h, conv2_w, 1, 1);
    h = relu(spatial_norm(h, n2_gamma, n2_beta));

    h = conv2d(h, out_w, 1, 1);
    h = add(h, reshape(out_b, {1, 3, 1, 1}));
    out.images = tanh_(h);
    return out;
}

}  // namespace sadag::nets
