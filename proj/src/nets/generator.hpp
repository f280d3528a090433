#pragma once

#include <string>
#include <utility>
#include <vector>

#include "autodiff/ops.hpp"
#include "core/rng.hpp"

namespace sadag::nets {

// Upsampling image generator: 256-dim embedding -> dense -> 4x4 feature map
// -> two (nearest-upsample, conv, norm, relu) blocks -> conv -> tanh, output
// 3x16x16 in [-1, 1]. The norm layers standardize per sample over the spatial
// dims (learnable per-channel gain/shift), keeping samples independent of
// their batch.
struct GeneratorNet {
    static constexpr int64_t kEmbedDim = 256;

    Array dense_w;  // (256, 16*4*4)
    Array dense_b;  // (256)
    Array conv1_w;  // (16, 16, 3, 3)
    Array n1_gamma, n1_beta;
    Array conv2_w;  // (8, 16, 3, 3)
    Array n2_gamma, n2_beta;
    Array out_w;  // (3, 8, 3, 3)
    Array out_b;  // (3)

    static GeneratorNet init(uint64_t seed);
    std::vector<Array*> parameters();
    std::vector<std::pair<std::string, Array*>> named_tensors();
};

struct GeneratorFwd {
    ad::Tensor images;                // (B, 3, 16, 16)
    std::vector<ad::Tensor> params;   // leaves when params_rg
};

// With `reuse_params`, the forward is built over those existing leaves
// instead of registering new ones (two forwards sharing one parameter set
// accumulate their gradients).
GeneratorFwd generator_forward(ad::Graph& g, const GeneratorNet& gen, ad::Tensor z, bool params_rg = false,
                               const std::vector<ad::Tensor>* reuse_params = nullptr);

}  // namespace sadag::nets
