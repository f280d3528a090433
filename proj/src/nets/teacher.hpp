#pragma once

#include <string>
#include <utility>
#include <vector>

#include "autodiff/ops.hpp"
#include "core/dataset.hpp"
#include "core/rng.hpp"

namespace sadag::nets {

constexpr double kBnEps = 1e-5;

struct ConvBlock {
    Array w;                  // (co, ci, 3, 3), stride 2, pad 1, no bias
    Array gamma, beta;        // (co)
    Array run_mu, run_sigma;  // (co); sigma stored as sqrt(var + eps)
};

// Full-precision classifier: 3 conv/norm/relu blocks (8, 16, 32 channels),
// global average pool, fully-connected head. Input 3x16x16.
struct TeacherNet {
    int64_t in_ch = 3, in_h = 16, in_w = 16, classes = 4;
    std::vector<ConvBlock> blocks;
    Array fc_w;  // (d, C)
    Array fc_b;  // (C)

    int64_t feature_dim() const { return blocks.back().w.shape[0]; }
    // conv blocks + fc head
    int64_t layer_count() const { return static_cast<int64_t>(blocks.size()) + 1; }

    static TeacherNet init(int64_t classes, uint64_t seed, const std::vector<int64_t>& channels = {8, 16, 32},
                           int64_t in_ch = 3, int64_t in_h = 16, int64_t in_w = 16);

    // Trainable tensors, fixed order: per block (w, gamma, beta), then fc_w, fc_b.
    std::vector<Array*> parameters();
    // All state including running statistics, for checkpoints.
    std::vector<std::pair<std::string, Array*>> named_tensors();
};

enum class BnMode { Train, Eval };

struct ForwardTrace {
    // Per-layer outputs entering the reconstruction loss: block outputs then
    // logits; length == layer_count().
    std::vector<ad::Tensor> layer_outputs;
    ad::Tensor fc_input;  // (N, d) pooled features
    ad::Tensor logits;    // (N, C)
    // Per block: batch (mu, sigma) of the pre-normalization features.
    std::vector<std::pair<ad::Tensor, ad::Tensor>> batch_stats;
    // Parameter leaves in parameters() order; populated when params_rg.
    std::vector<ad::Tensor> params;
};

struct TeacherFwdOpts {
    BnMode mode = BnMode::Eval;
    bool params_rg = false;
    bool want_batch_stats = true;
};

ForwardTrace teacher_forward(ad::Graph& g, const TeacherNet& net, ad::Tensor x, const TeacherFwdOpts& opts = {});

// EMA of stored (mu, sigma) toward the batch statistics in `trace`.
void update_running_stats(TeacherNet& net, const ForwardTrace& trace, double momentum = 0.1);

struct TeacherTrainConfig {
    int64_t epochs = 30;
    int64_t batch = 64;
    double lr = 0.05;  // cosine-decayed momentum SGD
    double momentum = 0.9;
    double ema_momentum = 0.1;
    double accuracy_floor = 0.90;
    uint64_t seed = 1;
};

struct TeacherTrainResult {
    TeacherNet net;
    double train_acc = 0.0;
    double val_acc = 0.0;
    bool reached_floor = false;
};

// Trains from scratch; never throws on a missed floor (the caller decides).
TeacherTrainResult train_teacher(const LabeledDataset& train, const LabeledDataset& val,
                                 const TeacherTrainConfig& cfg);

double teacher_accuracy(const TeacherNet& net, const LabeledDataset& ds);

}  // namespace sadag::nets
