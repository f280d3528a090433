#pragma once

#include "losses/losses.hpp"
#include "nets/optim.hpp"

namespace sadag::synth {

struct GenerationConfig {
    int64_t count = 1024;     // number of synthetic images (T)
    int64_t warmup_iters = 200;
    int64_t gen_epochs = 50;
    double nu = 2.0;
    double zeta = 0.0;
    double lambda1 = 1.0, lambda2 = 1.0;
    double lr_g = 0.1, lr_z = 0.01;
    int64_t batch = 128;
    uint64_t seed = 1;
    double lr_g_decay = 0.95;          // per epoch, exponential
    double lr_z_plateau_factor = 0.5;  // on stalled epoch-mean loss
    int64_t lr_z_patience = 3;
};

struct Provenance {
    uint64_t seed = 0;
    uint64_t config_hash = 0;
    bool warmup_only = false;
    bool fallback_warning = false;  // perturbation fallback rate > 50% in some epoch
    uint32_t fallback_count = 0;
};

struct SynthDataset {
    Array images;  // (T, 3, 16, 16) in [-1, 1]
    Provenance prov;
};

struct LatentBatch {
    Array z;  // (T, 256), standard normal at init
    nets::AdamRows opt;

    static LatentBatch init(int64_t count, uint64_t seed);
};

struct WarmupStats {
    double first = 0.0, last = 0.0;
    std::vector<double> trace;
};

// warmup_iters Adam steps of the statistics-matching loss on generator and
// embeddings. Aborts on sustained divergence (loss > 10x initial for 50
// consecutive steps).
WarmupStats warmup(nets::GeneratorNet& gen, LatentBatch& lat, const nets::TeacherNet& t,
                   const GenerationConfig& cfg);

struct GenerateStats {
    double first_epoch_mean = 0.0, last_epoch_mean = 0.0;
    std::vector<double> epoch_means;
    uint32_t fallbacks = 0;
    bool fallback_warning = false;
};

// gen_epochs sweeps over all embeddings in shuffled mini-batches: per batch,
// neighbor perturbations (when lambda2 > 0), then one Adam step on the batch
// rows and the generator against the combined objective. The quantized net
// stays frozen throughout. Emits the generated images in row order.
SynthDataset generate(nets::GeneratorNet& gen, LatentBatch& lat, const nets::TeacherNet& t, quant::QuantNet& q,
                      const GenerationConfig& cfg, uint64_t config_hash, GenerateStats* stats = nullptr);

// Independently coded statistics-only generation loop; exists to guard the
// lambda1 = lambda2 = 0 path of generate() against accidental coupling.
SynthDataset generate_bn_only(nets::GeneratorNet& gen, LatentBatch& lat, const nets::TeacherNet& t,
                              const GenerationConfig& cfg, uint64_t config_hash);

// G(z) for every row, in fixed row order (samples are batch-independent).
Array render_all(const nets::GeneratorNet& gen, const Array& z, int64_t batch);

}  // namespace sadag::synth
