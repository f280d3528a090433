#pragma once

#include "core/dataset.hpp"
#include "losses/losses.hpp"

namespace sadag::calib {

struct CalibConfig {
    int64_t n_q = 200;  // descent iterations
    double alpha = 0.02;
    int64_t batch = 32;
    double rho_eval = 0.1;
    // literal parameter-update mode: descend on the continuous weights as
    // well as the rounding logits
    bool continuous_weights = false;
    double round_reg_weight = 0.01;
    double beta_start = 20.0, beta_end = 2.0;  // linear anneal over n_q
    uint64_t seed = 1;
};

struct CalibStats {
    double loss_first = 0.0, loss_last = 0.0;
    std::vector<double> reg_trace;  // rounding regularizer per iteration
};

// n_q plain gradient-descent steps on the reconstruction loss (plus the
// annealed rounding regularizer) with respect to the rounding logits and,
// optionally, the continuous weights. Activation ranges freeze on the first
// batch. Never touches the reference net.
CalibStats calibrate(quant::QuantNet& q, const nets::TeacherNet& t, const LabeledDataset& data,
                     const CalibConfig& cfg);

struct EvalReport {
    double top1 = 0.0;
    double recon = 0.0;
    losses::SharpnessProbe sharpness;
    uint64_t seed = 0;
    uint64_t config_hash = 0;
};

double quant_accuracy(quant::QuantNet& q, const LabeledDataset& ds);

// Top-1 accuracy, held-out reconstruction loss and the sharpness probe at
// rho_eval. A zero reconstruction gradient (evaluating a net against itself)
// reports zero sharpness instead of failing.
EvalReport evaluate_quant(quant::QuantNet& q, const nets::TeacherNet& t, const LabeledDataset& ds,
                          double rho_eval);
EvalReport evaluate_teacher(const nets::TeacherNet& t, const LabeledDataset& ds);

// Greedy forward selection of k pool indices maximizing the cosine between
// the subset's aggregate fc gradient and the pool's. Ties keep the lowest
// sample index.
std::vector<int64_t> select_subset(const LabeledDataset& pool, int64_t k, quant::QuantNet& q,
                                   const nets::TeacherNet& t);

// One probe per radius; radii must be positive ascending.
std::vector<losses::SharpnessProbe> measure_sharpness_curve(quant::QuantNet& q, const nets::TeacherNet& t,
                                                            const Array& X, const std::vector<double>& radii);

}  // namespace sadag::calib
