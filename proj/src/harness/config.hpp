#pragma once

#include <string>

#include "calib/calibration.hpp"
#include "synthesis/synthesis.hpp"

namespace sadag::harness {

// Line-oriented `key = value` config, '#' comments. Unknown keys and
// out-of-range values are rejected with the key name and line. Defaults are
// the experiment defaults (nu=2, zeta=0, lambda1=lambda2=1, lr_g=0.1,
// lr_z=0.01, batch_gen=128, batch_cal=32, t=1024).
struct ExperimentConfig {
    uint64_t seed = 1;
    std::string mode = "sadag";  // sadag | bn-only | select | sharpness
    int bits_w = 2;
    int bits_a = 2;

    int64_t t = 1024;   // synthetic image count
    int64_t n_w = 200;  // warm-up iterations
    int64_t n_g = 50;   // generation epochs
    int64_t n_q = 200;  // calibration iterations

    double nu = 2.0;
    double zeta = 0.0;
    double lambda1 = 1.0, lambda2 = 1.0;
    double lr_g = 0.1, lr_z = 0.01;
    double alpha = 0.02;  // calibration step size
    int64_t batch_gen = 128;
    int64_t batch_cal = 32;
    double rho_eval = 0.1;
    bool continuous_weights = false;

    // toy dataset
    int64_t ds_classes = 4;
    int64_t ds_train = 2048;
    int64_t ds_val = 1024;

    // teacher training
    int64_t teacher_epochs = 30;
    double teacher_floor = 0.90;

    // sweep / selection / sharpness modes
    int64_t seeds = 5;
    int64_t select_pool = 256;
    int64_t select_k = 32;
    std::string radii = "0.05,0.1,0.2";

    synth::GenerationConfig generation() const;
    calib::CalibConfig calibration() const;
    std::vector<double> radii_list() const;
};

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig parse_config(const std::string& path);

// Canonical serialization of everything except seed and mode; its FNV-1a
// hash ties artifacts to the settings that produced them.
std::string canonical_config(const ExperimentConfig& cfg);
uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace sadag::harness
