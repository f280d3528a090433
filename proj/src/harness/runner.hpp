#pragma once

#include <optional>

#include "harness/config.hpp"
#include "harness/io.hpp"
#include "harness/toydata.hpp"

namespace sadag::harness {

// Teacher / quantized-net checkpoint helpers (SADG layout with a meta tensor
// carrying input geometry and per-layer bit widths).
void save_teacher(const std::string& path, nets::TeacherNet& t, const Provenance& prov);
struct LoadedTeacher {
    nets::TeacherNet net;
    std::optional<Provenance> prov;
};
LoadedTeacher load_teacher(const std::string& path);

void save_quantnet(const std::string& path, quant::QuantNet& q, const Provenance& prov);
struct LoadedQuant {
    quant::QuantNet net;
    std::optional<Provenance> prov;
};
LoadedQuant load_quantnet(const std::string& path);

// Standard artifact layout under an output directory.
struct RunPaths {
    std::string out_dir;
    std::string train_data, val_data, teacher, synth_data, quantnet, metrics;

    static RunPaths at(const std::string& out_dir);
};

struct StageContext {
    ExperimentConfig cfg;
    RunPaths paths;
    bool force = false;  // skip provenance hash checks
};

// Individual pipeline stages (each validates artifact provenance). All
// failures carry a stage tag for the CLI and the failure row.
nets::TeacherNet stage_train_teacher(const StageContext& ctx);
void stage_generate(const StageContext& ctx);
void stage_calibrate(const StageContext& ctx);
MetricsRow stage_evaluate(const StageContext& ctx);
std::vector<MetricsRow> stage_select(const StageContext& ctx);
std::vector<MetricsRow> stage_sharpness(const StageContext& ctx);

// Full pipeline for the configured mode (teacher trained if absent). Appends
// rows to the metrics CSV; a stage failure writes a failure row and
// rethrows.
std::vector<MetricsRow> run_experiment(const StageContext& ctx);

// run_experiment over seeds seed..seed+seeds-1.
std::vector<MetricsRow> sweep(const StageContext& ctx);

std::string run_id(const ExperimentConfig& cfg);

}  // namespace sadag::harness
