#include <CLI11.hpp>

#include <cstdio>

#include "harness/runner.hpp"

using namespace sadag;
using harness::ExperimentConfig;
using harness::MetricsRow;
using harness::RunPaths;
using harness::StageContext;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    int64_t seed_override = -1;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file (key = value lines)");
    cmd->add_option("--out", args.out_dir, "output directory for artifacts and metrics");
    cmd->add_option("--seed", args.seed_override, "override the config seed");
    cmd->add_flag("--force", args.force, "ignore artifact config-hash mismatches");
}

StageContext make_context(const CommonArgs& args, const std::string& mode_override = "") {
    StageContext ctx;
    ctx.cfg = args.config_path.empty() ? ExperimentConfig{} : harness::parse_config(args.config_path);
    if (args.seed_override >= 0) ctx.cfg.seed = static_cast<uint64_t>(args.seed_override);
    if (!mode_override.empty()) ctx.cfg.mode = mode_override;
    ctx.paths = RunPaths::at(args.out_dir);
    ctx.force = args.force;
    return ctx;
}

void print_rows(const std::vector<MetricsRow>& rows) {
    std::printf("%s\n", harness::kMetricsHeader);
    for (const auto& r : rows) std::printf("%s\n", r.to_line().c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sharpness-aware synthetic-data generation and low-bit calibration on a toy classifier"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string teacher_path, data_path, quant_path, pool_path;

    auto* cmd_teacher = app.add_subcommand("train-teacher", "train the full-precision teacher on the toy dataset");
    add_common(cmd_teacher, args);

    auto* cmd_generate = app.add_subcommand("generate", "synthesize a calibration set from the teacher");
    add_common(cmd_generate, args);
    cmd_generate->add_option("--teacher", teacher_path, "teacher checkpoint (default <out>/teacher.sadg)");

    auto* cmd_calibrate = app.add_subcommand("calibrate", "calibrate a quantized copy on a calibration set");
    add_common(cmd_calibrate, args);
    cmd_calibrate->add_option("--teacher", teacher_path, "teacher checkpoint");
    cmd_calibrate->add_option("--data", data_path, "calibration dataset (default <out>/synth.sadd)");

    auto* cmd_evaluate = app.add_subcommand("evaluate", "evaluate a calibrated net on labeled data");
    add_common(cmd_evaluate, args);
    cmd_evaluate->add_option("--teacher", teacher_path, "teacher checkpoint");
    cmd_evaluate->add_option("--quant", quant_path, "quantized-net checkpoint (default <out>/quant.sadg)");
    cmd_evaluate->add_option("--data", data_path, "labeled dataset (default <out>/val.sadd)");

    auto* cmd_select = app.add_subcommand("select", "gradient-matched vs random calibration subsets");
    add_common(cmd_select, args);
    cmd_select->add_option("--teacher", teacher_path, "teacher checkpoint");
    cmd_select->add_option("--pool", pool_path, "labeled pool source (default <out>/val.sadd)");

    auto* cmd_sharp = app.add_subcommand("sharpness", "loss-sharpness probes over a radius sweep");
    add_common(cmd_sharp, args);
    cmd_sharp->add_option("--teacher", teacher_path, "teacher checkpoint");
    cmd_sharp->add_option("--quant", quant_path, "quantized-net checkpoint");
    cmd_sharp->add_option("--data", data_path, "labeled dataset");

    auto* cmd_sweep = app.add_subcommand("sweep", "full pipeline over consecutive seeds");
    add_common(cmd_sweep, args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_teacher->parsed()) {
            StageContext ctx = make_context(args);
            const auto net = harness::stage_train_teacher(ctx);
            const double acc = nets::teacher_accuracy(net, harness::load_dataset(ctx.paths.val_data).data);
            std::printf("teacher ready: %s (held-out top1 %.4f)\n", ctx.paths.teacher.c_str(), acc);
        } else if (cmd_generate->parsed()) {
            StageContext ctx = make_context(args);
            if (!teacher_path.empty()) ctx.paths.teacher = teacher_path;
            harness::stage_generate(ctx);
            std::printf("calibration set written: %s\n", ctx.paths.synth_data.c_str());
        } else if (cmd_calibrate->parsed()) {
            StageContext ctx = make_context(args);
            if (!teacher_path.empty()) ctx.paths.teacher = teacher_path;
            if (!data_path.empty()) ctx.paths.synth_data = data_path;
            harness::stage_calibrate(ctx);
            std::printf("calibrated net written: %s\n", ctx.paths.quantnet.c_str());
        } else if (cmd_evaluate->parsed()) {
            StageContext ctx = make_context(args);
            if (!teacher_path.empty()) ctx.paths.teacher = teacher_path;
            if (!quant_path.empty()) ctx.paths.quantnet = quant_path;
            if (!data_path.empty()) ctx.paths.val_data = data_path;
            MetricsRow row = harness::stage_evaluate(ctx);
            harness::append_metrics(ctx.paths.metrics, row);
            print_rows({row});
        } else if (cmd_select->parsed()) {
            StageContext ctx = make_context(args, "select");
            if (!teacher_path.empty()) ctx.paths.teacher = teacher_path;
            if (!pool_path.empty()) ctx.paths.val_data = pool_path;
            const auto rows = harness::stage_select(ctx);
            for (const auto& r : rows) harness::append_metrics(ctx.paths.metrics, r);
            print_rows(rows);
        } else if (cmd_sharp->parsed()) {
            StageContext ctx = make_context(args, "sharpness");
            if (!teacher_path.empty()) ctx.paths.teacher = teacher_path;
            if (!quant_path.empty()) ctx.paths.quantnet = quant_path;
            if (!data_path.empty()) ctx.paths.val_data = data_path;
            const auto rows = harness::stage_sharpness(ctx);
            for (const auto& r : rows) harness::append_metrics(ctx.paths.metrics, r);
            print_rows(rows);
        } else if (cmd_sweep->parsed()) {
            StageContext ctx = make_context(args);
            print_rows(harness::sweep(ctx));
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: [%s] %s\n", e.stage().empty() ? "run" : e.stage().c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
