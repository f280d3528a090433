#include "harness/runner.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace sadag::harness {

using nets::TeacherNet;
using quant::QuantNet;

namespace {

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

Array scalar_meta(const std::vector<double>& vals) {
    return Array({static_cast<int64_t>(vals.size())}, vals);
}

void check_prov(const std::optional<Provenance>& prov, const StageContext& ctx, const std::string& what) {
    if (ctx.force || !prov.has_value()) return;
    const uint64_t want = config_hash(ctx.cfg);
    SADAG_CHECK(prov->config_hash == want, what, " was produced under config hash ", prov->config_hash,
                " but the current config hashes to ", want, " (pass --force to override)");
}

Provenance make_prov(const StageContext& ctx) {
    Provenance p;
    p.seed = ctx.cfg.seed;
    p.config_hash = config_hash(ctx.cfg);
    return p;
}

[[noreturn]] void stage_fail(const std::string& stage, const Error& e) {
    throw Error(e.what(), stage);
}

template <typename Fn>
auto with_stage(const std::string& stage, Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        if (!e.stage().empty()) throw;
        stage_fail(stage, e);
    }
}

}  // namespace

void save_teacher(const std::string& path, TeacherNet& t, const Provenance& prov) {
    std::vector<std::pair<std::string, const Array*>> tensors;
    const Array meta = scalar_meta({static_cast<double>(t.in_ch), static_cast<double>(t.in_h),
                                    static_cast<double>(t.in_w), static_cast<double>(t.classes)});
    tensors.push_back({"meta.input", &meta});
    for (const auto& [name, arr] : t.named_tensors()) tensors.push_back({name, arr});
    save_checkpoint(path, tensors, prov);
}

LoadedTeacher load_teacher(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    const Array& meta = ck.get("meta.input");
    SADAG_CHECK(meta.size() == 4, path, ": malformed meta.input");

    LoadedTeacher lt;
    TeacherNet& t = lt.net;
    t.in_ch = static_cast<int64_t>(meta[0]);
    t.in_h = static_cast<int64_t>(meta[1]);
    t.in_w = static_cast<int64_t>(meta[2]);
    t.classes = static_cast<int64_t>(meta[3]);
    for (size_t i = 0; ck.has("block" + std::to_string(i) + ".w"); ++i) {
        nets::ConvBlock b;
        const std::string p = "block" + std::to_string(i) + ".";
        b.w = ck.get(p + "w");
        b.gamma = ck.get(p + "gamma");
        b.beta = ck.get(p + "beta");
        b.run_mu = ck.get(p + "run_mu");
        b.run_sigma = ck.get(p + "run_sigma");
        t.blocks.push_back(std::move(b));
    }
    SADAG_CHECK(!t.blocks.empty(), path, ": checkpoint holds no conv blocks");
    t.fc_w = ck.get("fc.w");
    t.fc_b = ck.get("fc.b");
    lt.prov = ck.prov;
    return lt;
}

void save_quantnet(const std::string& path, QuantNet& q, const Provenance& prov) {
    std::vector<std::pair<std::string, const Array*>> tensors;
    const Array meta = scalar_meta({static_cast<double>(q.base.in_ch), static_cast<double>(q.base.in_h),
                                    static_cast<double>(q.base.in_w), static_cast<double>(q.base.classes)});
    tensors.push_back({"meta.input", &meta});

    std::vector<double> wb, ab;
    for (const auto& wq : q.wq) wb.push_back(static_cast<double>(wq.bits));
    std::vector<Array> aq_state;
    for (const auto& aq : q.aq) {
        ab.push_back(static_cast<double>(aq.bits));
        aq_state.push_back(scalar_meta({aq.frozen ? 1.0 : 0.0, aq.lo, aq.hi}));
    }
    const Array wbits = scalar_meta(wb), abits = scalar_meta(ab);
    tensors.push_back({"meta.bits_w", &wbits});
    tensors.push_back({"meta.bits_a", &abits});
    for (size_t i = 0; i < q.aq.size(); ++i)
        tensors.push_back({"aq" + std::to_string(i) + ".state", &aq_state[i]});
    for (size_t i = 0; i < q.wq.size(); ++i)
        if (!q.wq[i].identity()) tensors.push_back({"wq" + std::to_string(i) + ".v", &q.wq[i].V});
    for (const auto& [name, arr] : q.base.named_tensors()) tensors.push_back({"base." + name, arr});
    save_checkpoint(path, tensors, prov);
}

LoadedQuant load_quantnet(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    const Array& meta = ck.get("meta.input");
    SADAG_CHECK(meta.size() == 4, path, ": malformed meta.input");

    TeacherNet base;
    base.in_ch = static_cast<int64_t>(meta[0]);
    base.in_h = static_cast<int64_t>(meta[1]);
    base.in_w = static_cast<int64_t>(meta[2]);
    base.classes = static_cast<int64_t>(meta[3]);
    for (size_t i = 0; ck.has("base.block" + std::to_string(i) + ".w"); ++i) {
        nets::ConvBlock b;
        const std::string p = "base.block" + std::to_string(i) + ".";
        b.w = ck.get(p + "w");
        b.gamma = ck.get(p + "gamma");
        b.beta = ck.get(p + "beta");
        b.run_mu = ck.get(p + "run_mu");
        b.run_sigma = ck.get(p + "run_sigma");
        base.blocks.push_back(std::move(b));
    }
    SADAG_CHECK(!base.blocks.empty(), path, ": checkpoint holds no conv blocks");
    base.fc_w = ck.get("base.fc.w");
    base.fc_b = ck.get("base.fc.b");

    const Array& wbits = ck.get("meta.bits_w");
    const Array& abits = ck.get("meta.bits_a");
    quant::BitsConfig bits;
    for (int64_t i = 0; i < wbits.size(); ++i) bits.w_bits.push_back(static_cast<int>(wbits[i]));
    for (int64_t i = 0; i < abits.size(); ++i) bits.a_bits.push_back(static_cast<int>(abits[i]));

    LoadedQuant lq{quant::init_quantnet(base, bits), ck.prov};
    for (size_t i = 0; i < lq.net.wq.size(); ++i) {
        if (lq.net.wq[i].identity()) continue;
        lq.net.wq[i].V = ck.get("wq" + std::to_string(i) + ".v");
    }
    for (size_t i = 0; i < lq.net.aq.size(); ++i) {
        const Array& st = ck.get("aq" + std::to_string(i) + ".state");
        SADAG_CHECK(st.size() == 3, path, ": malformed activation quantizer state");
        lq.net.aq[i].frozen = st[0] != 0.0;
        lq.net.aq[i].lo = st[1];
        lq.net.aq[i].hi = st[2];
    }
    return lq;
}

RunPaths RunPaths::at(const std::string& out_dir) {
    RunPaths p;
    p.out_dir = out_dir;
    p.train_data = out_dir + "/train.sadd";
    p.val_data = out_dir + "/val.sadd";
    p.teacher = out_dir + "/teacher.sadg";
    p.synth_data = out_dir + "/synth.sadd";
    p.quantnet = out_dir + "/quant.sadg";
    p.metrics = out_dir + "/metrics.csv";
    return p;
}

std::string run_id(const ExperimentConfig& cfg) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(config_hash(cfg) >> 32));
    return detail::msg(buf, "-", cfg.mode, "-s", cfg.seed);
}

nets::TeacherNet stage_train_teacher(const StageContext& ctx) {
    return with_stage("train-teacher", [&] {
        std::filesystem::create_directories(ctx.paths.out_dir);
        const ExperimentConfig& cfg = ctx.cfg;
        ToyDataParams params;
        params.classes = cfg.ds_classes;

        if (!std::filesystem::exists(ctx.paths.train_data)) {
            params.count = cfg.ds_train;
            save_dataset(ctx.paths.train_data, make_toy_dataset(params, cfg.seed, "train"), make_prov(ctx));
        }
        if (!std::filesystem::exists(ctx.paths.val_data)) {
            params.count = cfg.ds_val;
            save_dataset(ctx.paths.val_data, make_toy_dataset(params, cfg.seed, "val"), make_prov(ctx));
        }
        const LoadedDataset train = load_dataset(ctx.paths.train_data);
        const LoadedDataset val = load_dataset(ctx.paths.val_data);
        check_prov(train.prov, ctx, ctx.paths.train_data);
        check_prov(val.prov, ctx, ctx.paths.val_data);

        nets::TeacherTrainConfig tcfg;
        tcfg.epochs = cfg.teacher_epochs;
        tcfg.seed = cfg.seed;
        tcfg.accuracy_floor = cfg.teacher_floor;
        auto result = nets::train_teacher(train.data, val.data, tcfg);
        SADAG_CHECK(result.reached_floor, "teacher reached ", result.val_acc, " held-out accuracy, below the ",
                    cfg.teacher_floor, " floor");
        save_teacher(ctx.paths.teacher, result.net, make_prov(ctx));
        // always hand back the binary32 round-tripped weights so later runs
        // that load from disk reproduce this run bit for bit
        return load_teacher(ctx.paths.teacher).net;
    });
}

void stage_generate(const StageContext& ctx) {
    with_stage("generate", [&] {
        const ExperimentConfig& cfg = ctx.cfg;
        LoadedTeacher teacher = load_teacher(ctx.paths.teacher);
        check_prov(teacher.prov, ctx, ctx.paths.teacher);

        nets::GeneratorNet gen = nets::GeneratorNet::init(cfg.seed);
        synth::LatentBatch lat = synth::LatentBatch::init(cfg.t, cfg.seed);
        synth::GenerationConfig gcfg = cfg.generation();
        warmup(gen, lat, teacher.net, gcfg);

        quant::QuantNet q = quant::init_quantnet(teacher.net, quant::BitsConfig::uniform(teacher.net, cfg.bits_w,
                                                                                        cfg.bits_a));
        synth::SynthDataset ds;
        if (cfg.mode == "bn-only") {
            gcfg.lambda1 = 0.0;
            gcfg.lambda2 = 0.0;
        }
        ds = synth::generate(gen, lat, teacher.net, q, gcfg, config_hash(cfg));

        LabeledDataset out;
        out.images = std::move(ds.images);
        out.labels.assign(static_cast<size_t>(cfg.t), 0);  // synthetic data carries no labels
        save_dataset(ctx.paths.synth_data, out, ds.prov);
    });
}

void stage_calibrate(const StageContext& ctx) {
    with_stage("calibrate", [&] {
        LoadedTeacher teacher = load_teacher(ctx.paths.teacher);
        check_prov(teacher.prov, ctx, ctx.paths.teacher);
        LoadedDataset synth = load_dataset(ctx.paths.synth_data);
        check_prov(synth.prov, ctx, ctx.paths.synth_data);

        quant::QuantNet q = quant::init_quantnet(
            teacher.net, quant::BitsConfig::uniform(teacher.net, ctx.cfg.bits_w, ctx.cfg.bits_a));
        calibrate(q, teacher.net, synth.data, ctx.cfg.calibration());
        save_quantnet(ctx.paths.quantnet, q, make_prov(ctx));
    });
}

MetricsRow stage_evaluate(const StageContext& ctx) {
    return with_stage("evaluate", [&] {
        LoadedTeacher teacher = load_teacher(ctx.paths.teacher);
        check_prov(teacher.prov, ctx, ctx.paths.teacher);
        LoadedQuant q = load_quantnet(ctx.paths.quantnet);
        check_prov(q.prov, ctx, ctx.paths.quantnet);
        const LoadedDataset val = load_dataset(ctx.paths.val_data);
        check_prov(val.prov, ctx, ctx.paths.val_data);

        const calib::EvalReport rep =
            calib::evaluate_quant(q.net, teacher.net, val.data, ctx.cfg.rho_eval);
        MetricsRow row;
        row.run_id = run_id(ctx.cfg);
        row.mode = ctx.cfg.mode;
        row.seed = ctx.cfg.seed;
        row.bits_w = ctx.cfg.bits_w;
        row.bits_a = ctx.cfg.bits_a;
        row.top1 = rep.top1;
        row.recon = rep.recon;
        row.sharpness = rep.sharpness.sharpness();
        row.rho = ctx.cfg.rho_eval;
        return row;
    });
}

std::vector<MetricsRow> stage_select(const StageContext& ctx) {
    return with_stage("select", [&] {
        const ExperimentConfig& cfg = ctx.cfg;
        LoadedTeacher teacher = load_teacher(ctx.paths.teacher);
        check_prov(teacher.prov, ctx, ctx.paths.teacher);
        const LoadedDataset val = load_dataset(ctx.paths.val_data);
        check_prov(val.prov, ctx, ctx.paths.val_data);
        SADAG_CHECK(cfg.select_pool <= val.data.count(), "pool size ", cfg.select_pool,
                    " exceeds validation set size ", val.data.count());

        // seeded pool draw; evaluation on the disjoint remainder
        Rng rng(derive_seed(cfg.seed, "select-pool"));
        const std::vector<int64_t> perm = rng.permutation(val.data.count());
        std::vector<int64_t> pool_idx(perm.begin(), perm.begin() + cfg.select_pool);
        std::vector<int64_t> eval_idx(perm.begin() + cfg.select_pool, perm.end());
        SADAG_CHECK(!eval_idx.empty(), "validation set leaves no held-out samples after the pool draw");

        LabeledDataset pool, heldout;
        pool.images = val.data.rows(pool_idx);
        heldout.images = val.data.rows(eval_idx);
        for (int64_t i : pool_idx) pool.labels.push_back(val.data.labels[static_cast<size_t>(i)]);
        for (int64_t i : eval_idx) heldout.labels.push_back(val.data.labels[static_cast<size_t>(i)]);

        const auto calibrated_top1 = [&](const std::vector<int64_t>& subset) {
            quant::QuantNet q = quant::init_quantnet(
                teacher.net, quant::BitsConfig::uniform(teacher.net, cfg.bits_w, cfg.bits_a));
            LabeledDataset sub;
            sub.images = pool.rows(subset);
            for (int64_t i : subset) sub.labels.push_back(pool.labels[static_cast<size_t>(i)]);
            calibrate(q, teacher.net, sub, cfg.calibration());
            return calib::quant_accuracy(q, heldout);
        };

        quant::QuantNet qsel = quant::init_quantnet(
            teacher.net, quant::BitsConfig::uniform(teacher.net, cfg.bits_w, cfg.bits_a));
        const std::vector<int64_t> matched = calib::select_subset(pool, cfg.select_k, qsel, teacher.net);
        std::vector<int64_t> random_subset;
        {
            Rng rrng(derive_seed(cfg.seed, "select-random"));
            const auto rperm = rrng.permutation(pool.count());
            random_subset.assign(rperm.begin(), rperm.begin() + cfg.select_k);
        }

        std::vector<MetricsRow> rows;
        for (const auto& [tag, subset] : std::vector<std::pair<std::string, const std::vector<int64_t>*>>{
                 {"select-matched", &matched}, {"select-random", &random_subset}}) {
            MetricsRow row;
            row.run_id = run_id(cfg) + "-k" + std::to_string(cfg.select_k);
            row.mode = tag;
            row.seed = cfg.seed;
            row.bits_w = cfg.bits_w;
            row.bits_a = cfg.bits_a;
            row.top1 = calibrated_top1(*subset);
            row.rho = cfg.rho_eval;
            rows.push_back(row);
        }
        return rows;
    });
}

std::vector<MetricsRow> stage_sharpness(const StageContext& ctx) {
    return with_stage("sharpness", [&] {
        LoadedTeacher teacher = load_teacher(ctx.paths.teacher);
        check_prov(teacher.prov, ctx, ctx.paths.teacher);
        LoadedQuant q = load_quantnet(ctx.paths.quantnet);
        check_prov(q.prov, ctx, ctx.paths.quantnet);
        const LoadedDataset val = load_dataset(ctx.paths.val_data);
        check_prov(val.prov, ctx, ctx.paths.val_data);

        const auto probes =
            calib::measure_sharpness_curve(q.net, teacher.net, val.data.images, ctx.cfg.radii_list());
        std::vector<MetricsRow> rows;
        for (const auto& p : probes) {
            MetricsRow row;
            row.run_id = run_id(ctx.cfg);
            row.mode = "sharpness";
            row.seed = ctx.cfg.seed;
            row.bits_w = ctx.cfg.bits_w;
            row.bits_a = ctx.cfg.bits_a;
            row.recon = p.base;
            row.sharpness = p.sharpness();
            row.rho = p.rho;
            rows.push_back(row);
        }
        return rows;
    });
}

std::vector<MetricsRow> run_experiment(const StageContext& ctx) {
    const double t0 = now_s();
    std::string stage = "setup";
    try {
        std::filesystem::create_directories(ctx.paths.out_dir);
        stage = "train-teacher";
        if (!std::filesystem::exists(ctx.paths.teacher)) {
            (void)stage_train_teacher(ctx);
        }
        std::vector<MetricsRow> rows;
        if (ctx.cfg.mode == "sadag" || ctx.cfg.mode == "bn-only") {
            stage = "generate";
            stage_generate(ctx);
            stage = "calibrate";
            stage_calibrate(ctx);
            stage = "evaluate";
            MetricsRow row = stage_evaluate(ctx);
            row.wall_s = now_s() - t0;
            append_metrics(ctx.paths.metrics, row);
            rows.push_back(row);
        } else if (ctx.cfg.mode == "select") {
            stage = "select";
            rows = stage_select(ctx);
            for (auto& row : rows) {
                row.wall_s = now_s() - t0;
                append_metrics(ctx.paths.metrics, row);
            }
        } else {
            stage = "sharpness";
            rows = stage_sharpness(ctx);
            for (auto& row : rows) {
                row.wall_s = now_s() - t0;
                append_metrics(ctx.paths.metrics, row);
            }
        }
        return rows;
    } catch (const Error& e) {
        MetricsRow fail;
        const std::string at = e.stage().empty() ? stage : e.stage();
        fail.run_id = run_id(ctx.cfg) + ":failed@" + at;
        fail.mode = ctx.cfg.mode;
        fail.seed = ctx.cfg.seed;
        fail.bits_w = ctx.cfg.bits_w;
        fail.bits_a = ctx.cfg.bits_a;
        fail.top1 = fail.recon = fail.sharpness = std::nan("");
        fail.rho = ctx.cfg.rho_eval;
        fail.wall_s = now_s() - t0;
        try {
            std::filesystem::create_directories(ctx.paths.out_dir);
            append_metrics(ctx.paths.metrics, fail);
        } catch (...) {
        }
        throw Error(e.what(), at);
    }
}

std::vector<MetricsRow> sweep(const StageContext& ctx) {
    std::vector<MetricsRow> all;
    for (int64_t k = 0; k < ctx.cfg.seeds; ++k) {
        StageContext per = ctx;
        per.cfg.seed = ctx.cfg.seed + static_cast<uint64_t>(k);
        // per-seed artifacts live in their own directory; the metrics file is shared
        per.paths = RunPaths::at(ctx.paths.out_dir + "/s" + std::to_string(per.cfg.seed));
        per.paths.metrics = ctx.paths.metrics;
        const auto rows = run_experiment(per);
        all.insert(all.end(), rows.begin(), rows.end());
    }
    return all;
}

}  // namespace sadag::harness
