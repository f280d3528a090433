#include "calib/calibration.hpp"

#include <algorithm>
#include <cmath>

#include "kernels/kernels.hpp"

namespace sadag::calib {

using namespace sadag::ad;
using losses::GradVector;
using losses::SharpnessProbe;
using nets::TeacherNet;
using quant::QuantNet;

CalibStats calibrate(QuantNet& q, const TeacherNet& t, const LabeledDataset& data, const CalibConfig& cfg) {
    SADAG_CHECK(data.count() >= 1, "calibration set is empty");
    SADAG_CHECK(cfg.n_q >= 1, "calibration needs at least one iteration");
    SADAG_CHECK(cfg.alpha >= 0.0, "calibration step size must be nonnegative");

    CalibStats stats;
    Rng shuffle_rng(derive_seed(cfg.seed, "calib-shuffle"));
    std::vector<int64_t> order;
    int64_t cursor = 0;

    for (int64_t it = 0; it < cfg.n_q; ++it) {
        std::vector<int64_t> idx;
        if (data.count() <= cfg.batch) {
            for (int64_t i = 0; i < data.count(); ++i) idx.push_back(i);
        } else {
            for (int64_t k = 0; k < cfg.batch; ++k) {
                if (cursor == 0) order = shuffle_rng.permutation(data.count());
                idx.push_back(order[static_cast<size_t>(cursor)]);
                cursor = (cursor + 1) % data.count();
            }
        }

        const double frac = cfg.n_q > 1 ? static_cast<double>(it) / static_cast<double>(cfg.n_q - 1) : 1.0;
        const double beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * frac;

        Graph g;
        quant::QuantFwdOpts opts;
        opts.v_rg = true;
        opts.weights_rg = cfg.continuous_weights;
        opts.freeze_act_ranges = it == 0;
        quant::QuantTrace qt;
        Tensor loss = losses::reconstruction_loss_t(g, q, t, g.constant(data.rows(idx)), opts, &qt);

        double reg_val = 0.0;
        if (!qt.v_leaves.empty() && cfg.round_reg_weight > 0.0) {
            Tensor reg;
            for (const Tensor& v : qt.v_leaves) {
                Tensor r = quant::round_regularizer_t(v, beta);
                reg = reg.valid() ? add(reg, r) : r;
            }
            reg_val = reg.item();
            loss = add(loss, scale(reg, cfg.round_reg_weight));
        }
        stats.reg_trace.push_back(reg_val);

        const double lval = loss.item();
        SADAG_CHECK(std::isfinite(lval), "calibration loss diverged to non-finite at iteration ", it);
        if (it == 0) stats.loss_first = lval;
        stats.loss_last = lval;

        std::vector<Tensor> wrt = qt.v_leaves;
        wrt.insert(wrt.end(), qt.w_leaves.begin(), qt.w_leaves.end());
        if (wrt.empty()) continue;  // fully pass-through net: nothing to optimize
        const auto grads = g.grad(loss, wrt);

        size_t gi = 0;
        for (auto& wq : q.wq) {
            if (wq.identity()) continue;
            const Array& gv = grads[gi++].val();
            for (int64_t j = 0; j < wq.V.size(); ++j) wq.V[j] -= cfg.alpha * gv[j];
        }
        if (cfg.continuous_weights) {
            for (size_t layer = 0; layer < q.wq.size(); ++layer) {
                Array& w = layer + 1 == q.wq.size() ? q.base.fc_w : q.base.blocks[layer].w;
                const Array& gw = grads[gi++].val();
                for (int64_t j = 0; j < w.size(); ++j) w[j] -= cfg.alpha * gw[j];
            }
        }
    }
    return stats;
}

double quant_accuracy(QuantNet& q, const LabeledDataset& ds) {
    SADAG_CHECK(ds.count() > 0, "accuracy of empty dataset");
    int64_t hits = 0;
    const int64_t batch = 256;
    for (int64_t at = 0; at < ds.count(); at += batch) {
        std::vector<int64_t> idx;
        for (int64_t i = at; i < std::min(ds.count(), at + batch); ++i) idx.push_back(i);
        Graph g;
        const quant::QuantTrace tr = quant_forward(g, q, g.constant(ds.rows(idx)));
        const Array& lg = tr.logits.val();
        const int64_t c = lg.shape[1];
        for (size_t i = 0; i < idx.size(); ++i) {
            int64_t best = 0;
            for (int64_t j = 1; j < c; ++j)
                if (lg[static_cast<int64_t>(i) * c + j] > lg[static_cast<int64_t>(i) * c + best]) best = j;
            hits += best == ds.labels[static_cast<size_t>(idx[i])];
        }
    }
    return static_cast<double>(hits) / static_cast<double>(ds.count());
}

EvalReport evaluate_quant(QuantNet& q, const TeacherNet& t, const LabeledDataset& ds, double rho_eval) {
    SADAG_CHECK(ds.count() > 0, "evaluation dataset is empty");
    EvalReport rep;
    rep.top1 = quant_accuracy(q, ds);
    rep.recon = losses::reconstruction_loss(q, t, ds.images);
    if (rep.recon < 1e-18) {
        rep.sharpness = SharpnessProbe{rho_eval, rep.recon, rep.recon};
    } else {
        rep.sharpness = losses::sam_loss(q, t, ds.images, rho_eval);
    }
    return rep;
}

EvalReport evaluate_teacher(const TeacherNet& t, const LabeledDataset& ds) {
    SADAG_CHECK(ds.count() > 0, "evaluation dataset is empty");
    EvalReport rep;
    rep.top1 = nets::teacher_accuracy(t, ds);
    rep.recon = 0.0;
    rep.sharpness = SharpnessProbe{};
    return rep;
}

std::vector<int64_t> select_subset(const LabeledDataset& pool, int64_t k, QuantNet& q, const TeacherNet& t) {
    SADAG_CHECK(k >= 1, "subset size must be at least 1");
    SADAG_CHECK(k <= pool.count(), "subset size ", k, " exceeds pool size ", pool.count());

    const std::vector<GradVector> grads = losses::per_sample_fc_gradients(q, t, pool.images);
    const int64_t dim = grads.empty() ? 0 : grads[0].values.size();
    Array total({dim}, 0.0);
    for (const GradVector& gv : grads)
        for (int64_t j = 0; j < dim; ++j) total[j] += gv.values[j];
    const double total_norm =
        std::sqrt(kernels::table().dot(total.data.data(), total.data.data(), total.data.size()));
    SADAG_CHECK(total_norm > 1e-12, "pool aggregate gradient is zero");

    std::vector<int64_t> chosen;
    std::vector<char> used(static_cast<size_t>(pool.count()), 0);
    Array acc({dim}, 0.0);
    for (int64_t step = 0; step < k; ++step) {
        int64_t best = -1;
        double best_cos = -2.0;
        for (int64_t i = 0; i < pool.count(); ++i) {
            if (used[static_cast<size_t>(i)]) continue;
            Array cand = acc;
            for (int64_t j = 0; j < dim; ++j) cand[j] += grads[static_cast<size_t>(i)].values[j];
            const double cn = std::sqrt(kernels::table().dot(cand.data.data(), cand.data.data(), cand.data.size()));
            if (cn <= 1e-15) continue;
            const double cos =
                kernels::table().dot(cand.data.data(), total.data.data(), cand.data.size()) / (cn * total_norm);
            if (cos > best_cos) {  // strict: ties keep the lowest index
                best_cos = cos;
                best = i;
            }
        }
        SADAG_CHECK(best >= 0, "selection stalled: every candidate aggregate is zero");
        used[static_cast<size_t>(best)] = 1;
        chosen.push_back(best);
        for (int64_t j = 0; j < dim; ++j) acc[j] += grads[static_cast<size_t>(best)].values[j];
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

std::vector<SharpnessProbe> measure_sharpness_curve(QuantNet& q, const TeacherNet& t, const Array& X,
                                                    const std::vector<double>& radii) {
    SADAG_CHECK(!radii.empty(), "no radii given");
    for (size_t i = 0; i < radii.size(); ++i) {
        SADAG_CHECK(radii[i] > 0.0, "radii must be positive");
        SADAG_CHECK(i == 0 || radii[i] > radii[i - 1], "radii must be ascending");
    }
    std::vector<SharpnessProbe> probes;
    for (double r : radii) probes.push_back(losses::sam_loss(q, t, X, r));
    return probes;
}

}  // namespace sadag::calib
