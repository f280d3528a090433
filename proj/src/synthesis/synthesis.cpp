#include "synthesis/synthesis.hpp"

#include <algorithm>
#include <cmath>

namespace sadag::synth {

using namespace sadag::ad;
using nets::Adam;
using nets::GeneratorNet;
using nets::TeacherNet;
using quant::QuantNet;

LatentBatch LatentBatch::init(int64_t count, uint64_t seed) {
    SADAG_CHECK(count >= 1, "need at least one embedding");
    LatentBatch lat;
    Rng rng(derive_seed(seed, "latent-init"));
    lat.z = Array({count, GeneratorNet::kEmbedDim},
                  rng.normal_vec(static_cast<size_t>(count * GeneratorNet::kEmbedDim)));
    lat.opt.init(count, GeneratorNet::kEmbedDim);
    return lat;
}

namespace {

Array take_rows(const Array& z, const std::vector<int64_t>& rows) {
    const int64_t dim = z.shape[1];
    Array out({static_cast<int64_t>(rows.size()), dim});
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(z.data.begin() + rows[i] * dim, z.data.begin() + (rows[i] + 1) * dim,
                  out.data.begin() + static_cast<int64_t>(i) * dim);
    return out;
}

// Ring of shuffled row indices; reshuffles whenever it wraps.
struct BatchRing {
    explicit BatchRing(int64_t n, uint64_t seed) : n_(n), rng_(seed) {}
    std::vector<int64_t> next(int64_t batch) {
        std::vector<int64_t> idx;
        for (int64_t k = 0; k < batch; ++k) {
            if (cursor_ == 0) order_ = rng_.permutation(n_);
            idx.push_back(order_[static_cast<size_t>(cursor_)]);
            cursor_ = (cursor_ + 1) % n_;
        }
        return idx;
    }

private:
    int64_t n_;
    Rng rng_;
    std::vector<int64_t> order_;
    int64_t cursor_ = 0;
};

void step_generator(Adam& opt, GeneratorNet& gen, const std::vector<Tensor>& grads) {
    const auto params = gen.parameters();
    std::vector<const Array*> gvals;
    for (const Tensor& g : grads) gvals.push_back(&g.val());
    opt.step(params, gvals);
}

}  // namespace

WarmupStats warmup(GeneratorNet& gen, LatentBatch& lat, const TeacherNet& t, const GenerationConfig& cfg) {
    SADAG_CHECK(cfg.batch >= 2, "generation batch must be at least 2");
    WarmupStats stats;
    if (cfg.warmup_iters == 0) return stats;

    Adam gopt(cfg.lr_g);
    gopt.init(gen.parameters());
    BatchRing ring(lat.z.shape[0], derive_seed(cfg.seed, "warmup-shuffle"));
    int64_t bad_streak = 0;

    for (int64_t it = 0; it < cfg.warmup_iters; ++it) {
        const auto rows = ring.next(std::min<int64_t>(cfg.batch, lat.z.shape[0]));
        Graph g;
        Tensor z = g.leaf(take_rows(lat.z, rows), true);
        nets::GeneratorFwd fwd = generator_forward(g, gen, z, true);
        Tensor loss = losses::bn_loss_t(g, t, fwd.images);
        const double lval = loss.item();
        SADAG_CHECK(std::isfinite(lval), "warm-up loss non-finite at iteration ", it);
        if (it == 0) stats.first = lval;
        stats.last = lval;
        stats.trace.push_back(lval);

        if (lval > 10.0 * stats.first) {
            if (++bad_streak >= 50) {
                std::string tail;
                for (size_t i = stats.trace.size() >= 5 ? stats.trace.size() - 5 : 0; i < stats.trace.size(); ++i)
                    tail += detail::msg(" ", stats.trace[i]);
                SADAG_THROW("warm-up diverged: loss ", lval, " vs initial ", stats.first, "; recent:", tail);
            }
        } else {
            bad_streak = 0;
        }

        std::vector<Tensor> wrt = fwd.params;
        wrt.push_back(z);
        const auto grads = g.grad(loss, wrt);
        step_generator(gopt, gen, {grads.begin(), grads.end() - 1});
        lat.opt.step(lat.z, rows, grads.back().val(), cfg.lr_z);
    }
    return stats;
}

Array render_all(const GeneratorNet& gen, const Array& z, int64_t batch) {
    const int64_t n = z.shape[0];
    Array images({n, 3, 16, 16});
    for (int64_t at = 0; at < n; at += batch) {
        std::vector<int64_t> rows;
        for (int64_t i = at; i < std::min(n, at + batch); ++i) rows.push_back(i);
        Graph g;
        const Tensor img = generator_forward(g, gen, g.constant(take_rows(z, rows))).images;
        std::copy(img.val().data.begin(), img.val().data.end(), images.data.begin() + at * 3 * 16 * 16);
    }
    return images;
}

SynthDataset generate(GeneratorNet& gen, LatentBatch& lat, const TeacherNet& t, QuantNet& q,
                      const GenerationConfig& cfg, uint64_t config_hash, GenerateStats* out_stats) {
    SADAG_CHECK(cfg.gen_epochs >= 1, "generation needs at least one epoch");
    SADAG_CHECK(cfg.batch >= 2, "generation batch must be at least 2");
    const int64_t n = lat.z.shape[0];
    const int64_t batch = std::min<int64_t>(cfg.batch, n);

    GenerateStats stats;
    Adam gopt(cfg.lr_g);
    gopt.init(gen.parameters());
    lat.opt.init(n, GeneratorNet::kEmbedDim);
    Rng shuffle_rng(derive_seed(cfg.seed, "gen-shuffle"));
    Rng pert_rng(derive_seed(cfg.seed, "gen-pert"));

    double lr_z = cfg.lr_z;
    double best_mean = 0.0;
    int64_t stall = 0;

    for (int64_t epoch = 0; epoch < cfg.gen_epochs; ++epoch) {
        gopt.lr = cfg.lr_g * std::pow(cfg.lr_g_decay, static_cast<double>(epoch));
        const std::vector<int64_t> perm = shuffle_rng.permutation(n);
        double epoch_sum = 0.0;
        int64_t epoch_batches = 0, epoch_fallbacks = 0, epoch_rows = 0;

        for (int64_t at = 0; at < n; at += batch) {
            std::vector<int64_t> rows(perm.begin() + at, perm.begin() + std::min(n, at + batch));
            if (static_cast<int64_t>(rows.size()) < 2) continue;
            const Array z_rows = take_rows(lat.z, rows);

            Array eps_rows;
            if (cfg.lambda2 > 0.0) {
                const auto perts = losses::neighbor_perturbations(gen, z_rows, q, t, cfg.nu, pert_rng);
                eps_rows = Array({static_cast<int64_t>(rows.size()), GeneratorNet::kEmbedDim});
                for (size_t i = 0; i < perts.size(); ++i) {
                    epoch_fallbacks += perts[i].fell_back;
                    std::copy(perts[i].eps.data.begin(), perts[i].eps.data.end(),
                              eps_rows.data.begin() + static_cast<int64_t>(i) * GeneratorNet::kEmbedDim);
                }
            }
            epoch_rows += static_cast<int64_t>(rows.size());

            Graph g;
            Tensor z = g.leaf(z_rows, true);
            std::vector<Tensor> gen_params;
            losses::GenLossParts parts =
                losses::generation_loss_t(g, gen, z, cfg.lambda2 > 0.0 ? &eps_rows : nullptr, q, t, cfg.lambda1,
                                          cfg.lambda2, cfg.zeta, &gen_params);
            const double lval = parts.total.item();
            SADAG_CHECK(std::isfinite(lval), "generation loss non-finite (epoch ", epoch, ")");
            epoch_sum += lval;
            ++epoch_batches;

            std::vector<Tensor> wrt = gen_params;
            wrt.push_back(z);
            const auto grads = g.grad(parts.total, wrt);
            step_generator(gopt, gen, {grads.begin(), grads.end() - 1});
            lat.opt.step(lat.z, rows, grads.back().val(), lr_z);
        }

        const double mean = epoch_batches ? epoch_sum / static_cast<double>(epoch_batches) : 0.0;
        stats.epoch_means.push_back(mean);
        if (epoch == 0) {
            stats.first_epoch_mean = mean;
            best_mean = mean;
        }
        stats.last_epoch_mean = mean;
        stats.fallbacks += static_cast<uint32_t>(epoch_fallbacks);
        if (cfg.lambda2 > 0.0 && epoch_rows > 0 &&
            static_cast<double>(epoch_fallbacks) > 0.5 * static_cast<double>(epoch_rows))
            stats.fallback_warning = true;

        // plateau schedule for the embedding rate
        if (epoch > 0) {
            if (mean < best_mean - 1e-12) {
                best_mean = mean;
                stall = 0;
            } else if (++stall >= cfg.lr_z_patience) {
                lr_z *= cfg.lr_z_plateau_factor;
                stall = 0;
            }
        }
    }

    SynthDataset ds;
    ds.images = render_all(gen, lat.z, batch);
    ds.prov.seed = cfg.seed;
    ds.prov.config_hash = config_hash;
    ds.prov.warmup_only = false;
    ds.prov.fallback_warning = stats.fallback_warning;
    ds.prov.fallback_count = stats.fallbacks;
    if (out_stats) *out_stats = stats;
    return ds;
}

SynthDataset generate_bn_only(GeneratorNet& gen, LatentBatch& lat, const TeacherNet& t,
                              const GenerationConfig& cfg, uint64_t config_hash) {
    SADAG_CHECK(cfg.gen_epochs >= 1, "generation needs at least one epoch");
    SADAG_CHECK(cfg.batch >= 2, "generation batch must be at least 2");
    const int64_t n = lat.z.shape[0];
    const int64_t batch = std::min<int64_t>(cfg.batch, n);

    Adam gopt(cfg.lr_g);
    gopt.init(gen.parameters());
    lat.opt.init(n, GeneratorNet::kEmbedDim);
    Rng shuffle_rng(derive_seed(cfg.seed, "gen-shuffle"));

    double lr_z = cfg.lr_z;
    double best_mean = 0.0;
    int64_t stall = 0;

    for (int64_t epoch = 0; epoch < cfg.gen_epochs; ++epoch) {
        gopt.lr = cfg.lr_g * std::pow(cfg.lr_g_decay, static_cast<double>(epoch));
        const std::vector<int64_t> perm = shuffle_rng.permutation(n);
        double epoch_sum = 0.0;
        int64_t epoch_batches = 0;

        for (int64_t at = 0; at < n; at += batch) {
            std::vector<int64_t> rows(perm.begin() + at, perm.begin() + std::min(n, at + batch));
            if (static_cast<int64_t>(rows.size()) < 2) continue;
            Graph g;
            Tensor z = g.leaf(take_rows(lat.z, rows), true);
            nets::GeneratorFwd fwd = generator_forward(g, gen, z, true);
            Tensor loss = losses::bn_loss_t(g, t, fwd.images);
            const double lval = loss.item();
            SADAG_CHECK(std::isfinite(lval), "generation loss non-finite (epoch ", epoch, ")");
            epoch_sum += lval;
            ++epoch_batches;

            std::vector<Tensor> wrt = fwd.params;
            wrt.push_back(z);
            const auto grads = g.grad(loss, wrt);
            step_generator(gopt, gen, {grads.begin(), grads.end() - 1});
            lat.opt.step(lat.z, rows, grads.back().val(), lr_z);
        }

        const double mean = epoch_batches ? epoch_sum / static_cast<double>(epoch_batches) : 0.0;
        if (epoch == 0) best_mean = mean;
        if (epoch > 0) {
            if (mean < best_mean - 1e-12) {
                best_mean = mean;
                stall = 0;
            } else if (++stall >= cfg.lr_z_patience) {
                lr_z *= cfg.lr_z_plateau_factor;
                stall = 0;
            }
        }
    }

    SynthDataset ds;
    ds.images = render_all(gen, lat.z, batch);
    ds.prov.seed = cfg.seed;
    ds.prov.config_hash = config_hash;
    return ds;
}

}  // namespace sadag::synth
