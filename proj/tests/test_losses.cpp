#include <doctest.h>

#include <cmath>

#include "losses/losses.hpp"
#include "support/testutil.hpp"

using namespace sadag;
using namespace sadag::ad;
using namespace sadag::losses;
using nets::TeacherNet;
using quant::BitsConfig;
using quant::init_quantnet;
using quant::kNoQuantBits;
using quant::QuantNet;
using test::random_array;

namespace {

// identical sentinel pair (no quantization anywhere)
std::pair<TeacherNet, QuantNet> sentinel_pair(uint64_t seed, const std::vector<int64_t>& channels = {8, 16, 32}) {
    TeacherNet t = TeacherNet::init(4, seed, channels);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, kNoQuantBits, kNoQuantBits));
    return {std::move(t), std::move(q)};
}

GradVector unit(std::vector<double> v) {
    GradVector g;
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    const int64_t len = static_cast<int64_t>(v.size());
    g.values = Array({len}, std::move(v));
    g.normalized = true;
    return g;
}

// Teacher whose forward is constant zero into the fc head: conv weights,
// shifts and fc weights all zero, so a reconstruction loss against a copy
// differing only in fc bias is a pure quadratic in that bias.
TeacherNet zeroed_teacher(uint64_t seed) {
    TeacherNet t = TeacherNet::init(4, seed);
    for (auto& b : t.blocks) {
        for (auto& v : b.w.data) v = 0.0;
        for (auto& v : b.beta.data) v = 0.0;
    }
    for (auto& v : t.fc_w.data) v = 0.0;
    for (auto& v : t.fc_b.data) v = 0.0;
    return t;
}

}  // namespace

TEST_SUITE_BEGIN("losses");

TEST_CASE("reconstruction loss: zero for identical nets, hand value, batch additivity") {
    auto [t, q] = sentinel_pair(61);
    Rng rng(62);
    const Array x = random_array({2, 3, 16, 16}, rng);
    CHECK(reconstruction_loss(q, t, x) == 0.0);

    // logits differ by (0, 2, 0, 0) on a single sample: loss = 1/2 * 4 = 2
    QuantNet qb = q;
    qb.base.fc_b[1] += 2.0;
    const Array x1 = random_array({1, 3, 16, 16}, rng);
    CHECK(reconstruction_loss(qb, t, x1) == doctest::Approx(2.0).epsilon(1e-12));

    // duplicating the batch doubles the loss
    QuantNet q2 = init_quantnet(t, BitsConfig::uniform(t, 2, 2));
    const double single = reconstruction_loss(q2, t, x);
    Array xx({4, 3, 16, 16});
    std::copy(x.data.begin(), x.data.end(), xx.data.begin());
    std::copy(x.data.begin(), x.data.end(), xx.data.begin() + x.size());
    CHECK(reconstruction_loss(q2, t, xx) == doctest::Approx(2.0 * single).epsilon(1e-12));

    // architecture mismatch rejected
    TeacherNet small = TeacherNet::init(4, 63, {4, 8});
    CHECK_THROWS_AS(reconstruction_loss(q, small, x), Error);
}

TEST_CASE("sam_epsilon: hand normalization, zero radius, norm invariant") {
    // zeroed nets concentrate the whole gradient on the fc bias:
    // b_q - b_t = (3, 4, 0, 0)
    const TeacherNet t = zeroed_teacher(64);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, kNoQuantBits, kNoQuantBits));
    q.base.fc_b[0] += 3.0;
    q.base.fc_b[1] += 4.0;
    Rng rng(65);
    const Array x = random_array({1, 3, 16, 16}, rng);

    const auto eps = sam_epsilon(q, t, x, 1.0);
    // effective params: per block (w, gamma, beta) then fc_w, fc_b
    const Array& eb = eps.back();
    CHECK(eb[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(eb[1] == doctest::Approx(0.8).epsilon(1e-12));
    double total = 0.0;
    for (const Array& e : eps)
        for (double v : e.data) total += v * v;
    CHECK(std::sqrt(total) == doctest::Approx(1.0).epsilon(1e-9));

    const auto eps0 = sam_epsilon(q, t, x, 0.0);
    for (const Array& e : eps0)
        for (double v : e.data) CHECK(v == 0.0);

    // zero gradient rejected
    auto [t2, q2] = sentinel_pair(66);
    CHECK_THROWS_AS(sam_epsilon(q2, t2, x, 0.5), Error);
}

TEST_CASE("sam_loss matches the quadratic closed form") {
    // nets identical except one fc bias coordinate off by delta: the
    // reconstruction loss is a 1-parameter quadratic and the probe follows
    // rho*|delta| + rho^2/2 exactly.
    const TeacherNet t = zeroed_teacher(67);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, kNoQuantBits, kNoQuantBits));
    const double delta = 0.3, rho = 0.1;
    q.base.fc_b[2] += delta;
    Rng rng(68);
    const Array x = random_array({1, 3, 16, 16}, rng);
    const SharpnessProbe p = sam_loss(q, t, x, rho);
    CHECK(p.base == doctest::Approx(0.5 * delta * delta).epsilon(1e-12));
    CHECK(p.sharpness() == doctest::Approx(rho * delta + 0.5 * rho * rho).epsilon(1e-9));
}

TEST_CASE("per-sample fc gradient: outer-product convention and zero case") {
    // force fc input a = (1, 2) and logit difference g = (3, -1)
    TeacherNet t = TeacherNet::init(2, 69, {2, 2});
    for (auto& b : t.blocks)
        for (auto& v : b.w.data) v = 0.0;
    t.blocks.back().beta = Array({2}, {1.0, 2.0});
    for (auto& v : t.fc_w.data) v = 0.0;
    t.fc_b = Array({2}, 0.0);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, kNoQuantBits, kNoQuantBits));
    q.base.fc_b = Array({2}, {3.0, -1.0});

    Rng rng(70);
    const Array x = random_array({1, 3, 16, 16}, rng);
    const GradVector gv = per_sample_fc_gradient(q, t, x);
    CHECK(gv.values.data == std::vector<double>{3.0, -1.0, 6.0, -2.0});

    // identical logits give the zero vector
    QuantNet q0 = init_quantnet(t, BitsConfig::uniform(t, kNoQuantBits, kNoQuantBits));
    const GradVector gz = per_sample_fc_gradient(q0, t, x);
    for (double v : gz.values.data) CHECK(v == 0.0);
    CHECK_THROWS_AS(per_sample_fc_gradient(q0, t, x, true), Error);  // cannot normalize zero
}

TEST_CASE("per-sample fc gradient equals the autodiff fc-weight gradient") {
    TeacherNet t = TeacherNet::init(4, 71);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, 4, 4));
    Rng rng(72);
    for (int rep = 0; rep < 3; ++rep) {
        const Array x = random_array({1, 3, 16, 16}, rng);
        const GradVector gv = per_sample_fc_gradient(q, t, x);

        Graph g;
        Tensor xt = g.constant(x);
        const auto tt = nets::teacher_forward(g, t, xt, {nets::BnMode::Eval, false, false});
        quant::QuantFwdOpts opts;
        opts.effective_leaves = true;
        quant::QuantTrace qt = quant_forward(g, q, xt, opts);
        Tensor d = sub(qt.logits, tt.logits);
        Tensor fc_term = scale(sum(mul(d, d)), 0.5);
        const size_t fc_w_leaf = 3 * t.blocks.size();
        const Array ga = g.grad(fc_term, {qt.eff_leaves[fc_w_leaf]})[0].val();

        CHECK(ga.size() == gv.values.size());
        double worst = 0.0;
        for (int64_t i = 0; i < ga.size(); ++i) worst = std::max(worst, std::fabs(ga[i] - gv.values[i]));
        CHECK(worst < 1e-9);
    }
}

TEST_CASE("fc Hessian reference: identity case, positivity, finite-difference structure") {
    {
        const Array gram = fc_hessian_reference(Array({2, 2}, {1, 0, 0, 1}));
        CHECK(gram.data == std::vector<double>{1, 0, 0, 1});
    }
    Rng rng(73);
    const Array a = random_array({5, 4}, rng);
    const Array gram = fc_hessian_reference(a);
    for (int64_t i = 0; i < 4; ++i) CHECK(gram[i * 4 + i] >= 0.0);

    // finite-difference Hessian of the fc-term loss L(W) = 1/2 sum ||a_i W - y_i||^2
    const int64_t d = 4, c = 3;
    const Array y = random_array({5, c}, rng);
    const Array w0 = random_array({d, c}, rng);
    const auto loss = [&](const Array& w) {
        double acc = 0.0;
        for (int64_t i = 0; i < 5; ++i)
            for (int64_t v = 0; v < c; ++v) {
                double logit = 0.0;
                for (int64_t u = 0; u < d; ++u) logit += a[i * d + u] * w[u * c + v];
                const double r = logit - y[i * c + v];
                acc += 0.5 * r * r;
            }
        return acc;
    };
    const double h = 1e-3;
    const int64_t n = d * c;
    for (int64_t p1 = 0; p1 < n; ++p1) {
        for (int64_t p2 = p1; p2 < n; ++p2) {
            Array w = w0;
            const auto probe = [&](double d1, double d2) {
                w = w0;
                w[p1] += d1;
                w[p2] += d2;
                return loss(w);
            };
            const double hess =
                (probe(h, h) - probe(h, -h) - probe(-h, h) + probe(-h, -h)) / (4.0 * h * h);
            const int64_t u1 = p1 / c, v1 = p1 % c, u2 = p2 / c, v2 = p2 % c;
            if (v1 == v2) {
                CHECK(hess == doctest::Approx(gram[u1 * 4 + u2]).epsilon(1e-6));
            } else {
                CHECK(std::fabs(hess) < 1e-6);
            }
        }
    }
}

TEST_CASE("cosine distance hand cases") {
    const GradVector a = unit({1, 0});
    GradVector na = a;
    for (auto& v : na.values.data) v = -v;
    CHECK(cosine_distance(a, a) == doctest::Approx(0.0));
    CHECK(cosine_distance(a, na) == doctest::Approx(2.0));
    GradVector b;
    b.values = Array({2}, {1, 1});
    CHECK(cosine_distance(a, b) == doctest::Approx(1.0 - 1.0 / std::sqrt(2.0)).epsilon(1e-12));
    GradVector z;
    z.values = Array({2}, 0.0);
    CHECK_THROWS_AS(cosine_distance(a, z), Error);
}

TEST_CASE("diversity loss hand cases and properties") {
    const GradVector e1 = unit({1, 0, 0});
    const GradVector e2 = unit({0, 1, 0});
    CHECK(diversity_loss({e1, e2}, 0.0) == 0.0);
    CHECK(diversity_loss({e1, e1}, 0.0) == doctest::Approx(2.0));  // ordered double sum

    // pair under threshold contributes nothing
    const double s = 0.05;
    const GradVector g1 = unit({1, 0});
    const GradVector g2 = unit({s, std::sqrt(1 - s * s)});
    CHECK(diversity_loss({g1, g2}, 0.1) == 0.0);

    GradVector raw;
    raw.values = Array({2}, {3, 4});
    CHECK_THROWS_AS(diversity_loss({raw}, 0.0), Error);

    // order-invariant
    Rng rng(74);
    std::vector<GradVector> gs;
    for (int i = 0; i < 5; ++i) {
        auto v = rng.normal_vec(6);
        gs.push_back(unit({v.begin(), v.end()}));
    }
    const double base = diversity_loss(gs, 0.05);
    std::swap(gs[0], gs[3]);
    std::swap(gs[1], gs[4]);
    CHECK(diversity_loss(gs, 0.05) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("bn loss: hand case and batch permutation invariance") {
    // single 1-channel block on 1x2x2 inputs; conv center tap reads pixel
    // (0,0); two samples with feature values 0 and 2 give batch stats
    // mu_s = 1, sigma_s = sqrt(1 + eps)
    TeacherNet t = TeacherNet::init(2, 75, {1}, 1, 2, 2);
    auto& b = t.blocks[0];
    for (auto& v : b.w.data) v = 0.0;
    b.w[4] = 1.0;  // kernel center
    b.run_mu = Array({1}, {0.0});
    const double sig_s = std::sqrt(1.0 + nets::kBnEps);
    b.run_sigma = Array({1}, {sig_s - 1.0});

    Array x({2, 1, 2, 2}, 0.0);
    x[0] = 0.0;
    x[4] = 2.0;
    CHECK(bn_loss(t, x) == doctest::Approx(2.0).epsilon(1e-12));

    // permutation invariance on the standard net
    TeacherNet t2 = TeacherNet::init(4, 76);
    Rng rng(77);
    const Array batch = random_array({4, 3, 16, 16}, rng);
    Array perm({4, 3, 16, 16});
    const int64_t ss = 3 * 16 * 16;
    const std::vector<int64_t> order{2, 0, 3, 1};
    for (int64_t i = 0; i < 4; ++i)
        std::copy(batch.data.begin() + order[i] * ss, batch.data.begin() + (order[i] + 1) * ss,
                  perm.data.begin() + i * ss);
    CHECK(bn_loss(t2, batch) == doctest::Approx(bn_loss(t2, perm)).epsilon(1e-9));

    CHECK_THROWS_AS(bn_loss(t2, random_array({1, 3, 16, 16}, rng)), Error);
}

TEST_CASE("grad match loss with zero perturbations is exactly zero") {
    TeacherNet t = TeacherNet::init(4, 78);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, 2, 2));
    const auto gen = nets::GeneratorNet::init(79);
    Rng rng(80);
    const Array z = random_array({4, nets::GeneratorNet::kEmbedDim}, rng);
    const Array eps({4, nets::GeneratorNet::kEmbedDim}, 0.0);
    int64_t masked = 0;
    CHECK(grad_match_loss(gen, z, eps, q, t, &masked) == 0.0);

    // range: [0, 2*T]
    Rng rng2(81);
    Array eps2({4, nets::GeneratorNet::kEmbedDim});
    for (auto& v : eps2.data) v = 0.5 * rng2.normal();
    const double l = grad_match_loss(gen, z, eps2, q, t);
    CHECK(l >= 0.0);
    CHECK(l <= 2.0 * 4.0);
}

TEST_CASE("neighbor perturbation: norm contract and degenerate fallback") {
    TeacherNet t = TeacherNet::init(4, 82);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, 2, 2));
    const auto gen = nets::GeneratorNet::init(83);
    Rng rng(84);
    const double nu = 2.0;

    Array z({3, nets::GeneratorNet::kEmbedDim});
    for (auto& v : z.data) v = rng.normal();
    Rng prng(85);
    const auto res = neighbor_perturbations(gen, z, q, t, nu, prng);
    for (const auto& r : res) {
        double n = 0.0;
        for (double v : r.eps.data) n += v * v;
        CHECK(std::sqrt(n) == doctest::Approx(nu).epsilon(1e-9));
    }

    // identical nets: per-sample gradients vanish, rows fall back
    QuantNet qid = init_quantnet(t, BitsConfig::uniform(t, kNoQuantBits, kNoQuantBits));
    Rng prng2(86);
    const auto res2 = neighbor_perturbations(gen, z, qid, t, nu, prng2);
    for (const auto& r : res2) {
        CHECK(r.fell_back);
        double n = 0.0;
        for (double v : r.eps.data) n += v * v;
        CHECK(std::sqrt(n) == doctest::Approx(nu).epsilon(1e-9));
    }
}

TEST_CASE("literal self-distance expression has vanishing embedding gradient") {
    TeacherNet t = TeacherNet::init(4, 87);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, 2, 2));
    const auto gen = nets::GeneratorNet::init(88);
    Rng rng(89);

    for (int rep = 0; rep < 3; ++rep) {
        Array z({2, nets::GeneratorNet::kEmbedDim});
        for (auto& v : z.data) v = rng.normal();

        Graph g;
        Tensor zt = g.leaf(z, true);
        Tensor x = generator_forward(g, gen, zt).images;
        const auto tt = nets::teacher_forward(g, t, x, {nets::BnMode::Eval, false, false});
        quant::QuantTrace qt = quant_forward(g, q, x);
        Tensor m = per_sample_grad_matrix_t(qt, tt);
        // D(g(z), g(z)) with both sides live, as literally written
        Tensor sq = sum_axes(mul(m, m), 0b10, true);
        Tensor cosr = div(sq, sqrt_(mul(sq, sq)));
        Tensor dsum = sum(affine(cosr, -1.0, 1.0));
        const Array gz = g.grad(dsum, {zt})[0].val();
        double n = 0.0;
        for (double v : gz.data) n += v * v;
        CHECK(std::sqrt(n) < 1e-8);
    }
}

TEST_CASE("generation loss: lambda1 = lambda2 = 0 equals the statistics loss exactly") {
    TeacherNet t = TeacherNet::init(4, 90);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, 2, 2));
    const auto gen = nets::GeneratorNet::init(91);
    Rng rng(92);
    Array z({3, nets::GeneratorNet::kEmbedDim});
    for (auto& v : z.data) v = rng.normal();

    Graph g;
    const auto parts = generation_loss_t(g, gen, g.constant(z), nullptr, q, t, 0.0, 0.0, 0.0, nullptr);
    Graph g2;
    Tensor img = generator_forward(g2, gen, g2.constant(z)).images;
    const double bn = bn_loss_t(g2, t, img).item();
    CHECK(parts.total.item() == bn);
}

TEST_CASE("pool gradient cosine") {
    std::vector<GradVector> pool;
    GradVector a, b, c;
    a.values = Array({2}, {1, 0});
    b.values = Array({2}, {0, 1});
    c.values = Array({2}, {-1, 0});
    pool = {a, b, c};  // aggregate (0, 1)
    CHECK(pool_gradient_cosine(pool, {0, 1, 2}) == doctest::Approx(1.0).epsilon(1e-12));
    // subset {0} has aggregate (1,0), orthogonal to the pool aggregate
    CHECK(pool_gradient_cosine(pool, {0}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(pool_gradient_cosine(pool, {0, 2}), Error);  // zero aggregate
}

TEST_CASE("losses are differentiable: finite-difference spot checks") {
    // small nets keep the finite-difference loops fast
    TeacherNet t = TeacherNet::init(3, 93, {2, 3}, 2, 8, 8);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, 3, 3));
    Rng rng(94);

    // reconstruction loss wrt input
    const Array x = random_array({2, 2, 8, 8}, rng, 0.05, 1.0);
    const auto recon_builder = [&](Graph& g, const std::vector<Tensor>& in) {
        return reconstruction_loss_t(g, q, t, in[0]);
    };
    CHECK(test::grad_vs_fd(recon_builder, {x}) < 1e-4);

    // statistics-matching loss wrt input
    const auto bn_builder = [&](Graph& g, const std::vector<Tensor>& in) { return bn_loss_t(g, t, in[0]); };
    CHECK(test::grad_vs_fd(bn_builder, {x}) < 1e-4);
}

TEST_SUITE_END();
