#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "quant/quantnet.hpp"
#include "support/testutil.hpp"

using namespace sadag;
using namespace sadag::quant;
using namespace sadag::ad;
using test::random_array;

namespace {

WeightQuantizer manual_quantizer(double scale, int64_t qmin, int64_t qmax, int bits = 2) {
    WeightQuantizer q;
    q.bits = bits;
    q.scale = scale;
    q.qmin = qmin;
    q.qmax = qmax;
    return q;
}

}  // namespace

TEST_SUITE_BEGIN("quant");

TEST_CASE("compute_scale hand cases") {
    {
        const auto si = compute_scale(Array({3}, {-1.0, 0.5, 2.0}), 2);
        CHECK(si.scale == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(si.qmin == 0);
        CHECK(si.qmax == 3);
    }
    {
        const auto si = compute_scale(Array({2}, {0.0, 1.0}), 8);
        CHECK(si.scale == doctest::Approx(1.0 / 255.0).epsilon(1e-15));
        CHECK(si.qmax == 255);
    }
    for (double a : {0.3, 1.0, 7.5}) {
        const auto si = compute_scale(Array({2}, {-a, a}), 2);
        CHECK(si.scale == doctest::Approx(2.0 * a / 3.0).epsilon(1e-15));
    }
    CHECK_THROWS_AS(compute_scale(Array({3}, {0.7, 0.7, 0.7}), 4), Error);
    CHECK_THROWS_AS(compute_scale(Array({2}, {0.0, 1.0}), 1), Error);
}

TEST_CASE("quantize_nearest hand cases and properties") {
    const WeightQuantizer q = manual_quantizer(0.5, 0, 3);
    CHECK(quantize_nearest(Array({1}, {0.6}), q)[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(quantize_nearest(Array({1}, {0.0}), q)[0] == 0.0);
    CHECK(quantize_nearest(Array({1}, {2.0}), q)[0] == doctest::Approx(1.5).epsilon(1e-15));

    Rng rng(31);
    const Array w = random_array({64}, rng, -1.0, 3.0);
    const Array once = quantize_nearest(w, q);
    const Array twice = quantize_nearest(once, q);
    CHECK(bit_equal(once, twice));  // idempotent

    // grid membership: v/s integral in [qmin, qmax]
    for (double v : once.data) {
        const double k = v / q.scale;
        CHECK(std::fabs(k - std::floor(k + 0.5)) < 1e-9);
        CHECK(k >= -1e-9);
        CHECK(k <= 3.0 + 1e-9);
    }

    // monotone in w
    Array sorted = w;
    std::sort(sorted.data.begin(), sorted.data.end());
    const Array qs = quantize_nearest(sorted, q);
    for (int64_t i = 1; i < qs.size(); ++i) CHECK(qs[i] >= qs[i - 1]);
}

TEST_CASE("quantize_adaround branch behavior") {
    const WeightQuantizer q = manual_quantizer(0.5, 0, 3);
    const Array w({3}, {0.6, 1.1, 0.2});
    // V -> +inf: h = 1, ceiling branch
    const Array up = quantize_adaround(w, Array({3}, 50.0), q);
    CHECK(up.data == std::vector<double>{1.0, 1.5, 0.5});
    // V -> -inf: h = 0, floor branch
    const Array dn = quantize_adaround(w, Array({3}, -50.0), q);
    CHECK(dn.data == std::vector<double>{0.5, 1.0, 0.0});
}

TEST_CASE("rounding regularizer") {
    // h hits exactly 0 / 1 at |V| >= ln(11)
    const Array v01({4}, {5.0, -5.0, 8.0, -3.0});
    CHECK(round_regularizer(v01, 2.0) == 0.0);
    // V = 0 gives h = 0.5 exactly
    CHECK(round_regularizer(Array({1}, {0.0}), 2.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(round_regularizer(Array({1}, {0.0}), 1.5), Error);

    // graph version agrees with the value version
    Rng rng(32);
    const Array v = random_array({20}, rng, -4.0, 4.0);
    Graph g;
    const double got = round_regularizer_t(g.leaf(v, true), 7.0).item();
    CHECK(got == doctest::Approx(round_regularizer(v, 7.0)).epsilon(1e-12));
}

TEST_CASE("straight-through contract: d(adaround)/dV = s * h'(V) where clip inactive") {
    Rng rng(33);
    const Array w = random_array({24}, rng, -1.0, 2.0);
    WeightQuantizer q = WeightQuantizer::build(w, 3, "t");
    Array shifted(w.shape);
    for (int64_t i = 0; i < w.size(); ++i) shifted[i] = w[i] - q.offset;
    // move V off its frac-init so h' is generic
    Array v = q.V;
    for (auto& x : v.data) x += rng.uniform(-0.5, 0.5);

    Graph g;
    Tensor vt = g.leaf(v, true);
    Tensor qt = quantize_adaround_t(g.constant(shifted), vt, q);
    const Array r = random_array(w.shape, rng);
    Tensor phi = sum(mul(qt, g.constant(r)));
    const Array gv = g.grad(phi, {vt})[0].val();

    // finite differences of the smooth surrogate with rounding frozen
    const Array frozen_floor = [&] {
        Array f(w.shape);
        for (int64_t i = 0; i < w.size(); ++i) f[i] = std::floor(shifted[i] / q.scale);
        return f;
    }();
    const auto surrogate = [&](const Array& vv) {
        double acc = 0.0;
        for (int64_t i = 0; i < vv.size(); ++i) {
            const double h = std::min(1.0, std::max(0.0, 1.2 / (1.0 + std::exp(-vv[i])) - 0.1));
            const double k = std::min(std::max(frozen_floor[i] + h, 0.0), static_cast<double>(q.qmax));
            acc += r[i] * q.scale * k;
        }
        return acc;
    };
    const Array fd = ad::finite_diff(surrogate, v, 1e-6);

    int checked = 0;
    for (int64_t i = 0; i < w.size(); ++i) {
        const double h = std::min(1.0, std::max(0.0, 1.2 / (1.0 + std::exp(-v[i])) - 0.1));
        const double hard = frozen_floor[i] + (h >= 0.5 ? 1.0 : 0.0);
        const bool clip_inactive = hard > 0.0 && hard < static_cast<double>(q.qmax);
        const bool h_interior = h > 1e-3 && h < 1.0 - 1e-3;
        if (!clip_inactive || !h_interior) continue;
        const double sig = 1.0 / (1.0 + std::exp(-v[i]));
        const double analytic = r[i] * q.scale * 1.2 * sig * (1.0 - sig);
        CHECK(gv[i] == doctest::Approx(analytic).epsilon(1e-9));
        CHECK(gv[i] == doctest::Approx(fd[i]).epsilon(1e-5));
        ++checked;
    }
    CHECK(checked > 5);
}

TEST_CASE("init_quantnet reproduces nearest rounding exactly") {
    const auto teacher = nets::TeacherNet::init(4, 7);
    QuantNet qn = init_quantnet(teacher, BitsConfig::uniform(teacher, 2, 2));

    for (size_t layer = 0; layer < qn.wq.size(); ++layer) {
        const Array& w = layer == teacher.blocks.size() ? teacher.fc_w : teacher.blocks[layer].w;
        const WeightQuantizer& q = qn.wq[layer];
        Array shifted(w.shape);
        for (int64_t i = 0; i < w.size(); ++i) shifted[i] = w[i] - q.offset;
        const Array nearest = quantize_nearest(shifted, q);
        const Array ada = quantize_adaround(shifted, q.V, q);
        CHECK(bit_equal(nearest, ada));
    }

    // whole-net forward agrees too (activation quantizers are not yet frozen)
    Rng rng(34);
    const Array x = random_array({2, 3, 16, 16}, rng);
    Graph g;
    QuantTrace tr = quant_forward(g, qn, g.constant(x));
    CHECK(all_finite(tr.logits.val()));
}

TEST_CASE("32-bit sentinel forward equals the reference net bit for bit") {
    const auto teacher = nets::TeacherNet::init(4, 8);
    QuantNet qn = init_quantnet(teacher, BitsConfig::uniform(teacher, kNoQuantBits, kNoQuantBits));
    Rng rng(35);
    const Array x = random_array({3, 3, 16, 16}, rng);

    Graph g;
    const auto tt = nets::teacher_forward(g, teacher, g.constant(x), {nets::BnMode::Eval, false, false});
    QuantTrace qt = quant_forward(g, qn, g.constant(x));
    CHECK(bit_equal(tt.logits.val(), qt.logits.val()));
    for (size_t l = 0; l < qt.layer_outputs.size(); ++l)
        CHECK(bit_equal(tt.layer_outputs[l].val(), qt.layer_outputs[l].val()));
}

TEST_CASE("2-bit layer has at most 4 distinct effective weight values") {
    const auto teacher = nets::TeacherNet::init(4, 9);
    QuantNet qn = init_quantnet(teacher, BitsConfig::uniform(teacher, 2, 2));
    // layer 1 is a body layer at 2 bits
    const Array eff = qn.effective_weight(1);
    std::set<double> distinct(eff.data.begin(), eff.data.end());
    CHECK(distinct.size() <= 4);
}

TEST_CASE("degenerate layer range is rejected with the layer name") {
    auto teacher = nets::TeacherNet::init(4, 10);
    for (auto& v : teacher.blocks[1].w.data) v = 0.25;
    CHECK_THROWS_WITH_AS(init_quantnet(teacher, BitsConfig::uniform(teacher, 2, 2)),
                         doctest::Contains("conv1"), Error);
}

TEST_CASE("activation quantizer freezes ranges and quantizes to the grid") {
    ActQuantizer aq;
    aq.bits = 3;
    Rng rng(36);
    const Array x = random_array({40}, rng, -0.5, 1.7);

    Graph g;
    // pass-through until frozen
    Tensor before = act_quantize_t(g.constant(x), aq);
    CHECK(bit_equal(before.val(), x));

    aq.freeze_from(x, "t");
    CHECK(aq.lo < aq.hi);
    Tensor after = act_quantize_t(g.constant(x), aq);
    const double step = (aq.hi - aq.lo) / 7.0;
    for (int64_t i = 0; i < x.size(); ++i) {
        const double k = (after.val()[i] - aq.lo) / step;
        CHECK(std::fabs(k - std::floor(k + 0.5)) < 1e-9);
        CHECK(k > -1e-9);
        CHECK(k < 7.0 + 1e-9);
    }

    ActQuantizer degenerate;
    degenerate.bits = 4;
    CHECK_THROWS_AS(degenerate.freeze_from(Array({3}, 1.0), "t"), Error);
}

TEST_SUITE_END();
