#include <doctest.h>

#include <cmath>

#include "calib/calibration.hpp"
#include "support/testutil.hpp"

using namespace sadag;
using namespace sadag::calib;
using nets::TeacherNet;
using quant::BitsConfig;
using quant::init_quantnet;
using quant::kNoQuantBits;
using quant::QuantNet;
using test::random_array;

namespace {

LabeledDataset random_labeled(int64_t n, uint64_t seed, int64_t classes = 4) {
    LabeledDataset ds;
    Rng rng(seed);
    ds.images = random_array({n, 3, 16, 16}, rng);
    for (int64_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<uint16_t>(i % classes));
    return ds;
}

}  // namespace

TEST_SUITE_BEGIN("calibration");

TEST_CASE("zero step size leaves the net untouched") {
    const TeacherNet t = TeacherNet::init(4, 101);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, 2, 2));
    const QuantNet before = q;
    CalibConfig cfg;
    cfg.n_q = 5;
    cfg.alpha = 0.0;
    calibrate(q, t, random_labeled(16, 102), cfg);
    for (size_t i = 0; i < q.wq.size(); ++i)
        if (!q.wq[i].identity()) CHECK(bit_equal(q.wq[i].V, before.wq[i].V));
    // ranges still freeze on the first batch
    CHECK(q.aq[0].frozen);
}

TEST_CASE("calibration reduces the reconstruction loss and keeps weights on grid") {
    const TeacherNet t = TeacherNet::init(4, 103);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, 2, 2));
    const LabeledDataset data = random_labeled(32, 104);

    CalibConfig cfg;
    cfg.n_q = 60;
    cfg.alpha = 0.02;
    cfg.seed = 9;
    const CalibStats stats = calibrate(q, t, data, cfg);
    CHECK(stats.loss_last < stats.loss_first);

    // post-calibration grid membership of every quantized layer
    for (size_t layer = 0; layer < q.wq.size(); ++layer) {
        const auto& wq = q.wq[layer];
        if (wq.identity()) continue;
        const Array eff = q.effective_weight(layer);
        for (int64_t i = 0; i < eff.size(); ++i) {
            const double k = (eff[i] - wq.offset) / wq.scale;
            CHECK(std::fabs(k - std::floor(k + 0.5)) < 1e-9);
            CHECK(k > -1e-9);
            CHECK(k < static_cast<double>(wq.qmax) + 1e-9);
        }
    }

    // teacher untouched
    const TeacherNet t2 = TeacherNet::init(4, 103);
    auto n1 = const_cast<TeacherNet&>(t).named_tensors();
    auto n2 = const_cast<TeacherNet&>(t2).named_tensors();
    for (size_t i = 0; i < n1.size(); ++i) CHECK(bit_equal(*n1[i].second, *n2[i].second));
}

TEST_CASE("calibrating the pass-through sentinel changes nothing") {
    const TeacherNet t = TeacherNet::init(4, 105);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, kNoQuantBits, kNoQuantBits));
    const LabeledDataset data = random_labeled(64, 106);
    const double acc_before = quant_accuracy(q, data);
    CalibConfig cfg;
    cfg.n_q = 10;
    calibrate(q, t, data, cfg);
    CHECK(quant_accuracy(q, data) == acc_before);
}

TEST_CASE("continuous-weight mode performs the literal parameter update") {
    const TeacherNet t = TeacherNet::init(4, 107);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, kNoQuantBits, kNoQuantBits));
    q.base.fc_b[0] += 1.0;  // make the loss nonzero through the fc layer
    const LabeledDataset data = random_labeled(8, 108);

    CalibConfig cfg;
    cfg.n_q = 30;
    cfg.alpha = 0.05;
    cfg.continuous_weights = true;
    const CalibStats st = calibrate(q, t, data, cfg);
    CHECK(st.loss_last < st.loss_first);
}

TEST_CASE("evaluate is pure and reports chance level for a random net") {
    const TeacherNet t = TeacherNet::init(4, 109);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, 4, 4));
    const LabeledDataset ds = random_labeled(512, 110);

    const EvalReport a = evaluate_quant(q, t, ds, 0.05);
    const EvalReport b = evaluate_quant(q, t, ds, 0.05);
    CHECK(a.top1 == b.top1);
    CHECK(a.recon == b.recon);
    CHECK(a.sharpness.perturbed == b.sharpness.perturbed);
    CHECK(a.top1 == doctest::Approx(0.25).epsilon(0.45));

    const EvalReport self = evaluate_teacher(t, ds);
    CHECK(self.recon == 0.0);
    CHECK(self.sharpness.sharpness() == 0.0);

    CHECK_THROWS_AS(evaluate_quant(q, t, LabeledDataset{}, 0.05), Error);
}

TEST_CASE("rho = 0 probe reports exactly zero sharpness") {
    const TeacherNet t = TeacherNet::init(4, 111);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, 2, 2));
    Rng rng(112);
    const Array x = random_array({4, 3, 16, 16}, rng);
    const auto probe = losses::sam_loss(q, t, x, 0.0);
    CHECK(probe.sharpness() == 0.0);
}

TEST_CASE("subset selection: full set, determinism, greedy near brute force") {
    const TeacherNet t = TeacherNet::init(4, 113);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, 2, 2));
    const LabeledDataset pool = random_labeled(8, 114);

    const auto full = select_subset(pool, 8, q, t);
    CHECK(full.size() == 8);
    const auto grads = losses::per_sample_fc_gradients(q, t, pool.images);
    CHECK(losses::pool_gradient_cosine(grads, full) == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(select_subset(pool, 0, q, t), Error);
    CHECK_THROWS_AS(select_subset(pool, 9, q, t), Error);

    const auto g1 = select_subset(pool, 4, q, t);
    const auto g2 = select_subset(pool, 4, q, t);
    CHECK(g1 == g2);

    // exhaustive oracle over all C(8,4) = 70 subsets
    double best = -2.0;
    std::vector<int64_t> idx{0, 1, 2, 3};
    for (int a = 0; a < 8; ++a)
        for (int b = a + 1; b < 8; ++b)
            for (int c = b + 1; c < 8; ++c)
                for (int d = c + 1; d < 8; ++d)
                    best = std::max(best, losses::pool_gradient_cosine(grads, {a, b, c, d}));
    const double greedy_cos = losses::pool_gradient_cosine(grads, g1);
    CHECK(greedy_cos >= best - 0.05);
    CHECK(greedy_cos <= best + 1e-12);
}

TEST_CASE("sharpness curve validation and purity") {
    const TeacherNet t = TeacherNet::init(4, 115);
    QuantNet q = init_quantnet(t, BitsConfig::uniform(t, 3, 3));
    Rng rng(116);
    const Array x = random_array({4, 3, 16, 16}, rng);

    CHECK_THROWS_AS(measure_sharpness_curve(q, t, x, {}), Error);
    CHECK_THROWS_AS(measure_sharpness_curve(q, t, x, {0.1, 0.05}), Error);
    CHECK_THROWS_AS(measure_sharpness_curve(q, t, x, {-0.1, 0.05}), Error);

    const auto p1 = measure_sharpness_curve(q, t, x, {0.01, 0.02});
    const auto p2 = measure_sharpness_curve(q, t, x, {0.01, 0.02});
    CHECK(p1.size() == 2);
    for (size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i].perturbed == p2[i].perturbed);
        CHECK(p1[i].base == p2[i].base);
    }
}

TEST_SUITE_END();
