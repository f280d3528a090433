#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "harness/runner.hpp"
#include "support/testutil.hpp"

using namespace sadag;
using namespace sadag::harness;

namespace {

std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("harness");

TEST_CASE("empty config text yields the documented defaults") {
    const ExperimentConfig cfg = parse_config_text("");
    CHECK(cfg.nu == 2.0);
    CHECK(cfg.zeta == 0.0);
    CHECK(cfg.lambda1 == 1.0);
    CHECK(cfg.lambda2 == 1.0);
    CHECK(cfg.lr_g == 0.1);
    CHECK(cfg.lr_z == 0.01);
    CHECK(cfg.batch_gen == 128);
    CHECK(cfg.batch_cal == 32);
    CHECK(cfg.t == 1024);
    CHECK(cfg.mode == "sadag");
    CHECK(cfg.bits_w == 2);
    CHECK(cfg.bits_a == 2);
}

TEST_CASE("config rejections name the key and line") {
    CHECK_THROWS_WITH_AS(parse_config_text("nu = -1"), doctest::Contains("nu"), Error);
    CHECK_THROWS_WITH_AS(parse_config_text("\n\nwhatever = 3\n"), doctest::Contains(":3"), Error);
    CHECK_THROWS_WITH_AS(parse_config_text("whatever = 3"), doctest::Contains("unknown key"), Error);
    CHECK_THROWS_WITH_AS(parse_config_text("t = soon"), doctest::Contains("not an integer"), Error);
    CHECK_THROWS_WITH_AS(parse_config_text("mode = party"), doctest::Contains("mode"), Error);
    CHECK_THROWS_AS(parse_config_text("t 12"), Error);
    CHECK_THROWS_AS(parse_config_text("= 12"), Error);
    CHECK_THROWS_AS(parse_config_text("t ="), Error);
    CHECK_THROWS_AS(parse_config_text("radii = 0.1,,0.2"), Error);
}

TEST_CASE("comments, spacing and overrides parse") {
    const ExperimentConfig cfg = parse_config_text("# header\n  t = 64  # trailing\n\nnu=3.5\nt = 128\n");
    CHECK(cfg.t == 128);
    CHECK(cfg.nu == 3.5);
}

TEST_CASE("config hash covers settings but not seed or mode") {
    ExperimentConfig a, b;
    b.seed = 99;
    b.mode = "bn-only";
    CHECK(config_hash(a) == config_hash(b));
    b.lambda2 = 0.5;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("toy dataset: determinism, balance, split disjointness") {
    ToyDataParams p;
    p.count = 64;
    const LabeledDataset a = make_toy_dataset(p, 5, "train");
    const LabeledDataset b = make_toy_dataset(p, 5, "train");
    CHECK(bit_equal(a.images, b.images));
    CHECK(a.labels == b.labels);

    std::vector<int> hist(4, 0);
    for (uint16_t l : a.labels) hist[l]++;
    const auto [mn, mx] = std::minmax_element(hist.begin(), hist.end());
    CHECK(*mx - *mn <= 1);

    // same index, different split tag: distinct samples by construction
    const LabeledDataset v = make_toy_dataset(p, 5, "val");
    CHECK_FALSE(bit_equal(a.images, v.images));

    // bounded pixels
    for (double x : a.images.data) CHECK(std::fabs(x) <= 1.0);

    // same seed writes byte-identical files
    Provenance prov;
    save_dataset("/tmp/sadag_toy_a.sadd", a, prov);
    save_dataset("/tmp/sadag_toy_b.sadd", b, prov);
    CHECK(slurp_file("/tmp/sadag_toy_a.sadd") == slurp_file("/tmp/sadag_toy_b.sadd"));
    std::filesystem::remove("/tmp/sadag_toy_a.sadd");
    std::filesystem::remove("/tmp/sadag_toy_b.sadd");
}

TEST_CASE("checkpoint format: canonical round-trip, corruption, precision") {
    Rng rng(61);
    const Array w = test::random_array({3, 4}, rng);
    const Array v = test::random_array({7}, rng);
    Provenance prov;
    prov.seed = 11;
    prov.config_hash = 22;

    const std::string p1 = "/tmp/sadag_ck1.sadg", p2 = "/tmp/sadag_ck2.sadg";
    save_checkpoint(p1, {{"w", &w}, {"v", &v}}, prov);
    Checkpoint ck = load_checkpoint(p1);
    CHECK(ck.prov->seed == 11);
    CHECK(ck.tensors.size() == 2);
    // binary32 precision: relative 1e-6
    for (int64_t i = 0; i < w.size(); ++i)
        CHECK(ck.get("w")[i] == doctest::Approx(w[i]).epsilon(1e-6));

    // save(load(x)) is byte-identical to the canonical form
    save_checkpoint(p2, {{"w", &ck.get("w")}, {"v", &ck.get("v")}}, *ck.prov);
    Checkpoint ck2 = load_checkpoint(p2);
    save_checkpoint(p1, {{"w", &ck2.get("w")}, {"v", &ck2.get("v")}}, *ck2.prov);
    CHECK(slurp_file(p1) == slurp_file(p2));

    // corrupted magic
    {
        std::string bytes = slurp_file(p1);
        bytes[0] = 'X';
        atomic_write(p1, bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(p1), doctest::Contains("magic"), Error);
    }
    // truncation reported with an offset
    {
        std::string bytes = slurp_file(p2);
        atomic_write(p1, bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_WITH_AS(load_checkpoint(p1), doctest::Contains("offset"), Error);
    }
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("teacher and quantized-net checkpoints reconstruct the nets") {
    nets::TeacherNet t = nets::TeacherNet::init(4, 71);
    Provenance prov;
    prov.config_hash = 7;
    const std::string tp = "/tmp/sadag_teacher.sadg";
    save_teacher(tp, t, prov);
    LoadedTeacher lt = load_teacher(tp);
    CHECK(lt.net.blocks.size() == t.blocks.size());
    CHECK(lt.net.classes == t.classes);
    CHECK(lt.prov->config_hash == 7);

    // loaded teacher re-saves byte-identically (binary32 canonical form)
    const std::string tp2 = "/tmp/sadag_teacher2.sadg";
    save_teacher(tp2, lt.net, prov);
    CHECK(slurp_file(tp) == slurp_file(tp2));

    auto q = quant::init_quantnet(lt.net, quant::BitsConfig::uniform(lt.net, 2, 2));
    // calibrate lightly so V and activation ranges carry state
    LabeledDataset data;
    Rng rng(72);
    data.images = test::random_array({8, 3, 16, 16}, rng);
    data.labels.assign(8, 0);
    calib::CalibConfig ccfg;
    ccfg.n_q = 3;
    calib::calibrate(q, lt.net, data, ccfg);

    const std::string qp = "/tmp/sadag_quant.sadg";
    save_quantnet(qp, q, prov);
    LoadedQuant lq = load_quantnet(qp);
    CHECK(lq.net.wq.size() == q.wq.size());
    CHECK(lq.net.aq[0].frozen == q.aq[0].frozen);
    // forwards agree: the loaded net is the round-tripped one, so compare
    // against a round-tripped in-memory copy
    const std::string qp2 = "/tmp/sadag_quant2.sadg";
    save_quantnet(qp2, lq.net, prov);
    CHECK(slurp_file(qp) == slurp_file(qp2));

    std::filesystem::remove(tp);
    std::filesystem::remove(tp2);
    std::filesystem::remove(qp);
    std::filesystem::remove(qp2);
}

TEST_CASE("metrics CSV keeps a fixed schema") {
    const std::string mp = "/tmp/sadag_metrics.csv";
    std::filesystem::remove(mp);
    MetricsRow row;
    row.run_id = "test-1";
    row.mode = "sadag";
    row.seed = 3;
    row.bits_w = 2;
    row.bits_a = 2;
    row.top1 = 0.5;
    append_metrics(mp, row);
    append_metrics(mp, row);
    std::ifstream in(mp);
    std::string line;
    std::getline(in, line);
    CHECK(line == kMetricsHeader);
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        CHECK(line.find("test-1,sadag,3,2,2,0.5") == 0);
    }
    CHECK(rows == 2);
    std::filesystem::remove(mp);
}

TEST_SUITE_END();
