#include "harness/toydata.hpp"

#include <cmath>
#include <numbers>

namespace sadag::harness {

namespace {

void render_sample(Array& out, int64_t at, const ToyDataParams& p, uint16_t label, Rng& rng) {
    const double frac = static_cast<double>(label) / static_cast<double>(p.classes);
    const double cx = rng.uniform(0.3, 0.7) * static_cast<double>(p.width);
    const double cy = rng.uniform(0.3, 0.7) * static_cast<double>(p.height);
    const double blob_sigma = rng.uniform(2.0, 3.5);
    const double freq = 1.5 + static_cast<double>(label);
    const double orient = rng.uniform(0.0, std::numbers::pi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double co = std::cos(orient), so = std::sin(orient);

    for (int64_t k = 0; k < p.channels; ++k) {
        const double color = 0.7 * std::cos(2.0 * std::numbers::pi * frac +
                                            2.0 * std::numbers::pi * static_cast<double>(k) / 3.0);
        for (int64_t y = 0; y < p.height; ++y) {
            for (int64_t x = 0; x < p.width; ++x) {
                const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * blob_sigma * blob_sigma));
                const double tex = 0.35 * std::sin(2.0 * std::numbers::pi * freq *
                                                       (static_cast<double>(x) * co + static_cast<double>(y) * so) /
                                                       static_cast<double>(p.width) +
                                                   phase);
                double v = color * blob + tex + 0.05 * rng.normal();
                out[at + (k * p.height + y) * p.width + x] = std::min(1.0, std::max(-1.0, v));
            }
        }
    }
}

}  // namespace

LabeledDataset make_toy_dataset(const ToyDataParams& p, uint64_t seed, const std::string& split) {
    SADAG_CHECK(p.classes >= 2, "toy dataset needs at least 2 classes, got ", p.classes);
    SADAG_CHECK(p.count >= p.classes, "toy dataset count ", p.count, " below class count");
    LabeledDataset ds;
    ds.images = Array({p.count, p.channels, p.height, p.width});
    ds.labels.resize(static_cast<size_t>(p.count));
    const int64_t ss = p.channels * p.height * p.width;
    const std::string tag = "toy-" + split;
    for (int64_t i = 0; i < p.count; ++i) {
        const uint16_t label = static_cast<uint16_t>(i % p.classes);  // balanced within +-1
        ds.labels[static_cast<size_t>(i)] = label;
        Rng rng(derive_seed(seed, tag, static_cast<uint64_t>(i)));
        render_sample(ds.images, i * ss, p, label, rng);
    }
    return ds;
}

}  // namespace sadag::harness
