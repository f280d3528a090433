#pragma once

#include "core/dataset.hpp"
#include "core/rng.hpp"

namespace sadag::harness {

struct ToyDataParams {
    int64_t classes = 4;
    int64_t count = 2048;
    int64_t channels = 3, height = 16, width = 16;
};

// Procedural "textured blobs": a class-colored Gaussian blob at a random
// position plus a class-frequency sinusoidal texture, clamped to [-1, 1].
// Every sample is a pure function of (seed, split, index), so train/val
// splits are disjoint by construction and files are byte-reproducible.
LabeledDataset make_toy_dataset(const ToyDataParams& params, uint64_t seed, const std::string& split);

}  // namespace sadag::harness
