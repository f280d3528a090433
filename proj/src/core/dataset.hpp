#pragma once

#include <cstdint>
#include <vector>

#include "core/array.hpp"

namespace sadag {

// Images (N, C, H, W) with u16 labels. Synthetic calibration sets carry
// all-zero labels.
struct LabeledDataset {
    Array images;
    std::vector<uint16_t> labels;

    int64_t count() const { return images.shape.empty() ? 0 : images.shape[0]; }

    int64_t sample_size() const { return count() ? images.size() / count() : 0; }

    Array rows(const std::vector<int64_t>& idx) const {
        const int64_t ss = sample_size();
        Shape s = images.shape;
        s[0] = static_cast<int64_t>(idx.size());
        Array out(s);
        for (size_t i = 0; i < idx.size(); ++i) {
            SADAG_CHECK(idx[i] >= 0 && idx[i] < count(), "sample index ", idx[i], " out of range");
            std::copy(images.data.begin() + idx[i] * ss, images.data.begin() + (idx[i] + 1) * ss,
                      out.data.begin() + static_cast<int64_t>(i) * ss);
        }
        return out;
    }

    Array row(int64_t i) const { return rows({i}); }
};

}  // namespace sadag
