#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sadag {

// splitmix64; used to derive stream seeds and as the config/content hash mixer.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Derive an independent stream seed from (root seed, role tag, index).
inline uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t index = 0) {
    uint64_t s = root ^ fnv1a64(tag) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    (void)splitmix64(s);
    return splitmix64(s);
}

// mt19937_64 supplies the (standard-specified, hence portable) bit stream;
// the real-valued transforms are done here so results do not depend on the
// standard library's unspecified distribution algorithms.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t bits() { return eng_(); }

    // uniform in [0, 1)
    double u01() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

    // 64-bit Lemire-style bounded draw (n > 0)
    uint64_t below(uint64_t n) { return bits() % n; }

    // Box-Muller, pair-cached
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::vector<double> normal_vec(size_t n, double mean = 0.0, double stddev = 1.0);

    // Fisher-Yates over indices 0..n-1
    std::vector<int64_t> permutation(int64_t n);

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace sadag
