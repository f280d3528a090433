#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "core/array.hpp"
#include "core/dataset.hpp"
#include "synthesis/synthesis.hpp"

namespace sadag::harness {

// Provenance block appended to every artifact file: seed, config hash and
// run flags. Loaders tolerate its absence (hand-made files).
using Provenance = synth::Provenance;

// Checkpoint ("SADG"): version, tensor count, then per tensor name/rank/dims
// and a binary32 little-endian payload, plus the trailing provenance block.
void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, const Array*>>& tensors,
                     const Provenance& prov);
struct Checkpoint {
    std::vector<std::pair<std::string, Array>> tensors;
    std::optional<Provenance> prov;

    const Array& get(const std::string& name) const;
    bool has(const std::string& name) const;
};
Checkpoint load_checkpoint(const std::string& path);

// Dataset ("SADD"): version, N, C, H, W, binary32 image payload, N u16
// labels, trailing provenance block.
void save_dataset(const std::string& path, const LabeledDataset& ds, const Provenance& prov);
struct LoadedDataset {
    LabeledDataset data;
    std::optional<Provenance> prov;
};
LoadedDataset load_dataset(const std::string& path);

// Fixed-schema metrics CSV; the header is written when the file is created.
inline constexpr const char* kMetricsHeader = "run_id,mode,seed,bits_w,bits_a,top1,recon,sharpness,rho,wall_s";
struct MetricsRow {
    std::string run_id;
    std::string mode;
    uint64_t seed = 0;
    int bits_w = 0, bits_a = 0;
    double top1 = 0.0, recon = 0.0, sharpness = 0.0, rho = 0.0, wall_s = 0.0;

    std::string to_line() const;
};
void append_metrics(const std::string& path, const MetricsRow& row);

// write-temp-then-rename
void atomic_write(const std::string& path, const std::string& bytes);

}  // namespace sadag::harness
