#include "harness/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace sadag::harness {

namespace {

constexpr uint32_t kFormatVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& out, double v) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}
void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t at = 0;
    const std::string& path;

    void need(size_t n, const char* what) const {
        SADAG_CHECK(at + n <= buf.size(), path, ": truncated file at offset ", at, " reading ", what);
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
        at += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
        at += 8;
        return v;
    }
    uint16_t u16(const char* what) {
        need(2, what);
        const uint16_t v = static_cast<uint16_t>(static_cast<unsigned char>(buf[at]) |
                                                 (static_cast<unsigned char>(buf[at + 1]) << 8));
        at += 2;
        return v;
    }
    double f32(const char* what) {
        const uint32_t bits = u32(what);
        float f;
        std::memcpy(&f, &bits, 4);
        return static_cast<double>(f);
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(at, n);
        at += n;
        return s;
    }
    bool at_end() const { return at == buf.size(); }
};

void put_prov(std::string& out, const Provenance& p) {
    out += "PROV";
    put_u64(out, p.seed);
    put_u64(out, p.config_hash);
    uint32_t flags = 0;
    if (p.warmup_only) flags |= 1u;
    if (p.fallback_warning) flags |= 2u;
    put_u32(out, flags);
    put_u32(out, p.fallback_count);
}

std::optional<Provenance> read_prov(Reader& r) {
    if (r.at_end()) return std::nullopt;
    const std::string tag = r.bytes(4, "provenance tag");
    SADAG_CHECK(tag == "PROV", r.path, ": unexpected trailing bytes at offset ", r.at - 4);
    Provenance p;
    p.seed = r.u64("provenance seed");
    p.config_hash = r.u64("provenance hash");
    const uint32_t flags = r.u32("provenance flags");
    p.warmup_only = flags & 1u;
    p.fallback_warning = flags & 2u;
    p.fallback_count = r.u32("provenance fallback count");
    SADAG_CHECK(r.at_end(), r.path, ": trailing bytes after provenance block");
    return p;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    SADAG_CHECK(in.good(), path, ": cannot open");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

}  // namespace

void atomic_write(const std::string& path, const std::string& bytes) {
    SADAG_CHECK(!path.empty(), "empty output path");
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        SADAG_CHECK(out.good(), tmp, ": cannot open for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        SADAG_CHECK(out.good(), tmp, ": write failed");
    }
    SADAG_CHECK(std::rename(tmp.c_str(), path.c_str()) == 0, path, ": rename from temporary failed");
}

void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, const Array*>>& tensors,
                     const Provenance& prov) {
    std::string out;
    out += "SADG";
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, arr] : tensors) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<uint32_t>(arr->shape.size()));
        for (int64_t d : arr->shape) {
            SADAG_CHECK(d >= 0 && d <= UINT32_MAX, "tensor ", name, " dimension ", d, " exceeds format limit");
            put_u32(out, static_cast<uint32_t>(d));
        }
        for (double v : arr->data) put_f32(out, v);
    }
    put_prov(out, prov);
    atomic_write(path, out);
}

const Array& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, a] : tensors)
        if (n == name) return a;
    SADAG_THROW("checkpoint has no tensor named '", name, "'");
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, a] : tensors)
        if (n == name) return true;
    return false;
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string buf = slurp(path);
    Reader r{buf, 0, path};
    SADAG_CHECK(r.bytes(4, "magic") == "SADG", path, ": bad magic (not a checkpoint file)");
    const uint32_t version = r.u32("version");
    SADAG_CHECK(version == kFormatVersion, path, ": unsupported format version ", version);
    const uint32_t count = r.u32("tensor count");

    Checkpoint ck;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = r.u32("name length");
        SADAG_CHECK(name_len <= 4096, path, ": implausible name length ", name_len, " at offset ", r.at - 4);
        const std::string name = r.bytes(name_len, "name");
        const uint32_t rank = r.u32("rank");
        SADAG_CHECK(rank <= 8, path, ": implausible rank ", rank, " for tensor ", name);
        Shape shape;
        int64_t n = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape.push_back(static_cast<int64_t>(r.u32("dim")));
            n *= shape.back();
            SADAG_CHECK(n <= (int64_t{1} << 32), path, ": dimension overflow for tensor ", name);
        }
        Array arr(shape);
        for (int64_t j = 0; j < arr.size(); ++j) arr[j] = r.f32("payload");
        ck.tensors.push_back({name, std::move(arr)});
    }
    ck.prov = read_prov(r);
    return ck;
}

void save_dataset(const std::string& path, const LabeledDataset& ds, const Provenance& prov) {
    SADAG_CHECK(ds.images.shape.size() == 4, "dataset images must be (N,C,H,W)");
    SADAG_CHECK(static_cast<int64_t>(ds.labels.size()) == ds.count(), "dataset has ", ds.labels.size(),
                " labels for ", ds.count(), " images");
    std::string out;
    out += "SADD";
    put_u32(out, kFormatVersion);
    for (int64_t d : ds.images.shape) put_u32(out, static_cast<uint32_t>(d));
    for (double v : ds.images.data) put_f32(out, v);
    for (uint16_t l : ds.labels) put_u16(out, l);
    put_prov(out, prov);
    atomic_write(path, out);
}

LoadedDataset load_dataset(const std::string& path) {
    const std::string buf = slurp(path);
    Reader r{buf, 0, path};
    SADAG_CHECK(r.bytes(4, "magic") == "SADD", path, ": bad magic (not a dataset file)");
    const uint32_t version = r.u32("version");
    SADAG_CHECK(version == kFormatVersion, path, ": unsupported format version ", version);
    const int64_t n = r.u32("N"), c = r.u32("C"), h = r.u32("H"), w = r.u32("W");
    SADAG_CHECK(n * c * h * w <= (int64_t{1} << 32), path, ": dimension overflow");

    LoadedDataset ld;
    ld.data.images = Array({n, c, h, w});
    for (int64_t i = 0; i < ld.data.images.size(); ++i) ld.data.images[i] = r.f32("image payload");
    ld.data.labels.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) ld.data.labels[static_cast<size_t>(i)] = r.u16("label");
    ld.prov = read_prov(r);
    return ld;
}

std::string MetricsRow::to_line() const {
    return detail::msg(run_id, ",", mode, ",", seed, ",", bits_w, ",", bits_a, ",", top1, ",", recon, ",",
                       sharpness, ",", rho, ",", wall_s);
}

void append_metrics(const std::string& path, const MetricsRow& row) {
    const bool fresh = !std::ifstream(path).good();
    std::ofstream out(path, std::ios::app);
    SADAG_CHECK(out.good(), path, ": cannot open metrics file");
    if (fresh) out << kMetricsHeader << "\n";
    out << row.to_line() << "\n";
    SADAG_CHECK(out.good(), path, ": metrics write failed");
}

}  // namespace sadag::harness
