#include "harness/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace sadag::harness {

synth::GenerationConfig ExperimentConfig::generation() const {
    synth::GenerationConfig g;
    g.count = t;
    g.warmup_iters = n_w;
    g.gen_epochs = n_g;
    g.nu = nu;
    g.zeta = zeta;
    g.lambda1 = lambda1;
    g.lambda2 = lambda2;
    g.lr_g = lr_g;
    g.lr_z = lr_z;
    g.batch = batch_gen;
    g.seed = seed;
    return g;
}

calib::CalibConfig ExperimentConfig::calibration() const {
    calib::CalibConfig c;
    c.n_q = n_q;
    c.alpha = alpha;
    c.batch = batch_cal;
    c.rho_eval = rho_eval;
    c.continuous_weights = continuous_weights;
    c.seed = seed;
    return c;
}

std::vector<double> ExperimentConfig::radii_list() const {
    std::vector<double> out;
    std::stringstream ss(radii);
    std::string part;
    while (std::getline(ss, part, ',')) {
        SADAG_CHECK(!part.empty(), "empty entry in radii list '", radii, "'");
        size_t used = 0;
        const double v = std::stod(part, &used);
        SADAG_CHECK(used == part.size(), "bad radius '", part, "'");
        out.push_back(v);
    }
    SADAG_CHECK(!out.empty(), "radii list is empty");
    return out;
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

struct Parser {
    ExperimentConfig cfg;
    const std::string& origin;
    int line = 0;

    [[noreturn]] void fail(const std::string& what) const {
        SADAG_THROW(origin, ":", line, ": ", what);
    }

    int64_t to_int(const std::string& key, const std::string& v) const {
        try {
            size_t used = 0;
            const int64_t r = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (...) {
            fail("value '" + v + "' for key '" + key + "' is not an integer");
        }
    }
    double to_double(const std::string& key, const std::string& v) const {
        try {
            size_t used = 0;
            const double r = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (...) {
            fail("value '" + v + "' for key '" + key + "' is not a number");
        }
    }

    void apply(const std::string& key, const std::string& v) {
        ExperimentConfig& c = cfg;
        if (key == "seed") c.seed = static_cast<uint64_t>(to_int(key, v));
        else if (key == "mode") c.mode = v;
        else if (key == "bits_w") c.bits_w = static_cast<int>(to_int(key, v));
        else if (key == "bits_a") c.bits_a = static_cast<int>(to_int(key, v));
        else if (key == "t") c.t = to_int(key, v);
        else if (key == "n_w") c.n_w = to_int(key, v);
        else if (key == "n_g") c.n_g = to_int(key, v);
        else if (key == "n_q") c.n_q = to_int(key, v);
        else if (key == "nu") c.nu = to_double(key, v);
        else if (key == "zeta") c.zeta = to_double(key, v);
        else if (key == "lambda1") c.lambda1 = to_double(key, v);
        else if (key == "lambda2") c.lambda2 = to_double(key, v);
        else if (key == "lr_g") c.lr_g = to_double(key, v);
        else if (key == "lr_z") c.lr_z = to_double(key, v);
        else if (key == "alpha") c.alpha = to_double(key, v);
        else if (key == "batch_gen") c.batch_gen = to_int(key, v);
        else if (key == "batch_cal") c.batch_cal = to_int(key, v);
        else if (key == "rho_eval") c.rho_eval = to_double(key, v);
        else if (key == "continuous_weights") c.continuous_weights = to_int(key, v) != 0;
        else if (key == "ds_classes") c.ds_classes = to_int(key, v);
        else if (key == "ds_train") c.ds_train = to_int(key, v);
        else if (key == "ds_val") c.ds_val = to_int(key, v);
        else if (key == "teacher_epochs") c.teacher_epochs = to_int(key, v);
        else if (key == "teacher_floor") c.teacher_floor = to_double(key, v);
        else if (key == "seeds") c.seeds = to_int(key, v);
        else if (key == "select_pool") c.select_pool = to_int(key, v);
        else if (key == "select_k") c.select_k = to_int(key, v);
        else if (key == "radii") c.radii = v;
        else fail("unknown key '" + key + "'");
    }
};

void validate(const ExperimentConfig& c) {
    const auto req = [&](bool ok, const char* key, const std::string& why) {
        SADAG_CHECK(ok, "config key '", key, "': ", why);
    };
    req(c.mode == "sadag" || c.mode == "bn-only" || c.mode == "select" || c.mode == "sharpness", "mode",
        "must be sadag, bn-only, select or sharpness (got '" + c.mode + "')");
    req(c.bits_w >= 2 && c.bits_w <= 32, "bits_w", "must be in [2, 32]");
    req(c.bits_a >= 2 && c.bits_a <= 32, "bits_a", "must be in [2, 32]");
    req(c.t >= 1, "t", "must be >= 1");
    req(c.n_w >= 0, "n_w", "must be >= 0");
    req(c.n_g >= 1, "n_g", "must be >= 1");
    req(c.n_q >= 1, "n_q", "must be >= 1");
    req(c.nu > 0.0, "nu", "must be > 0");
    req(c.zeta >= 0.0, "zeta", "must be >= 0");
    req(c.lambda1 >= 0.0, "lambda1", "must be >= 0");
    req(c.lambda2 >= 0.0, "lambda2", "must be >= 0");
    req(c.lr_g > 0.0, "lr_g", "must be > 0");
    req(c.lr_z > 0.0, "lr_z", "must be > 0");
    req(c.alpha > 0.0, "alpha", "must be > 0");
    req(c.batch_gen >= 2, "batch_gen", "must be >= 2");
    req(c.batch_cal >= 1, "batch_cal", "must be >= 1");
    req(c.rho_eval > 0.0, "rho_eval", "must be > 0");
    req(c.ds_classes >= 2, "ds_classes", "must be >= 2");
    req(c.ds_train >= 2, "ds_train", "must be >= 2");
    req(c.ds_val >= 2, "ds_val", "must be >= 2");
    req(c.teacher_epochs >= 0, "teacher_epochs", "must be >= 0");
    req(c.teacher_floor >= 0.0 && c.teacher_floor <= 1.0, "teacher_floor", "must be in [0, 1]");
    req(c.seeds >= 1, "seeds", "must be >= 1");
    req(c.select_pool >= 1, "select_pool", "must be >= 1");
    req(c.select_k >= 1 && c.select_k <= c.select_pool, "select_k", "must be in [1, select_pool]");
    (void)c.radii_list();
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    Parser p{ExperimentConfig{}, origin};
    std::stringstream ss(text);
    std::string raw;
    while (std::getline(ss, raw)) {
        ++p.line;
        std::string line = raw;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) p.fail("expected 'key = value', got '" + trim(raw) + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) p.fail("missing key before '='");
        if (value.empty()) p.fail("missing value for key '" + key + "'");
        p.apply(key, value);
    }
    validate(p.cfg);
    return p.cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    SADAG_CHECK(in.good(), path, ": cannot open config");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text, path);
}

std::string canonical_config(const ExperimentConfig& c) {
    // sorted key order; excludes seed and mode
    return detail::msg(
        "alpha=", c.alpha, "\nbatch_cal=", c.batch_cal, "\nbatch_gen=", c.batch_gen, "\nbits_a=", c.bits_a,
        "\nbits_w=", c.bits_w, "\ncontinuous_weights=", c.continuous_weights ? 1 : 0, "\nds_classes=", c.ds_classes,
        "\nds_train=", c.ds_train, "\nds_val=", c.ds_val, "\nlambda1=", c.lambda1, "\nlambda2=", c.lambda2,
        "\nlr_g=", c.lr_g, "\nlr_z=", c.lr_z, "\nn_g=", c.n_g, "\nn_q=", c.n_q, "\nn_w=", c.n_w, "\nnu=", c.nu,
        "\nradii=", c.radii, "\nrho_eval=", c.rho_eval, "\nseeds=", c.seeds, "\nselect_k=", c.select_k,
        "\nselect_pool=", c.select_pool, "\nt=", c.t, "\nteacher_epochs=", c.teacher_epochs,
        "\nteacher_floor=", c.teacher_floor, "\nzeta=", c.zeta, "\n");
}

uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a64(canonical_config(cfg)); }

}  // namespace sadag::harness
