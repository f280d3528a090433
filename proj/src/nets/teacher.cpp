#include "nets/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nets/optim.hpp"

namespace sadag::nets {

using namespace sadag::ad;

TeacherNet TeacherNet::init(int64_t classes, uint64_t seed, const std::vector<int64_t>& channels, int64_t in_ch,
                            int64_t in_h, int64_t in_w) {
    SADAG_CHECK(classes >= 2, "teacher needs at least 2 classes, got ", classes);
    SADAG_CHECK(!channels.empty(), "teacher needs at least one conv block");
    TeacherNet net;
    net.classes = classes;
    net.in_ch = in_ch;
    net.in_h = in_h;
    net.in_w = in_w;
    Rng rng(derive_seed(seed, "teacher-init"));
    int64_t ci = net.in_ch;
    for (const int64_t co : channels) {
        ConvBlock b;
        const double stddev = std::sqrt(2.0 / static_cast<double>(ci * 9));
        b.w = Array({co, ci, 3, 3}, rng.normal_vec(static_cast<size_t>(co * ci * 9), 0.0, stddev));
        b.gamma = Array({co}, 1.0);
        b.beta = Array({co}, 0.0);
        b.run_mu = Array({co}, 0.0);
        b.run_sigma = Array({co}, 1.0);
        net.blocks.push_back(std::move(b));
        ci = co;
    }
    const int64_t d = ci;
    const double fc_std = std::sqrt(1.0 / static_cast<double>(d));
    net.fc_w = Array({d, classes}, rng.normal_vec(static_cast<size_t>(d * classes), 0.0, fc_std));
    net.fc_b = Array({classes}, 0.0);
    return net;
}

std::vector<Array*> TeacherNet::parameters() {
    std::vector<Array*> ps;
    for (ConvBlock& b : blocks) {
        ps.push_back(&b.w);
        ps.push_back(&b.gamma);
        ps.push_back(&b.beta);
    }
    ps.push_back(&fc_w);
    ps.push_back(&fc_b);
    return ps;
}

std::vector<std::pair<std::string, Array*>> TeacherNet::named_tensors() {
    std::vector<std::pair<std::string, Array*>> ts;
    for (size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        ts.push_back({p + "w", &blocks[i].w});
        ts.push_back({p + "gamma", &blocks[i].gamma});
        ts.push_back({p + "beta", &blocks[i].beta});
        ts.push_back({p + "run_mu", &blocks[i].run_mu});
        ts.push_back({p + "run_sigma", &blocks[i].run_sigma});
    }
    ts.push_back({"fc.w", &fc_w});
    ts.push_back({"fc.b", &fc_b});
    return ts;
}

ForwardTrace teacher_forward(Graph& g, const TeacherNet& net, Tensor x, const TeacherFwdOpts& opts) {
    SADAG_CHECK(x.shape().size() == 4 && x.shape()[0] >= 1, "teacher_forward needs a non-empty NCHW batch, got ",
                shape_str(x.shape()));
    SADAG_CHECK(x.shape()[1] == net.in_ch && x.shape()[2] == net.in_h && x.shape()[3] == net.in_w,
                "teacher_forward input ", shape_str(x.shape()), " does not match net input (", net.in_ch, ",",
                net.in_h, ",", net.in_w, ")");

    ForwardTrace tr;
    const auto param = [&](const Array& a) {
        Tensor t = g.leaf(a, opts.params_rg);
        if (opts.params_rg) tr.params.push_back(t);
        return t;
    };

    Tensor h = x;
    for (const ConvBlock& b : net.blocks) {
        Tensor w = param(b.w);
        Tensor gamma = param(b.gamma);
        Tensor beta = param(b.beta);
        Tensor pre = conv2d(h, w, 2, 1);

        Tensor bmu, bsigma;
        if (opts.want_batch_stats || opts.mode == BnMode::Train) {
            const int64_t c = pre.shape()[1];
            bmu = reshape(mean_axes(pre, 0b1101, true), {c});
            Tensor bvar = reshape(variance_axes(pre, 0b1101, true), {c});
            if (opts.mode == BnMode::Train) {
                for (double v : bvar.val().data)
                    SADAG_CHECK(v > 0.0, "degenerate batch: zero variance in a normalization layer");
            }
            bsigma = sqrt_(affine(bvar, 1.0, kBnEps));
            tr.batch_stats.push_back({bmu, bsigma});
        }

        Tensor norm = opts.mode == BnMode::Train
                          ? batchnorm_apply(pre, gamma, beta, bmu, bsigma)
                          : batchnorm_apply(pre, gamma, beta, g.constant(b.run_mu), g.constant(b.run_sigma));
        h = relu(norm);
        tr.layer_outputs.push_back(h);
    }

    tr.fc_input = reshape(mean_axes(h, 0b1100, true), {h.shape()[0], h.shape()[1]});
    Tensor fw = param(net.fc_w);
    Tensor fb = param(net.fc_b);
    tr.logits = add(matmul(tr.fc_input, fw), fb);
    tr.layer_outputs.push_back(tr.logits);
    return tr;
}

void update_running_stats(TeacherNet& net, const ForwardTrace& trace, double momentum) {
    SADAG_CHECK(trace.batch_stats.size() == net.blocks.size(), "trace has ", trace.batch_stats.size(),
                " stat pairs for ", net.blocks.size(), " blocks");
    for (size_t i = 0; i < net.blocks.size(); ++i) {
        const Array& bmu = trace.batch_stats[i].first.val();
        const Array& bsg = trace.batch_stats[i].second.val();
        Array& mu = net.blocks[i].run_mu;
        Array& sg = net.blocks[i].run_sigma;
        for (int64_t j = 0; j < mu.size(); ++j) {
            mu[j] = (1.0 - momentum) * mu[j] + momentum * bmu[j];
            sg[j] = (1.0 - momentum) * sg[j] + momentum * bsg[j];
        }
    }
}

namespace {

Array onehot_rows(const std::vector<uint16_t>& labels, const std::vector<int64_t>& idx, int64_t classes) {
    Array oh({static_cast<int64_t>(idx.size()), classes}, 0.0);
    for (size_t i = 0; i < idx.size(); ++i) {
        const uint16_t y = labels[static_cast<size_t>(idx[i])];
        SADAG_CHECK(y < classes, "label ", y, " out of range for ", classes, " classes");
        oh[static_cast<int64_t>(i) * classes + y] = 1.0;
    }
    return oh;
}

}  // namespace

double teacher_accuracy(const TeacherNet& net, const LabeledDataset& ds) {
    SADAG_CHECK(ds.count() > 0, "accuracy of empty dataset");
    int64_t hits = 0;
    const int64_t batch = 256;
    for (int64_t at = 0; at < ds.count(); at += batch) {
        std::vector<int64_t> idx;
        for (int64_t i = at; i < std::min(ds.count(), at + batch); ++i) idx.push_back(i);
        Graph g;
        const ForwardTrace tr = teacher_forward(g, net, g.constant(ds.rows(idx)), {BnMode::Eval, false, false});
        const Array& lg = tr.logits.val();
        const int64_t c = lg.shape[1];
        for (size_t i = 0; i < idx.size(); ++i) {
            int64_t best = 0;
            for (int64_t j = 1; j < c; ++j)
                if (lg[static_cast<int64_t>(i) * c + j] > lg[static_cast<int64_t>(i) * c + best]) best = j;
            hits += best == ds.labels[static_cast<size_t>(idx[i])];
        }
    }
    return static_cast<double>(hits) / static_cast<double>(ds.count());
}

TeacherTrainResult train_teacher(const LabeledDataset& train, const LabeledDataset& val,
                                 const TeacherTrainConfig& cfg) {
    SADAG_CHECK(train.count() > 0, "empty training set");
    int64_t classes = 0;
    for (uint16_t y : train.labels) classes = std::max<int64_t>(classes, y + 1);
    SADAG_CHECK(classes >= 2, "training set must contain at least 2 classes, found ", classes);

    TeacherTrainResult res;
    res.net = TeacherNet::init(classes, cfg.seed);
    TeacherNet& net = res.net;

    const auto params = net.parameters();
    SgdMomentum opt(cfg.momentum);
    opt.init(params);

    Rng shuffle_rng(derive_seed(cfg.seed, "teacher-shuffle"));
    const int64_t steps_per_epoch = (train.count() + cfg.batch - 1) / cfg.batch;
    const int64_t total_steps = std::max<int64_t>(1, cfg.epochs * steps_per_epoch);
    int64_t step = 0;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<int64_t> perm = shuffle_rng.permutation(train.count());
        for (int64_t at = 0; at < train.count(); at += cfg.batch) {
            std::vector<int64_t> idx(perm.begin() + at,
                                     perm.begin() + std::min<int64_t>(train.count(), at + cfg.batch));
            if (idx.size() < 2) continue;  // train-mode statistics need >= 2 samples

            Graph g;
            ForwardTrace tr = teacher_forward(g, net, g.constant(train.rows(idx)), {BnMode::Train, true, true});
            Tensor loss = softmax_crossentropy(tr.logits, g.constant(onehot_rows(train.labels, idx, classes)));
            const auto grads = g.grad(loss, tr.params);

            const double t = static_cast<double>(step) / static_cast<double>(total_steps);
            const double lr = cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
            std::vector<const Array*> gvals;
            for (const Tensor& gt : grads) gvals.push_back(&gt.val());
            opt.step(params, gvals, lr);
            update_running_stats(net, tr, cfg.ema_momentum);
            ++step;
        }
    }

    res.train_acc = teacher_accuracy(net, train);
    res.val_acc = val.count() ? teacher_accuracy(net, val) : 0.0;
    res.reached_floor = res.val_acc >= cfg.accuracy_floor;
    return res;
}

}  // namespace sadag::nets
