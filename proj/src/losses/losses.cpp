#include "losses/losses.hpp"

#include <cmath>

#include "kernels/kernels.hpp"

namespace sadag::losses {

using namespace sadag::ad;
using nets::ForwardTrace;
using nets::GeneratorFwd;
using nets::GeneratorNet;
using nets::TeacherNet;
using quant::QuantFwdOpts;
using quant::QuantNet;
using quant::QuantTrace;

namespace {

constexpr double kTinyNorm = 1e-12;

double vec_norm(const Array& a) {
    return std::sqrt(kernels::table().dot(a.data.data(), a.data.data(), a.data.size()));
}

}  // namespace

Tensor reconstruction_loss_t(Graph& g, QuantNet& q, const TeacherNet& t, Tensor x, const QuantFwdOpts& qopts,
                             QuantTrace* qtrace, ForwardTrace* ttrace) {
    quant::check_same_architecture(q, t);
    SADAG_CHECK(x.shape().size() == 4 && x.shape()[0] >= 1, "reconstruction loss needs a non-empty batch");

    ForwardTrace tt = nets::teacher_forward(g, t, x, {nets::BnMode::Eval, false, false});
    QuantTrace qt = quant_forward(g, q, x, qopts);
    SADAG_CHECK(tt.layer_outputs.size() == qt.layer_outputs.size(), "layer capture mismatch: ",
                tt.layer_outputs.size(), " vs ", qt.layer_outputs.size());

    Tensor acc;
    for (size_t l = 0; l < tt.layer_outputs.size(); ++l) {
        Tensor d = sub(tt.layer_outputs[l], qt.layer_outputs[l]);
        Tensor term = sum(mul(d, d));
        acc = acc.valid() ? add(acc, term) : term;
    }
    Tensor loss = scale(acc, 0.5);
    if (qtrace) *qtrace = qt;
    if (ttrace) *ttrace = tt;
    return loss;
}

double reconstruction_loss(QuantNet& q, const TeacherNet& t, const Array& X) {
    Graph g;
    return reconstruction_loss_t(g, q, t, g.constant(X)).item();
}

std::vector<Array> sam_epsilon(QuantNet& q, const TeacherNet& t, const Array& X, double rho) {
    SADAG_CHECK(rho >= 0.0, "sharpness radius must be nonnegative, got ", rho);
    Graph g;
    QuantFwdOpts opts;
    opts.effective_leaves = true;
    QuantTrace qt;
    Tensor loss = reconstruction_loss_t(g, q, t, g.constant(X), opts, &qt);
    const auto grads = g.grad(loss, qt.eff_leaves);

    double sq = 0.0;
    for (const Tensor& gt : grads) {
        const Array& a = gt.val();
        sq += kernels::table().dot(a.data.data(), a.data.data(), a.data.size());
    }
    const double norm = std::sqrt(sq);
    SADAG_CHECK(norm > kTinyNorm, "perturbation direction undefined: zero reconstruction gradient");

    std::vector<Array> eps;
    eps.reserve(grads.size());
    for (const Tensor& gt : grads) {
        Array e = gt.val();
        for (auto& v : e.data) v *= rho / norm;
        eps.push_back(std::move(e));
    }
    return eps;
}

SharpnessProbe sam_loss(QuantNet& q, const TeacherNet& t, const Array& X, double rho) {
    SharpnessProbe probe;
    probe.rho = rho;
    probe.base = reconstruction_loss(q, t, X);

    const std::vector<Array> eps = sam_epsilon(q, t, X, rho);
    std::vector<Array> shifted = q.effective_params();
    SADAG_CHECK(shifted.size() == eps.size(), "perturbation arity mismatch");
    for (size_t i = 0; i < shifted.size(); ++i)
        for (int64_t j = 0; j < shifted[i].size(); ++j) shifted[i][j] += eps[i][j];

    Graph g;
    QuantFwdOpts opts;
    opts.effective_leaves = true;
    opts.effective_override = &shifted;
    probe.perturbed = reconstruction_loss_t(g, q, t, g.constant(X), opts).item();
    return probe;
}

GradVector per_sample_fc_gradient(QuantNet& q, const TeacherNet& t, const Array& x_single, bool normalize) {
    SADAG_CHECK(!x_single.shape.empty() && x_single.shape[0] == 1, "per-sample gradient expects a single sample");
    Graph g;
    Tensor x = g.constant(x_single);
    ForwardTrace tt = nets::teacher_forward(g, t, x, {nets::BnMode::Eval, false, false});
    QuantTrace qt = quant_forward(g, q, x);

    const Array& a = qt.fc_input.val();   // (1, d)
    const Array& ql = qt.logits.val();    // (1, C)
    const Array& tl = tt.logits.val();
    const int64_t d = a.shape[1], c = ql.shape[1];

    GradVector gv;
    gv.values = Array({d * c});
    for (int64_t u = 0; u < d; ++u)
        for (int64_t v = 0; v < c; ++v) gv.values[u * c + v] = a[u] * (ql[v] - tl[v]);
    if (normalize) {
        const double n = vec_norm(gv.values);
        SADAG_CHECK(n > kTinyNorm, "cannot normalize a zero gradient vector");
        for (auto& x0 : gv.values.data) x0 /= n;
        gv.normalized = true;
    }
    return gv;
}

std::vector<GradVector> per_sample_fc_gradients(QuantNet& q, const TeacherNet& t, const Array& X, bool normalize) {
    SADAG_CHECK(X.shape.size() == 4 && X.shape[0] >= 1, "per-sample gradients need a non-empty batch");
    // One batched forward; per-sample rows combined on the value level.
    Graph g;
    Tensor x = g.constant(X);
    ForwardTrace tt = nets::teacher_forward(g, t, x, {nets::BnMode::Eval, false, false});
    QuantTrace qt = quant_forward(g, q, x);
    const Array& a = qt.fc_input.val();  // (N, d)
    const Array& ql = qt.logits.val();   // (N, C)
    const Array& tl = tt.logits.val();
    const int64_t n = a.shape[0], d = a.shape[1], c = ql.shape[1];

    std::vector<GradVector> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        GradVector gv;
        gv.sample_id = i;
        gv.values = Array({d * c});
        for (int64_t u = 0; u < d; ++u)
            for (int64_t v = 0; v < c; ++v)
                gv.values[u * c + v] = a[i * d + u] * (ql[i * c + v] - tl[i * c + v]);
        if (normalize) {
            const double nn = vec_norm(gv.values);
            SADAG_CHECK(nn > kTinyNorm, "cannot normalize a zero gradient vector (sample ", i, ")");
            for (auto& x0 : gv.values.data) x0 /= nn;
            gv.normalized = true;
        }
        out.push_back(std::move(gv));
    }
    return out;
}

Tensor per_sample_grad_matrix_t(const QuantTrace& qt, const ForwardTrace& tt) {
    Tensor a = qt.fc_input;
    Tensor gdiff = sub(qt.logits, tt.logits);
    const int64_t n = a.shape()[0], d = a.shape()[1], c = gdiff.shape()[1];
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Tensor ai = transpose2d(slice0(a, i, 1));       // (d, 1)
        Tensor gi = slice0(gdiff, i, 1);                // (1, c)
        rows.push_back(reshape(matmul(ai, gi), {1, d * c}));
    }
    return concat0(rows);
}

Array fc_hessian_reference(const Array& a_batch) {
    SADAG_CHECK(a_batch.shape.size() == 2 && a_batch.shape[0] >= 1, "fc Hessian reference expects (N, d) inputs");
    const int64_t n = a_batch.shape[0], d = a_batch.shape[1];
    Array at({d, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) at[j * n + i] = a_batch[i * d + j];
    Array gram({d, d});
    kernels::table().matmul(at.data.data(), a_batch.data.data(), gram.data.data(), static_cast<size_t>(d),
                            static_cast<size_t>(n), static_cast<size_t>(d), false);
    return gram;
}

double cosine_distance(const GradVector& u, const GradVector& v) {
    SADAG_CHECK(u.values.size() == v.values.size(), "gradient vector length mismatch");
    const double nu = vec_norm(u.values), nv = vec_norm(v.values);
    SADAG_CHECK(nu > kTinyNorm && nv > kTinyNorm, "cosine distance of a zero vector");
    const double d = kernels::table().dot(u.values.data.data(), v.values.data.data(), u.values.data.size());
    return 1.0 - d / (nu * nv);
}

Tensor bn_loss_t(Graph& g, const TeacherNet& t, Tensor x) {
    SADAG_CHECK(x.shape().size() == 4 && x.shape()[0] >= 2, "batch statistics need at least 2 samples, got ",
                shape_str(x.shape()));
    ForwardTrace tt = nets::teacher_forward(g, t, x, {nets::BnMode::Eval, false, true});
    Tensor acc;
    for (size_t j = 0; j < t.blocks.size(); ++j) {
        Tensor dm = sub(tt.batch_stats[j].first, g.constant(t.blocks[j].run_mu));
        Tensor ds = sub(tt.batch_stats[j].second, g.constant(t.blocks[j].run_sigma));
        Tensor term = add(sum(mul(dm, dm)), sum(mul(ds, ds)));
        acc = acc.valid() ? add(acc, term) : term;
    }
    return acc;
}

double bn_loss(const TeacherNet& t, const Array& X) {
    Graph g;
    return bn_loss_t(g, t, g.constant(X)).item();
}

double diversity_loss(const std::vector<GradVector>& grads, double zeta) {
    SADAG_CHECK(zeta >= 0.0, "diversity threshold must be nonnegative, got ", zeta);
    for (const GradVector& gv : grads) {
        SADAG_CHECK(gv.normalized, "diversity loss requires unit-normalized gradients");
        SADAG_CHECK(std::fabs(vec_norm(gv.values) - 1.0) <= 1e-9, "gradient vector is not unit length");
    }
    double acc = 0.0;
    for (size_t i = 0; i < grads.size(); ++i)
        for (size_t j = 0; j < grads.size(); ++j) {
            if (i == j) continue;
            const double c = kernels::table().dot(grads[i].values.data.data(), grads[j].values.data.data(),
                                                  grads[i].values.data.size());
            acc += std::max(0.0, std::fabs(c) - zeta);
        }
    return acc;
}

namespace {

struct RowStats {
    Tensor sq;    // (B, 1) squared row norms
    Array mask;   // (B, 1) 1 for usable rows
    int64_t masked = 0;
};

RowStats row_sq_and_mask(Tensor m) {
    RowStats rs;
    rs.sq = sum_axes(mul(m, m), 0b10, true);
    const Array& sv = rs.sq.val();
    rs.mask = Array(sv.shape, 1.0);
    for (int64_t i = 0; i < sv.size(); ++i) {
        if (sv[i] <= kTinyNorm * kTinyNorm) {
            rs.mask[i] = 0.0;
            ++rs.masked;
        }
    }
    return rs;
}

// denominator with masked rows replaced by 1 (kept out of the result by the
// mask factor).
Tensor safe_denom(Graph& g, Tensor denom, const Array& mask) {
    Array fill(mask.shape);
    for (int64_t i = 0; i < mask.size(); ++i) fill[i] = 1.0 - mask[i];
    return add(mul(denom, g.constant(mask)), g.constant(fill));
}

}  // namespace

PerturbResult neighbor_perturbation(const GeneratorNet& gen, const Array& z_row, QuantNet& q, const TeacherNet& t,
                                    double nu, Rng& rng) {
    Array z = z_row;
    if (z.shape.size() == 1) z.shape = {1, z.shape[0]};
    auto res = neighbor_perturbations(gen, z, q, t, nu, rng);
    return res[0];
}

std::vector<PerturbResult> neighbor_perturbations(const GeneratorNet& gen, const Array& z_rows, QuantNet& q,
                                                  const TeacherNet& t, double nu, Rng& rng) {
    SADAG_CHECK(nu > 0.0, "perturbation radius must be positive, got ", nu);
    SADAG_CHECK(z_rows.shape.size() == 2 && z_rows.shape[1] == GeneratorNet::kEmbedDim,
                "embeddings must be (B, ", GeneratorNet::kEmbedDim, "), got ", shape_str(z_rows.shape));
    const int64_t b = z_rows.shape[0], dim = z_rows.shape[1];

    // Gaussian offsets of norm 1e-3 * nu per row.
    Array e0({b, dim});
    for (int64_t i = 0; i < b; ++i) {
        const auto v = rng.normal_vec(static_cast<size_t>(dim));
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        const double target = 1e-3 * nu;
        for (int64_t j = 0; j < dim; ++j) e0[i * dim + j] = v[static_cast<size_t>(j)] / n * target;
    }

    Graph g;
    Tensor zc = g.constant(z_rows);
    Tensor e = g.leaf(e0, true);

    Tensor x0 = generator_forward(g, gen, zc).images;
    ForwardTrace tt0 = nets::teacher_forward(g, t, x0, {nets::BnMode::Eval, false, false});
    QuantTrace qt0 = quant_forward(g, q, x0);
    Tensor u = detach(per_sample_grad_matrix_t(qt0, tt0));

    Tensor x1 = generator_forward(g, gen, add(zc, e)).images;
    ForwardTrace tt1 = nets::teacher_forward(g, t, x1, {nets::BnMode::Eval, false, false});
    QuantTrace qt1 = quant_forward(g, q, x1);
    Tensor v = per_sample_grad_matrix_t(qt1, tt1);

    RowStats su = row_sq_and_mask(u);
    RowStats sv = row_sq_and_mask(v);
    Array mask(su.mask.shape);
    for (int64_t i = 0; i < mask.size(); ++i) mask[i] = su.mask[i] * sv.mask[i];

    Tensor rowdot = sum_axes(mul(u, v), 0b10, true);
    Tensor cosattr = div(rowdot, sqrt_(safe_denom(g, mul(su.sq, sv.sq), mask)));
    Tensor dsum = sum(mul(affine(cosattr, -1.0, 1.0), g.constant(mask)));
    const Array dir = g.grad(dsum, {e})[0].val();

    std::vector<PerturbResult> out(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
        PerturbResult& r = out[static_cast<size_t>(i)];
        r.eps = Array({dim});
        double dn = 0.0;
        for (int64_t j = 0; j < dim; ++j) dn += dir[i * dim + j] * dir[i * dim + j];
        dn = std::sqrt(dn);
        if (mask[i] > 0.0 && dn > kTinyNorm) {
            for (int64_t j = 0; j < dim; ++j) r.eps[j] = nu * dir[i * dim + j] / dn;
        } else {
            r.fell_back = true;
            double en = 0.0;
            for (int64_t j = 0; j < dim; ++j) en += e0[i * dim + j] * e0[i * dim + j];
            en = std::sqrt(en);
            for (int64_t j = 0; j < dim; ++j) r.eps[j] = nu * e0[i * dim + j] / en;
        }
    }
    return out;
}

double grad_match_loss(const GeneratorNet& gen, const Array& Z, const Array& Eps, QuantNet& q, const TeacherNet& t,
                       int64_t* masked_pairs) {
    SADAG_CHECK(same_shape(Z.shape, Eps.shape), "one perturbation row per embedding row required, got ",
                shape_str(Eps.shape), " for ", shape_str(Z.shape));
    Graph g;
    GenLossParts parts = generation_loss_t(g, gen, g.constant(Z), &Eps, q, t, 0.0, 1.0, 0.0, nullptr);
    if (masked_pairs) *masked_pairs = parts.masked_rows;
    return parts.grad_match.item();
}

GenLossParts generation_loss_t(Graph& g, const GeneratorNet& gen, Tensor z_batch, const Array* eps_rows,
                               QuantNet& q, const TeacherNet& t, double lambda1, double lambda2, double zeta,
                               std::vector<Tensor>* out_gen_params) {
    GenLossParts parts;
    const bool want_params = out_gen_params != nullptr;

    GeneratorFwd fwd0 = generator_forward(g, gen, z_batch, want_params);
    if (want_params) *out_gen_params = fwd0.params;

    ForwardTrace tt0 = nets::teacher_forward(g, t, fwd0.images, {nets::BnMode::Eval, false, true});
    SADAG_CHECK(fwd0.images.shape()[0] >= 2, "generation batch must have at least 2 samples");
    {
        Tensor acc;
        for (size_t j = 0; j < t.blocks.size(); ++j) {
            Tensor dm = sub(tt0.batch_stats[j].first, g.constant(t.blocks[j].run_mu));
            Tensor ds = sub(tt0.batch_stats[j].second, g.constant(t.blocks[j].run_sigma));
            Tensor term = add(sum(mul(dm, dm)), sum(mul(ds, ds)));
            acc = acc.valid() ? add(acc, term) : term;
        }
        parts.bn = acc;
    }
    parts.total = parts.bn;

    if (lambda1 == 0.0 && lambda2 == 0.0) {
        parts.diversity = g.scalar(0.0);
        parts.grad_match = g.scalar(0.0);
        return parts;
    }

    QuantTrace qt0 = quant_forward(g, q, fwd0.images);
    Tensor m0 = per_sample_grad_matrix_t(qt0, tt0);
    RowStats s0 = row_sq_and_mask(m0);
    parts.masked_rows += s0.masked;

    if (lambda1 > 0.0) {
        const int64_t b = m0.shape()[0];
        Tensor mn = mul(div(m0, sqrt_(safe_denom(g, s0.sq, s0.mask))), g.constant(s0.mask));
        Tensor sim = matmul(mn, transpose2d(mn));
        Array offdiag({b, b}, 1.0);
        for (int64_t i = 0; i < b; ++i) offdiag[i * b + i] = 0.0;
        Tensor hinge = relu(affine(abs_(sim), 1.0, -zeta));
        parts.diversity = sum(mul(hinge, g.constant(offdiag)));
        parts.total = add(parts.total, scale(parts.diversity, lambda1));
    } else {
        parts.diversity = g.scalar(0.0);
    }

    if (lambda2 > 0.0) {
        SADAG_CHECK(eps_rows != nullptr, "gradient-matching term needs perturbation rows");
        GeneratorFwd fwd1 =
            generator_forward(g, gen, add(z_batch, g.constant(*eps_rows)), want_params,
                              want_params ? &fwd0.params : nullptr);
        ForwardTrace tt1 = nets::teacher_forward(g, t, fwd1.images, {nets::BnMode::Eval, false, false});
        QuantTrace qt1 = quant_forward(g, q, fwd1.images);
        Tensor m1 = per_sample_grad_matrix_t(qt1, tt1);
        RowStats s1 = row_sq_and_mask(m1);

        Array mask(s0.mask.shape);
        int64_t masked = 0;
        for (int64_t i = 0; i < mask.size(); ++i) {
            mask[i] = s0.mask[i] * s1.mask[i];
            masked += mask[i] == 0.0;
        }
        parts.masked_rows = std::max(parts.masked_rows, masked);

        // cos computed as dot / sqrt(sq0 * sq1): for bitwise-identical rows
        // the quotient is exactly 1, so zero perturbations give exactly 0.
        Tensor rowdot = sum_axes(mul(m0, m1), 0b10, true);
        Tensor cosr = div(rowdot, sqrt_(safe_denom(g, mul(s0.sq, s1.sq), mask)));
        parts.grad_match = sum(mul(affine(cosr, -1.0, 1.0), g.constant(mask)));
        parts.total = add(parts.total, scale(parts.grad_match, lambda2));
    } else {
        parts.grad_match = g.scalar(0.0);
    }
    return parts;
}

double pool_gradient_cosine(const std::vector<GradVector>& pool, const std::vector<int64_t>& subset) {
    SADAG_CHECK(!pool.empty() && !subset.empty(), "pool and subset must be non-empty");
    const int64_t dim = pool[0].values.size();
    Array sum_pool({dim}, 0.0), sum_sub({dim}, 0.0);
    for (const GradVector& gv : pool)
        for (int64_t j = 0; j < dim; ++j) sum_pool[j] += gv.values[j];
    for (int64_t idx : subset) {
        SADAG_CHECK(idx >= 0 && idx < static_cast<int64_t>(pool.size()), "subset index ", idx, " out of pool range");
        for (int64_t j = 0; j < dim; ++j) sum_sub[j] += pool[static_cast<size_t>(idx)].values[j];
    }
    const double np = vec_norm(sum_pool), ns = vec_norm(sum_sub);
    SADAG_CHECK(np > kTinyNorm && ns > kTinyNorm, "zero aggregate gradient");
    return kernels::table().dot(sum_sub.data.data(), sum_pool.data.data(), sum_sub.data.size()) / (np * ns);
}

}  // namespace sadag::losses
