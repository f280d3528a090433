#pragma once

#include "nets/generator.hpp"
#include "quant/quantnet.hpp"

namespace sadag::losses {

// Flattened per-sample reconstruction-loss gradient restricted to the fc
// layer: flatten(a g^T) with a the fc input (d) and g the logit difference
// (C), row-major (d, C).
struct GradVector {
    Array values;  // length d*C
    bool normalized = false;
    int64_t sample_id = -1;
};

struct SharpnessProbe {
    double rho = 0.0;
    double base = 0.0;
    double perturbed = 0.0;
    double sharpness() const { return perturbed - base; }
};

// 1/2 sum_i sum_l || f_t(x_i, l) - f_q(x_i, l) ||^2 over block outputs and
// logits. Differentiable through whatever leaves the traces exposed.
ad::Tensor reconstruction_loss_t(ad::Graph& g, quant::QuantNet& q, const nets::TeacherNet& t, ad::Tensor x,
                                 const quant::QuantFwdOpts& qopts = {}, quant::QuantTrace* qtrace = nullptr,
                                 nets::ForwardTrace* ttrace = nullptr);
double reconstruction_loss(quant::QuantNet& q, const nets::TeacherNet& t, const Array& X);

// Worst-case weight perturbation of radius rho along the normalized
// reconstruction-loss gradient, over the quantized net's effective
// parameters. Rejects a zero gradient.
std::vector<Array> sam_epsilon(quant::QuantNet& q, const nets::TeacherNet& t, const Array& X, double rho);
SharpnessProbe sam_loss(quant::QuantNet& q, const nets::TeacherNet& t, const Array& X, double rho);

GradVector per_sample_fc_gradient(quant::QuantNet& q, const nets::TeacherNet& t, const Array& x_single,
                                  bool normalize = false);
std::vector<GradVector> per_sample_fc_gradients(quant::QuantNet& q, const nets::TeacherNet& t, const Array& X,
                                                bool normalize = false);

// Graph-side batched version: row i is flatten(a_i g_i^T), built from traces
// that share a graph (differentiable toward embeddings/generator).
ad::Tensor per_sample_grad_matrix_t(const quant::QuantTrace& qt, const nets::ForwardTrace& tt);

// A^T A for a batch of fc inputs (N, d). The full fc-layer Hessian of the
// reconstruction loss is C copies of this block, one per class column, with
// zeros elsewhere; tests verify that structure against finite differences.
Array fc_hessian_reference(const Array& a_batch);

// D = 1 - cos(u, v) in [0, 2]. Rejects zero vectors.
double cosine_distance(const GradVector& u, const GradVector& v);

struct PerturbResult {
    Array eps;             // (256), norm nu
    bool fell_back = false;
};

// Embedding perturbation of radius nu maximizing gradient dissimilarity:
// ascent direction of D(detached grad(z), grad(z + e)) at a small random
// offset e0 (norm 1e-3 * nu), rescaled to norm nu. Falls back to the offset
// direction when the ascent direction vanishes.
PerturbResult neighbor_perturbation(const nets::GeneratorNet& gen, const Array& z_row, quant::QuantNet& q,
                                    const nets::TeacherNet& t, double nu, Rng& rng);

// Batched generation losses. Rows whose gradient vector vanishes are masked
// out of both terms and counted.
struct GenLossParts {
    ad::Tensor bn;        // scalar
    ad::Tensor diversity; // scalar
    ad::Tensor grad_match;// scalar
    ad::Tensor total;     // bn + l1*diversity + l2*grad_match
    int64_t masked_rows = 0;
};

// Sum of squared distances between the batch statistics of X through the
// teacher and the stored per-layer statistics. Needs at least 2 samples.
ad::Tensor bn_loss_t(ad::Graph& g, const nets::TeacherNet& t, ad::Tensor x);
double bn_loss(const nets::TeacherNet& t, const Array& X);

// Pairwise hinge on |g_i . g_j| over unit-normalized rows; ordered double
// sum (each unordered pair counted twice).
double diversity_loss(const std::vector<GradVector>& grads, double zeta);

// sum_i D(grad(G(z_i)), grad(G(z_i + eps_i))); pairs with a vanishing side
// contribute zero.
double grad_match_loss(const nets::GeneratorNet& gen, const Array& Z, const Array& Eps, quant::QuantNet& q,
                       const nets::TeacherNet& t, int64_t* masked_pairs = nullptr);

// Full generation objective for one mini-batch of embeddings (z and
// generator parameters differentiable; nets frozen). `eps_rows` may be null
// when lambda2 == 0. Generator parameter leaves come back in
// *out_gen_params for the caller's grad().
GenLossParts generation_loss_t(ad::Graph& g, const nets::GeneratorNet& gen, ad::Tensor z_batch,
                               const Array* eps_rows, quant::QuantNet& q, const nets::TeacherNet& t,
                               double lambda1, double lambda2, double zeta,
                               std::vector<ad::Tensor>* out_gen_params);

// Batched neighbor perturbations for a mini-batch of embedding rows.
std::vector<PerturbResult> neighbor_perturbations(const nets::GeneratorNet& gen, const Array& z_rows,
                                                  quant::QuantNet& q, const nets::TeacherNet& t, double nu,
                                                  Rng& rng);

// cos( sum_{subset} g_i, sum_{pool} g_i ). Rejects zero aggregates.
double pool_gradient_cosine(const std::vector<GradVector>& pool, const std::vector<int64_t>& subset);

}  // namespace sadag::losses
