#pragma once

#include <cstddef>
#include <cstdint>

namespace sadag::kernels {

// Hot f64 inner loops. Scalar reference implementations and an AVX2 variant
// live behind a function table selected once at startup (overridable via the
// SADAG_KERNELS env var or force_backend, both for tests).
//
// Equivalence contract, checked by tests/test_kernels.cpp:
//   - elementwise ops, matmul and conv2d accumulate in the same order per
//     output element in both backends and use no FMA, so they are
//     bit-identical;
//   - dot/sum use multiple accumulators in the AVX2 variant and are
//     equivalent to the reference within relative 1e-12.

enum class Backend { Scalar, Avx2 };

Backend active_backend();
void force_backend(Backend b);
const char* backend_name(Backend b);
bool avx2_available();

struct ConvDims {
    int64_t n, ci, h, w;   // input  (N, CI, H, W)
    int64_t co, kh, kw;    // weight (CO, CI, KH, KW)
    int64_t stride, pad_h, pad_w;

    int64_t oh() const { return (h + 2 * pad_h - kh) / stride + 1; }
    int64_t ow() const { return (w + 2 * pad_w - kw) / stride + 1; }
};

struct KernelTable {
    void (*add)(const double*, const double*, double*, size_t);
    void (*sub)(const double*, const double*, double*, size_t);
    void (*mul)(const double*, const double*, double*, size_t);
    void (*div)(const double*, const double*, double*, size_t);
    void (*add_s)(const double*, double, double*, size_t);
    void (*sub_s)(const double*, double, double*, size_t);   // out = a - s
    void (*rsub_s)(const double*, double, double*, size_t);  // out = s - a
    void (*mul_s)(const double*, double, double*, size_t);
    void (*div_s)(const double*, double, double*, size_t);   // out = a / s
    void (*affine)(const double*, double, double, double*, size_t);  // out = a*scale + shift
    void (*axpy)(double, const double*, double*, size_t);            // y += a*x
    void (*relu)(const double*, double*, size_t);
    void (*mask_pos)(const double*, double*, size_t);  // out = x > 0 ? 1 : 0
    double (*sum)(const double*, size_t);
    double (*dot)(const double*, const double*, size_t);
    // Row-major C(m,n) = A(m,k) * B(k,n); accumulate adds into C.
    void (*matmul)(const double*, const double*, double*, size_t, size_t, size_t, bool);
    // NCHW direct convolution, zero padding. out is overwritten.
    void (*conv2d)(const double*, const double*, double*, const ConvDims&);
};

const KernelTable& table();

extern const KernelTable kScalarTable;
#if defined(__x86_64__) || defined(_M_X64)
extern const KernelTable kAvx2Table;
#endif

}  // namespace sadag::kernels
