// AVX2 variants. Compiled with -mavx2 for this TU only; selection happens at
// runtime in kernels.cpp. No FMA anywhere: elementwise/matmul/conv2d must be
// bit-identical to the scalar reference (see contract in kernels.hpp).

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <vector>

#include "kernels/kernels.hpp"

namespace sadag::kernels {
namespace {

constexpr size_t kLanes = 4;

void add_k(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_k(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_k(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}
void div_k(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] / b[i];
}
void add_s_k(const double* a, double s, double* out, size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] + s;
}
void sub_s_k(const double* a, double s, double* out, size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] - s;
}
void rsub_s_k(const double* a, double s, double* out, size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(vs, _mm256_loadu_pd(a + i)));
    for (; i < n; ++i) out[i] = s - a[i];
}
void mul_s_k(const double* a, double s, double* out, size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] * s;
}
void div_s_k(const double* a, double s, double* out, size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_loadu_pd(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] / s;
}
void affine_k(const double* a, double sc, double sh, double* out, size_t n) {
    const __m256d vsc = _mm256_set1_pd(sc), vsh = _mm256_set1_pd(sh);
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_mul_pd(_mm256_loadu_pd(a + i), vsc), vsh));
    for (; i < n; ++i) out[i] = a[i] * sc + sh;
}
void axpy_k(double alpha, const double* x, double* y, size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, _mm256_loadu_pd(x + i))));
    for (; i < n; ++i) y[i] += alpha * x[i];
}
void relu_k(const double* x, double* out, size_t n) {
    const __m256d z = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), z));
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}
void mask_pos_k(const double* x, double* out, size_t n) {
    const __m256d z = _mm256_setzero_pd(), one = _mm256_set1_pd(1.0);
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256d m = _mm256_cmp_pd(_mm256_loadu_pd(x + i), z, _CMP_GT_OQ);
        _mm256_storeu_pd(out + i, _mm256_and_pd(m, one));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? 1.0 : 0.0;
}

double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// Multi-accumulator reductions: different summation order than the scalar
// reference, tolerance-tested rather than bit-compared.
double sum_k(const double* x, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double r = hsum(acc);
    for (; i < n; ++i) r += x[i];
    return r;
}
double dot_k(const double* a, const double* b, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    double r = hsum(acc);
    for (; i < n; ++i) r += a[i] * b[i];
    return r;
}

void matmul_k(const double* A, const double* B, double* C, size_t m, size_t k, size_t n, bool accumulate) {
    if (!accumulate) {
        for (size_t i = 0; i < m * n; ++i) C[i] = 0.0;
    }
    for (size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        double* crow = C + i * n;
        for (size_t p = 0; p < k; ++p) {
            const __m256d va = _mm256_set1_pd(arow[p]);
            const double a = arow[p];
            const double* brow = B + p * n;
            size_t j = 0;
            for (; j + kLanes <= n; j += kLanes)
                _mm256_storeu_pd(crow + j,
                                 _mm256_add_pd(_mm256_loadu_pd(crow + j), _mm256_mul_pd(va, _mm256_loadu_pd(brow + j))));
            for (; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

std::vector<double> pad_input(const double* in, const ConvDims& d) {
    const int64_t ph = d.h + 2 * d.pad_h, pw = d.w + 2 * d.pad_w;
    std::vector<double> padded(static_cast<size_t>(d.n * d.ci * ph * pw), 0.0);
    for (int64_t img = 0; img < d.n * d.ci; ++img) {
        const double* src = in + img * d.h * d.w;
        double* dst = padded.data() + img * ph * pw + d.pad_h * pw + d.pad_w;
        for (int64_t y = 0; y < d.h; ++y) {
            for (int64_t x = 0; x < d.w; ++x) dst[x] = src[x];
            src += d.w;
            dst += pw;
        }
    }
    return padded;
}

// Vector of 4 output positions along ox; per-lane accumulation runs in the
// same (ci, ky, kx) order as the reference.
void conv2d_k(const double* in, const double* w, double* out, const ConvDims& d) {
    const std::vector<double> padded = pad_input(in, d);
    const int64_t ph = d.h + 2 * d.pad_h, pw = d.w + 2 * d.pad_w;
    const int64_t oh = d.oh(), ow = d.ow();
    const int64_t s = d.stride;
    const __m256i gidx = _mm256_set_epi64x(3 * s, 2 * s, s, 0);
    for (int64_t nb = 0; nb < d.n; ++nb) {
        const double* img = padded.data() + nb * d.ci * ph * pw;
        for (int64_t co = 0; co < d.co; ++co) {
            const double* wf = w + co * d.ci * d.kh * d.kw;
            double* oplane = out + (nb * d.co + co) * oh * ow;
            for (int64_t oy = 0; oy < oh; ++oy) {
                int64_t ox = 0;
                for (; ox + static_cast<int64_t>(kLanes) <= ow; ox += kLanes) {
                    __m256d acc = _mm256_setzero_pd();
                    for (int64_t ci = 0; ci < d.ci; ++ci) {
                        const double* iplane = img + ci * ph * pw;
                        const double* wk = wf + ci * d.kh * d.kw;
                        for (int64_t ky = 0; ky < d.kh; ++ky) {
                            const double* irow = iplane + (oy * s + ky) * pw + ox * s;
                            for (int64_t kx = 0; kx < d.kw; ++kx) {
                                const __m256d vw = _mm256_set1_pd(wk[ky * d.kw + kx]);
                                const __m256d vi = (s == 1)
                                                       ? _mm256_loadu_pd(irow + kx)
                                                       : _mm256_i64gather_pd(irow + kx, gidx, 8);
                                acc = _mm256_add_pd(acc, _mm256_mul_pd(vi, vw));
                            }
                        }
                    }
                    _mm256_storeu_pd(oplane + oy * ow + ox, acc);
                }
                for (; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int64_t ci = 0; ci < d.ci; ++ci) {
                        const double* iplane = img + ci * ph * pw;
                        const double* wk = wf + ci * d.kh * d.kw;
                        for (int64_t ky = 0; ky < d.kh; ++ky) {
                            const double* irow = iplane + (oy * s + ky) * pw + ox * s;
                            for (int64_t kx = 0; kx < d.kw; ++kx) acc += irow[kx] * wk[ky * d.kw + kx];
                        }
                    }
                    oplane[oy * ow + ox] = acc;
                }
            }
        }
    }
}

}  // namespace

const KernelTable kAvx2Table = {
    add_k, sub_k, mul_k, div_k, add_s_k, sub_s_k, rsub_s_k, mul_s_k, div_s_k,
    affine_k, axpy_k, relu_k, mask_pos_k, sum_k, dot_k, matmul_k, conv2d_k,
};

}  // namespace sadag::kernels

#endif  // x86_64
