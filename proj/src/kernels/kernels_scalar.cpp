// Reference kernels. Everything else in the project is defined against the
// arithmetic these loops perform; the AVX2 variants must match them per the
// contract in kernels.hpp.

#include <vector>

#include "kernels/kernels.hpp"

namespace sadag::kernels {
namespace {

void add_k(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_k(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_k(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void div_k(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}
void add_s_k(const double* a, double s, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + s;
}
void sub_s_k(const double* a, double s, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - s;
}
void rsub_s_k(const double* a, double s, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = s - a[i];
}
void mul_s_k(const double* a, double s, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}
void div_s_k(const double* a, double s, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] / s;
}
void affine_k(const double* a, double sc, double sh, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * sc + sh;
}
void axpy_k(double alpha, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
void relu_k(const double* x, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}
void mask_pos_k(const double* x, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? 1.0 : 0.0;
}
double sum_k(const double* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}
double dot_k(const double* a, const double* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

// C[m,n] accumulated over k ascending, one row of B broadcast-scaled at a
// time. The AVX2 variant walks the identical order.
void matmul_k(const double* A, const double* B, double* C, size_t m, size_t k, size_t n, bool accumulate) {
    if (!accumulate) {
        for (size_t i = 0; i < m * n; ++i) C[i] = 0.0;
    }
    for (size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        double* crow = C + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double a = arow[p];
            const double* brow = B + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
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

void conv2d_k(const double* in, const double* w, double* out, const ConvDims& d) {
    const std::vector<double> padded = pad_input(in, d);
    const int64_t ph = d.h + 2 * d.pad_h, pw = d.w + 2 * d.pad_w;
    const int64_t oh = d.oh(), ow = d.ow();
    for (int64_t nb = 0; nb < d.n; ++nb) {
        const double* img = padded.data() + nb * d.ci * ph * pw;
        for (int64_t co = 0; co < d.co; ++co) {
            const double* wf = w + co * d.ci * d.kh * d.kw;
            double* oplane = out + (nb * d.co + co) * oh * ow;
            for (int64_t oy = 0; oy < oh; ++oy) {
                for (int64_t ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int64_t ci = 0; ci < d.ci; ++ci) {
                        const double* iplane = img + ci * ph * pw;
                        const double* wk = wf + ci * d.kh * d.kw;
                        for (int64_t ky = 0; ky < d.kh; ++ky) {
                            const double* irow = iplane + (oy * d.stride + ky) * pw + ox * d.stride;
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

const KernelTable kScalarTable = {
    add_k, sub_k, mul_k, div_k, add_s_k, sub_s_k, rsub_s_k, mul_s_k, div_s_k,
    affine_k, axpy_k, relu_k, mask_pos_k, sum_k, dot_k, matmul_k, conv2d_k,
};

}  // namespace sadag::kernels
