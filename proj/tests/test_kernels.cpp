#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <string>

#include "core/rng.hpp"
#include "kernels/kernels.hpp"

using namespace sadag;
using kernels::Backend;
using kernels::ConvDims;

namespace {

std::vector<double> rand_vec(size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
    }
    return true;
}

}  // namespace

TEST_SUITE_BEGIN("kernels");

TEST_CASE("scalar and avx2 elementwise kernels are bit-identical") {
    if (!kernels::avx2_available()) {
        MESSAGE("avx2 not available, skipping");
        return;
    }
    Rng rng(11);
    const auto& sc = kernels::kScalarTable;
    const auto& vx = kernels::kAvx2Table;
    for (size_t n : {size_t(0), size_t(1), size_t(3), size_t(4), size_t(7), size_t(64), size_t(129), size_t(1000)}) {
        const auto a = rand_vec(n, rng), b = rand_vec(n, rng);
        std::vector<double> o1(n), o2(n);
        const double s = rng.uniform(-2, 2);

        sc.add(a.data(), b.data(), o1.data(), n);
        vx.add(a.data(), b.data(), o2.data(), n);
        CHECK(bits_equal(o1, o2));
        sc.sub(a.data(), b.data(), o1.data(), n);
        vx.sub(a.data(), b.data(), o2.data(), n);
        CHECK(bits_equal(o1, o2));
        sc.mul(a.data(), b.data(), o1.data(), n);
        vx.mul(a.data(), b.data(), o2.data(), n);
        CHECK(bits_equal(o1, o2));
        sc.div(a.data(), b.data(), o1.data(), n);
        vx.div(a.data(), b.data(), o2.data(), n);
        CHECK(bits_equal(o1, o2));
        sc.add_s(a.data(), s, o1.data(), n);
        vx.add_s(a.data(), s, o2.data(), n);
        CHECK(bits_equal(o1, o2));
        sc.sub_s(a.data(), s, o1.data(), n);
        vx.sub_s(a.data(), s, o2.data(), n);
        CHECK(bits_equal(o1, o2));
        sc.rsub_s(a.data(), s, o1.data(), n);
        vx.rsub_s(a.data(), s, o2.data(), n);
        CHECK(bits_equal(o1, o2));
        sc.mul_s(a.data(), s, o1.data(), n);
        vx.mul_s(a.data(), s, o2.data(), n);
        CHECK(bits_equal(o1, o2));
        sc.div_s(a.data(), s, o1.data(), n);
        vx.div_s(a.data(), s, o2.data(), n);
        CHECK(bits_equal(o1, o2));
        sc.affine(a.data(), s, 0.25, o1.data(), n);
        vx.affine(a.data(), s, 0.25, o2.data(), n);
        CHECK(bits_equal(o1, o2));
        sc.relu(a.data(), o1.data(), n);
        vx.relu(a.data(), o2.data(), n);
        CHECK(bits_equal(o1, o2));
        sc.mask_pos(a.data(), o1.data(), n);
        vx.mask_pos(a.data(), o2.data(), n);
        CHECK(bits_equal(o1, o2));

        o1 = b;
        o2 = b;
        sc.axpy(s, a.data(), o1.data(), n);
        vx.axpy(s, a.data(), o2.data(), n);
        CHECK(bits_equal(o1, o2));
    }
}

TEST_CASE("scalar and avx2 reductions agree to relative 1e-12") {
    if (!kernels::avx2_available()) {
        MESSAGE("avx2 not available, skipping");
        return;
    }
    Rng rng(12);
    const auto& sc = kernels::kScalarTable;
    const auto& vx = kernels::kAvx2Table;
    for (size_t n : {size_t(1), size_t(5), size_t(64), size_t(1021), size_t(4096)}) {
        const auto a = rand_vec(n, rng), b = rand_vec(n, rng);
        const double s1 = sc.sum(a.data(), n), s2 = vx.sum(a.data(), n);
        CHECK(std::fabs(s1 - s2) <= 1e-12 * std::max(1.0, std::fabs(s1)));
        const double d1 = sc.dot(a.data(), b.data(), n), d2 = vx.dot(a.data(), b.data(), n);
        CHECK(std::fabs(d1 - d2) <= 1e-12 * std::max(1.0, std::fabs(d1)));
    }
}

TEST_CASE("scalar and avx2 matmul are bit-identical") {
    if (!kernels::avx2_available()) {
        MESSAGE("avx2 not available, skipping");
        return;
    }
    Rng rng(13);
    const auto& sc = kernels::kScalarTable;
    const auto& vx = kernels::kAvx2Table;
    for (auto [m, k, n] : std::vector<std::array<size_t, 3>>{{1, 1, 1}, {2, 3, 4}, {5, 7, 9}, {16, 32, 8}, {13, 21, 34}}) {
        const auto A = rand_vec(m * k, rng), B = rand_vec(k * n, rng);
        std::vector<double> C1(m * n), C2(m * n);
        sc.matmul(A.data(), B.data(), C1.data(), m, k, n, false);
        vx.matmul(A.data(), B.data(), C2.data(), m, k, n, false);
        CHECK(bits_equal(C1, C2));
        sc.matmul(A.data(), B.data(), C1.data(), m, k, n, true);
        vx.matmul(A.data(), B.data(), C2.data(), m, k, n, true);
        CHECK(bits_equal(C1, C2));
    }
}

TEST_CASE("scalar and avx2 conv2d are bit-identical") {
    if (!kernels::avx2_available()) {
        MESSAGE("avx2 not available, skipping");
        return;
    }
    Rng rng(14);
    const auto& sc = kernels::kScalarTable;
    const auto& vx = kernels::kAvx2Table;
    for (const ConvDims& d : {ConvDims{2, 3, 16, 16, 8, 3, 3, 2, 1, 1}, ConvDims{1, 4, 8, 8, 4, 3, 3, 1, 1, 1},
                             ConvDims{3, 2, 9, 9, 5, 3, 3, 2, 0, 0}, ConvDims{1, 1, 5, 7, 2, 2, 2, 1, 1, 1},
                             ConvDims{2, 6, 12, 12, 3, 5, 5, 3, 2, 2}, ConvDims{1, 2, 6, 8, 2, 3, 5, 1, 2, 1}}) {
        const auto in = rand_vec(static_cast<size_t>(d.n * d.ci * d.h * d.w), rng);
        const auto w = rand_vec(static_cast<size_t>(d.co * d.ci * d.kh * d.kw), rng);
        std::vector<double> o1(static_cast<size_t>(d.n * d.co * d.oh() * d.ow()));
        std::vector<double> o2(o1.size());
        sc.conv2d(in.data(), w.data(), o1.data(), d);
        vx.conv2d(in.data(), w.data(), o2.data(), d);
        CHECK(bits_equal(o1, o2));
    }
}

TEST_CASE("conv2d reference matches a hand-worked case") {
    // 3x3 input, 2x2 identity-corner kernel, stride 1, no padding.
    const std::vector<double> in{1, 2, 3, 4, 5, 6, 7, 8, 9};
    const std::vector<double> w{1, 0, 0, 1};
    const ConvDims d{1, 1, 3, 3, 1, 2, 2, 1, 0, 0};
    std::vector<double> out(4);
    kernels::kScalarTable.conv2d(in.data(), w.data(), out.data(), d);
    CHECK(out == std::vector<double>{6, 8, 12, 14});
}

TEST_CASE("backend dispatch is overridable") {
    const Backend before = kernels::active_backend();
    kernels::force_backend(Backend::Scalar);
    CHECK(kernels::active_backend() == Backend::Scalar);
    CHECK(std::string(kernels::backend_name(kernels::active_backend())) == "scalar");
    kernels::force_backend(before);
}

TEST_SUITE_END();
