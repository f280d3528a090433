#include "kernels/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace sadag::kernels {
namespace {

Backend detect() {
#if defined(__x86_64__) || defined(_M_X64)
    if (const char* env = std::getenv("SADAG_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
        if (std::strcmp(env, "avx2") == 0) return Backend::Avx2;
    }
    return __builtin_cpu_supports("avx2") ? Backend::Avx2 : Backend::Scalar;
#else
    return Backend::Scalar;
#endif
}

Backend g_backend = detect();

}  // namespace

bool avx2_available() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

Backend active_backend() { return g_backend; }

void force_backend(Backend b) { g_backend = b; }

const char* backend_name(Backend b) { return b == Backend::Avx2 ? "avx2" : "scalar"; }

const KernelTable& table() {
#if defined(__x86_64__) || defined(_M_X64)
    return g_backend == Backend::Avx2 ? kAvx2Table : kScalarTable;
#else
    return kScalarTable;
#endif
}

}  // namespace sadag::kernels
