#include "cotlab/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace cotlab::kernels {

namespace {

float s_dot(const float* a, const float* b, std::size_t n) { return scalar::dot(a, b, n); }
void s_axpy(float a, const float* x, float* y, std::size_t n) { scalar::axpy(a, x, y, n); }
void s_scale(float a, float* x, std::size_t n) { scalar::scale(a, x, n); }
void s_gemm_nn(std::size_t M, std::size_t N, std::size_t K, const float* A, std::size_t lda,
               const float* B, std::size_t ldb, float* C, std::size_t ldc, bool acc) {
    scalar::gemm_nn(M, N, K, A, lda, B, ldb, C, ldc, acc);
}
void s_gemm_nt(std::size_t M, std::size_t N, std::size_t K, const float* A, std::size_t lda,
               const float* B, std::size_t ldb, float* C, std::size_t ldc, bool acc) {
    scalar::gemm_nt(M, N, K, A, lda, B, ldb, C, ldc, acc);
}
void s_gemm_tn(std::size_t M, std::size_t N, std::size_t K, const float* A, std::size_t lda,
               const float* B, std::size_t ldb, float* C, std::size_t ldc, bool acc) {
    scalar::gemm_tn(M, N, K, A, lda, B, ldb, C, ldc, acc);
}
void s_rmsnorm(const float* x, const float* g, float* o, std::size_t n, float eps) {
    scalar::rmsnorm(x, g, o, n, eps);
}
void s_softmax(float* x, std::size_t n) { scalar::softmax(x, n); }
void s_silu_gate(const float* g, const float* u, float* o, std::size_t n) { scalar::silu_gate(g, u, o, n); }

const DispatchTable kScalarTable = {
    "scalar", s_dot, s_axpy, s_scale, s_gemm_nn, s_gemm_nt, s_gemm_tn,
    s_rmsnorm, s_softmax, s_silu_gate,
};

const DispatchTable* select_table() {
    const char* env = std::getenv("COTLAB_KERNELS");
    std::string want = env ? env : "auto";
    if (want == "scalar") return &kScalarTable;
    if (want == "avx2") {
        const DispatchTable* t = table_avx2();
        if (!t) throw std::runtime_error("COTLAB_KERNELS=avx2 requested but CPU lacks AVX2+FMA");
        return t;
    }
    if (want != "auto")
        throw std::runtime_error("COTLAB_KERNELS must be auto, scalar or avx2 (got '" + want + "')");
    const DispatchTable* t = table_avx2();
    return t ? t : &kScalarTable;
}

} // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const DispatchTable& table_scalar() { return kScalarTable; }

const DispatchTable& active() {
    static const DispatchTable* t = select_table();
    return *t;
}

} // namespace cotlab::kernels
