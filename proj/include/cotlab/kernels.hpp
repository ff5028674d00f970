#pragma once

// Float math kernels: scalar reference implementations (templated, also used
// for double-precision gradient checking) plus AVX2+FMA variants selected at
// runtime. Selection is per-process: auto-detect, overridable with
// COTLAB_KERNELS=scalar|avx2|auto. Within one selected table every kernel
// accumulates along K in a fixed ascending order per output element, so a
// given computation is bit-reproducible run to run.
//
// All matrices are row-major; `ld*` are leading dimensions (row strides).

#include <cstddef>
#include <cstdint>
#include <cmath>
#include <type_traits>

namespace cotlab::kernels {

// ---------------------------------------------------------------- scalar ref

namespace scalar {

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void scale(T alpha, T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

// C[M x N] = (accumulate ? C : 0) + A[M x K] * B[K x N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K,
             const T* A, std::size_t lda, const T* B, std::size_t ldb,
             T* C, std::size_t ldc, bool accumulate) {
    for (std::size_t r = 0; r < M; ++r) {
        T* c = C + r * ldc;
        if (!accumulate)
            for (std::size_t j = 0; j < N; ++j) c[j] = T(0);
        const T* a = A + r * lda;
        for (std::size_t k = 0; k < K; ++k) {
            const T ak = a[k];
            const T* b = B + k * ldb;
            for (std::size_t j = 0; j < N; ++j) c[j] += ak * b[j];
        }
    }
}

// C[M x N] = (accumulate ? C : 0) + A[M x K] * B[N x K]^T
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
             const T* A, std::size_t lda, const T* B, std::size_t ldb,
             T* C, std::size_t ldc, bool accumulate) {
    for (std::size_t r = 0; r < M; ++r) {
        const T* a = A + r * lda;
        T* c = C + r * ldc;
        for (std::size_t j = 0; j < N; ++j) {
            T s = dot(a, B + j * ldb, K);
            c[j] = accumulate ? c[j] + s : s;
        }
    }
}

// C[M x N] = (accumulate ? C : 0) + A[K x M]^T * B[K x N]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K,
             const T* A, std::size_t lda, const T* B, std::size_t ldb,
             T* C, std::size_t ldc, bool accumulate) {
    for (std::size_t r = 0; r < M; ++r) {
        T* c = C + r * ldc;
        if (!accumulate)
            for (std::size_t j = 0; j < N; ++j) c[j] = T(0);
        for (std::size_t k = 0; k < K; ++k) {
            const T ak = A[k * lda + r];
            const T* b = B + k * ldb;
            for (std::size_t j = 0; j < N; ++j) c[j] += ak * b[j];
        }
    }
}

// out = x * gain / sqrt(mean(x^2) + eps)
template <class T>
void rmsnorm(const T* x, const T* gain, T* out, std::size_t n, T eps) {
    T ss = T(0);
    for (std::size_t i = 0; i < n; ++i) ss += x[i] * x[i];
    const T inv = T(1) / std::sqrt(ss / T(n) + eps);
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * gain[i] * inv;
}

// in-place softmax over n entries (max-subtracted)
template <class T>
void softmax(T* x, std::size_t n) {
    T m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) { x[i] = std::exp(x[i] - m); s += x[i]; }
    const T inv = T(1) / s;
    for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

// out[i] = silu(gate[i]) * up[i]
template <class T>
void silu_gate(const T* gate, const T* up, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const T g = gate[i];
        out[i] = g / (T(1) + std::exp(-g)) * up[i];
    }
}

} // namespace scalar

// ------------------------------------------------------------ f32 dispatch

struct DispatchTable {
    const char* name;
    float (*dot)(const float*, const float*, std::size_t);
    void (*axpy)(float, const float*, float*, std::size_t);
    void (*scale)(float, float*, std::size_t);
    void (*gemm_nn)(std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                    const float*, std::size_t, float*, std::size_t, bool);
    void (*gemm_nt)(std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                    const float*, std::size_t, float*, std::size_t, bool);
    void (*gemm_tn)(std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                    const float*, std::size_t, float*, std::size_t, bool);
    void (*rmsnorm)(const float*, const float*, float*, std::size_t, float);
    void (*softmax)(float*, std::size_t);
    void (*silu_gate)(const float*, const float*, float*, std::size_t);
};

bool avx2_supported();
const DispatchTable& table_scalar();
const DispatchTable* table_avx2();   // nullptr when the CPU lacks AVX2+FMA
const DispatchTable& active();       // cached per-process selection

// ------------------------------------------------- generic entry points

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) return active().dot(a, b, n);
    else return scalar::dot(a, b, n);
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) active().axpy(alpha, x, y, n);
    else scalar::axpy(alpha, x, y, n);
}

template <class T>
void scale(T alpha, T* x, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) active().scale(alpha, x, n);
    else scalar::scale(alpha, x, n);
}

template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda,
             const T* B, std::size_t ldb, T* C, std::size_t ldc, bool accumulate = false) {
    if constexpr (std::is_same_v<T, float>) active().gemm_nn(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
    else scalar::gemm_nn(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda,
             const T* B, std::size_t ldb, T* C, std::size_t ldc, bool accumulate = false) {
    if constexpr (std::is_same_v<T, float>) active().gemm_nt(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
    else scalar::gemm_nt(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda,
             const T* B, std::size_t ldb, T* C, std::size_t ldc, bool accumulate = false) {
    if constexpr (std::is_same_v<T, float>) active().gemm_tn(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
    else scalar::gemm_tn(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

template <class T>
void rmsnorm(const T* x, const T* gain, T* out, std::size_t n, T eps) {
    if constexpr (std::is_same_v<T, float>) active().rmsnorm(x, gain, out, n, eps);
    else scalar::rmsnorm(x, gain, out, n, eps);
}

template <class T>
void softmax(T* x, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) active().softmax(x, n);
    else scalar::softmax(x, n);
}

template <class T>
void silu_gate(const T* gate, const T* up, T* out, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) active().silu_gate(gate, up, out, n);
    else scalar::silu_gate(gate, up, out, n);
}

// argmax with ties resolved to the lowest index
template <class T>
std::size_t argmax(const T* x, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (x[i] > x[best]) best = i;
    return best;
}

} // namespace cotlab::kernels
