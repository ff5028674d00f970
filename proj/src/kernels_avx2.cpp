// AVX2+FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma; callers must check avx2_supported() (the dispatcher does).
// Every output element accumulates along K in ascending order through a
// single FMA chain, so results are reproducible and independent of the
// surrounding tile shape.

#include "cotlab/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace cotlab::kernels {

namespace {

inline float hsum8(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    __m128 s = _mm_add_ps(lo, hi);          // (v0+v4, v1+v5, v2+v6, v3+v7)
    __m128 sh = _mm_movehl_ps(s, s);
    s = _mm_add_ps(s, sh);                  // (e0+e2, e1+e3, -, -)
    sh = _mm_shuffle_ps(s, s, 0x1);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
}

inline float dot_one(const float* a, const float* b, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t k = 0;
    for (; k + 8 <= n; k += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + k), _mm256_loadu_ps(b + k), acc);
    float s = hsum8(acc);
    for (; k < n; ++k) s += a[k] * b[k];
    return s;
}

float v_dot(const float* a, const float* b, std::size_t n) { return dot_one(a, b, n); }

void v_axpy(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void v_scale(float alpha, float* x, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) x[i] *= alpha;
}

// ---- gemm_nn: C[M x N] (+)= A[M x K] * B[K x N] ----
// 4-row x 16-col register tile, broadcast-A / load-B, FMA over ascending k.

template <int MR>
inline void nn_tile16(std::size_t K, const float* A, std::size_t lda, const float* B,
                      std::size_t ldb, float* C, std::size_t ldc, bool acc) {
    __m256 c[MR][2];
    for (int i = 0; i < MR; ++i) {
        c[i][0] = acc ? _mm256_loadu_ps(C + i * ldc) : _mm256_setzero_ps();
        c[i][1] = acc ? _mm256_loadu_ps(C + i * ldc + 8) : _mm256_setzero_ps();
    }
    for (std::size_t k = 0; k < K; ++k) {
        const __m256 b0 = _mm256_loadu_ps(B + k * ldb);
        const __m256 b1 = _mm256_loadu_ps(B + k * ldb + 8);
        for (int i = 0; i < MR; ++i) {
            const __m256 a = _mm256_set1_ps(A[i * lda + k]);
            c[i][0] = _mm256_fmadd_ps(a, b0, c[i][0]);
            c[i][1] = _mm256_fmadd_ps(a, b1, c[i][1]);
        }
    }
    for (int i = 0; i < MR; ++i) {
        _mm256_storeu_ps(C + i * ldc, c[i][0]);
        _mm256_storeu_ps(C + i * ldc + 8, c[i][1]);
    }
}

template <int MR>
inline void nn_tile8(std::size_t K, const float* A, std::size_t lda, const float* B,
                     std::size_t ldb, float* C, std::size_t ldc, bool acc) {
    __m256 c[MR];
    for (int i = 0; i < MR; ++i)
        c[i] = acc ? _mm256_loadu_ps(C + i * ldc) : _mm256_setzero_ps();
    for (std::size_t k = 0; k < K; ++k) {
        const __m256 b0 = _mm256_loadu_ps(B + k * ldb);
        for (int i = 0; i < MR; ++i)
            c[i] = _mm256_fmadd_ps(_mm256_set1_ps(A[i * lda + k]), b0, c[i]);
    }
    for (int i = 0; i < MR; ++i) _mm256_storeu_ps(C + i * ldc, c[i]);
}

template <int MR>
inline void nn_rows(std::size_t N, std::size_t K, const float* A, std::size_t lda,
                    const float* B, std::size_t ldb, float* C, std::size_t ldc, bool acc) {
    std::size_t j = 0;
    for (; j + 16 <= N; j += 16) nn_tile16<MR>(K, A, lda, B + j, ldb, C + j, ldc, acc);
    for (; j + 8 <= N; j += 8) nn_tile8<MR>(K, A, lda, B + j, ldb, C + j, ldc, acc);
    for (; j < N; ++j) {
        for (int i = 0; i < MR; ++i) {
            float s = acc ? C[i * ldc + j] : 0.0f;
            for (std::size_t k = 0; k < K; ++k) s = std::fma(A[i * lda + k], B[k * ldb + j], s);
            C[i * ldc + j] = s;
        }
    }
}

void v_gemm_nn(std::size_t M, std::size_t N, std::size_t K, const float* A, std::size_t lda,
               const float* B, std::size_t ldb, float* C, std::size_t ldc, bool acc) {
    std::size_t r = 0;
    for (; r + 4 <= M; r += 4) nn_rows<4>(N, K, A + r * lda, lda, B, ldb, C + r * ldc, ldc, acc);
    for (; r < M; ++r) nn_rows<1>(N, K, A + r * lda, lda, B, ldb, C + r * ldc, ldc, acc);
}

// ---- gemm_nt: C[M x N] (+)= A[M x K] * B[N x K]^T ----
// Four independent row-dots at a time to hide FMA latency.

void v_gemm_nt(std::size_t M, std::size_t N, std::size_t K, const float* A, std::size_t lda,
               const float* B, std::size_t ldb, float* C, std::size_t ldc, bool acc) {
    for (std::size_t r = 0; r < M; ++r) {
        const float* a = A + r * lda;
        float* c = C + r * ldc;
        std::size_t j = 0;
        for (; j + 4 <= N; j += 4) {
            const float* b0 = B + j * ldb;
            const float* b1 = B + (j + 1) * ldb;
            const float* b2 = B + (j + 2) * ldb;
            const float* b3 = B + (j + 3) * ldb;
            __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
            __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
            std::size_t k = 0;
            for (; k + 8 <= K; k += 8) {
                const __m256 av = _mm256_loadu_ps(a + k);
                s0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + k), s0);
                s1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + k), s1);
                s2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + k), s2);
                s3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + k), s3);
            }
            float r0 = hsum8(s0), r1 = hsum8(s1), r2 = hsum8(s2), r3 = hsum8(s3);
            for (; k < K; ++k) {
                r0 += a[k] * b0[k];
                r1 += a[k] * b1[k];
                r2 += a[k] * b2[k];
                r3 += a[k] * b3[k];
            }
            if (acc) { c[j] += r0; c[j + 1] += r1; c[j + 2] += r2; c[j + 3] += r3; }
            else { c[j] = r0; c[j + 1] = r1; c[j + 2] = r2; c[j + 3] = r3; }
        }
        for (; j < N; ++j) {
            const float s = dot_one(a, B + j * ldb, K);
            c[j] = acc ? c[j] + s : s;
        }
    }
}

// ---- gemm_tn: C[M x N] (+)= A[K x M]^T * B[K x N] ----

template <int MR>
inline void tn_rows(std::size_t N, std::size_t K, const float* A, std::size_t lda,
                    const float* B, std::size_t ldb, float* C, std::size_t ldc, bool acc) {
    // A points at column block start: element (k, i) is A[k * lda + i]
    std::size_t j = 0;
    for (; j + 16 <= N; j += 16) {
        __m256 c[MR][2];
        for (int i = 0; i < MR; ++i) {
            c[i][0] = acc ? _mm256_loadu_ps(C + i * ldc + j) : _mm256_setzero_ps();
            c[i][1] = acc ? _mm256_loadu_ps(C + i * ldc + j + 8) : _mm256_setzero_ps();
        }
        for (std::size_t k = 0; k < K; ++k) {
            const __m256 b0 = _mm256_loadu_ps(B + k * ldb + j);
            const __m256 b1 = _mm256_loadu_ps(B + k * ldb + j + 8);
            for (int i = 0; i < MR; ++i) {
                const __m256 a = _mm256_set1_ps(A[k * lda + i]);
                c[i][0] = _mm256_fmadd_ps(a, b0, c[i][0]);
                c[i][1] = _mm256_fmadd_ps(a, b1, c[i][1]);
            }
        }
        for (int i = 0; i < MR; ++i) {
            _mm256_storeu_ps(C + i * ldc + j, c[i][0]);
            _mm256_storeu_ps(C + i * ldc + j + 8, c[i][1]);
        }
    }
    for (; j < N; ++j) {
        for (int i = 0; i < MR; ++i) {
            float s = acc ? C[i * ldc + j] : 0.0f;
            for (std::size_t k = 0; k < K; ++k) s = std::fma(A[k * lda + i], B[k * ldb + j], s);
            C[i * ldc + j] = s;
        }
    }
}

void v_gemm_tn(std::size_t M, std::size_t N, std::size_t K, const float* A, std::size_t lda,
               const float* B, std::size_t ldb, float* C, std::size_t ldc, bool acc) {
    std::size_t r = 0;
    for (; r + 4 <= M; r += 4) tn_rows<4>(N, K, A + r, lda, B, ldb, C + r * ldc, ldc, acc);
    for (; r < M; ++r) tn_rows<1>(N, K, A + r, lda, B, ldb, C + r * ldc, ldc, acc);
}

void v_rmsnorm(const float* x, const float* gain, float* out, std::size_t n, float eps) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        acc = _mm256_fmadd_ps(v, v, acc);
    }
    float ss = hsum8(acc);
    for (; i < n; ++i) ss += x[i] * x[i];
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(n) + eps);
    const __m256 vinv = _mm256_set1_ps(inv);
    i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(gain + i));
        _mm256_storeu_ps(out + i, _mm256_mul_ps(v, vinv));
    }
    for (; i < n; ++i) out[i] = x[i] * gain[i] * inv;
}

void v_softmax(float* x, std::size_t n) {
    std::size_t i = 0;
    __m256 vm = _mm256_set1_ps(-3.4e38f);
    for (; i + 8 <= n; i += 8) vm = _mm256_max_ps(vm, _mm256_loadu_ps(x + i));
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, vm);
    float m = lanes[0];
    for (int l = 1; l < 8; ++l) m = lanes[l] > m ? lanes[l] : m;
    for (; i < n; ++i) m = x[i] > m ? x[i] : m;
    float s = 0.0f;
    for (std::size_t k = 0; k < n; ++k) { x[k] = std::exp(x[k] - m); s += x[k]; }
    v_scale(1.0f / s, x, n);
}

void v_silu_gate(const float* g, const float* u, float* o, std::size_t n) {
    scalar::silu_gate(g, u, o, n);  // exp-bound; scalar loop
}

const DispatchTable kAvx2Table = {
    "avx2", v_dot, v_axpy, v_scale, v_gemm_nn, v_gemm_nt, v_gemm_tn,
    v_rmsnorm, v_softmax, v_silu_gate,
};

} // namespace

const DispatchTable* table_avx2() {
    return avx2_supported() ? &kAvx2Table : nullptr;
}

} // namespace cotlab::kernels

#else // no AVX2 at compile time for this TU

namespace cotlab::kernels {
const DispatchTable* table_avx2() { return nullptr; }
} // namespace cotlab::kernels

#endif
