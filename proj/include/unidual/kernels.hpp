#pragma once

#include <cstddef>

namespace unidual::kernels {

// Arithmetic inner loops used by the ops layer. Every routine has a scalar
// reference implementation and, on x86-64 with AVX2, a vectorized variant.
// The backend is chosen once at startup (override with set_backend() or the
// UNIDUAL_BACKEND environment variable: "scalar" or "avx2").
//
// Vectorized GEMM uses FMA and, for gemm_abt, lane-split reductions, so its
// results may differ from the scalar reference in the last bits; the
// equivalence tests bound that difference. Elementwise kernels are
// bit-identical across backends. Within one backend every kernel is
// deterministic: same inputs give the same bits on every call.

enum class Backend { scalar, avx2 };

bool backend_available(Backend b);
Backend active_backend();
void set_backend(Backend b);  // throws ValueError if unavailable
const char* backend_name(Backend b);

// Row-major GEMM, alpha = 1. `accumulate` selects C += ... over C = ...
// gemm_nn:  C[m,n] = A[m,k]   * B[k,n]
// gemm_tn:  C[m,n] = A'[k,m]^T* B[k,n]   (A stored k-by-m)
// gemm_abt: C[m,n] = A[m,k]   * B'[n,k]^T (B stored n-by-k)
template <class T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate);
template <class T>
void gemm_tn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate);
template <class T>
void gemm_abt(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
              T* c, int ldc, bool accumulate);

template <class T>
void relu_fwd(const T* x, T* y, size_t n);
template <class T>
void relu_bwd_accum(const T* x, const T* gy, T* gx, size_t n);  // gx += gy·[x>0]

template <class T>
void add(const T* a, const T* b, T* y, size_t n);
template <class T>
void accum(T* y, const T* x, size_t n);  // y += x
template <class T>
void axpy_accum(size_t n, T alpha, const T* x, T* y);  // y += alpha·x
template <class T>
void affine(const T* x, T* y, size_t n, T scale, T shift);  // y = scale·x + shift

// v = momentum·v + g + weight_decay·w;  w -= lr·v
template <class T>
void sgd_update(size_t n, T* w, const T* g, T* v, T lr, T momentum,
                T weight_decay);

// Direct access to both implementations, for equivalence tests.
namespace scalar {
template <class T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate);
template <class T>
void gemm_tn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate);
template <class T>
void gemm_abt(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
              T* c, int ldc, bool accumulate);
template <class T>
void relu_fwd(const T* x, T* y, size_t n);
template <class T>
void relu_bwd_accum(const T* x, const T* gy, T* gx, size_t n);
template <class T>
void add(const T* a, const T* b, T* y, size_t n);
template <class T>
void accum(T* y, const T* x, size_t n);
template <class T>
void axpy_accum(size_t n, T alpha, const T* x, T* y);
template <class T>
void affine(const T* x, T* y, size_t n, T scale, T shift);
template <class T>
void sgd_update(size_t n, T* w, const T* g, T* v, T lr, T momentum,
                T weight_decay);
}  // namespace scalar

namespace avx2 {
bool compiled_in();
template <class T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate);
template <class T>
void gemm_tn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate);
template <class T>
void gemm_abt(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
              T* c, int ldc, bool accumulate);
template <class T>
void relu_fwd(const T* x, T* y, size_t n);
template <class T>
void relu_bwd_accum(const T* x, const T* gy, T* gx, size_t n);
template <class T>
void add(const T* a, const T* b, T* y, size_t n);
template <class T>
void accum(T* y, const T* x, size_t n);
template <class T>
void axpy_accum(size_t n, T alpha, const T* x, T* y);
template <class T>
void affine(const T* x, T* y, size_t n, T scale, T shift);
template <class T>
void sgd_update(size_t n, T* w, const T* g, T* v, T lr, T momentum,
                T weight_decay);
}  // namespace avx2

}  // namespace unidual::kernels
