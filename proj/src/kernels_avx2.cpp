// AVX2 + FMA variants of the arithmetic kernels. This translation unit is the
// only one compiled with -mavx2 -mfma; it is reached solely through the
// runtime dispatch in kernels.cpp after a CPU feature probe.
//
// GEMM accumulates with FMA (one rounding instead of two), so its results may
// differ from the scalar reference in the final bits. The elementwise kernels
// below deliberately use separate mul/add so they match the scalar backend
// bit for bit.

#include "unidual/kernels.hpp"

#include <cstring>

#include "unidual/common.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define UNIDUAL_HAVE_AVX2 1
#else
#define UNIDUAL_HAVE_AVX2 0
#endif

namespace unidual::kernels::avx2 {

bool compiled_in() { return UNIDUAL_HAVE_AVX2 != 0; }

#if UNIDUAL_HAVE_AVX2

namespace {

template <class T>
struct V;

template <>
struct V<float> {
  using reg = __m256;
  static constexpr int lanes = 8;
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg set1(float x) { return _mm256_set1_ps(x); }
  static reg zero() { return _mm256_setzero_ps(); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
  static reg max(reg a, reg b) { return _mm256_max_ps(a, b); }
  static reg gt(reg a, reg b) { return _mm256_cmp_ps(a, b, _CMP_GT_OQ); }
  static reg and_(reg a, reg b) { return _mm256_and_ps(a, b); }
  static float hsum(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehl_ps(lo, lo);
    lo = _mm_add_ps(lo, sh);
    sh = _mm_shuffle_ps(lo, lo, 0x1);
    lo = _mm_add_ss(lo, sh);
    return _mm_cvtss_f32(lo);
  }
};

template <>
struct V<double> {
  using reg = __m256d;
  static constexpr int lanes = 4;
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg set1(double x) { return _mm256_set1_pd(x); }
  static reg zero() { return _mm256_setzero_pd(); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
  static reg max(reg a, reg b) { return _mm256_max_pd(a, b); }
  static reg gt(reg a, reg b) { return _mm256_cmp_pd(a, b, _CMP_GT_OQ); }
  static reg and_(reg a, reg b) { return _mm256_and_pd(a, b); }
  static double hsum(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    lo = _mm_add_sd(lo, sh);
    return _mm_cvtsd_f64(lo);
  }
};

// Shared body for gemm_nn (TransA=false) and gemm_tn (TransA=true): stream
// rows of B, broadcast elements of A. Blocks of 4 C-rows by 2 vectors.
template <class T, bool TransA>
void gemm_bcast(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
                T* c, int ldc, bool accumulate) {
  using W = V<T>;
  using reg = typename W::reg;
  constexpr int L = W::lanes;
  auto aval = [&](int i, int l) -> T {
    return TransA ? a[size_t(l) * lda + i] : a[size_t(i) * lda + l];
  };

  int i = 0;
  for (; i + 4 <= m; i += 4) {
    T* c0 = c + size_t(i) * ldc;
    T* c1 = c0 + ldc;
    T* c2 = c1 + ldc;
    T* c3 = c2 + ldc;
    int j = 0;
    for (; j + 2 * L <= n; j += 2 * L) {
      reg a00, a01, a10, a11, a20, a21, a30, a31;
      if (accumulate) {
        a00 = W::load(c0 + j);
        a01 = W::load(c0 + j + L);
        a10 = W::load(c1 + j);
        a11 = W::load(c1 + j + L);
        a20 = W::load(c2 + j);
        a21 = W::load(c2 + j + L);
        a30 = W::load(c3 + j);
        a31 = W::load(c3 + j + L);
      } else {
        a00 = a01 = a10 = a11 = a20 = a21 = a30 = a31 = W::zero();
      }
      for (int l = 0; l < k; ++l) {
        const T* brow = b + size_t(l) * ldb + j;
        reg b0 = W::load(brow);
        reg b1 = W::load(brow + L);
        reg v0 = W::set1(aval(i, l));
        a00 = W::fma(v0, b0, a00);
        a01 = W::fma(v0, b1, a01);
        reg v1 = W::set1(aval(i + 1, l));
        a10 = W::fma(v1, b0, a10);
        a11 = W::fma(v1, b1, a11);
        reg v2 = W::set1(aval(i + 2, l));
        a20 = W::fma(v2, b0, a20);
        a21 = W::fma(v2, b1, a21);
        reg v3 = W::set1(aval(i + 3, l));
        a30 = W::fma(v3, b0, a30);
        a31 = W::fma(v3, b1, a31);
      }
      W::store(c0 + j, a00);
      W::store(c0 + j + L, a01);
      W::store(c1 + j, a10);
      W::store(c1 + j + L, a11);
      W::store(c2 + j, a20);
      W::store(c2 + j + L, a21);
      W::store(c3 + j, a30);
      W::store(c3 + j + L, a31);
    }
    for (; j + L <= n; j += L) {
      reg r0 = accumulate ? W::load(c0 + j) : W::zero();
      reg r1 = accumulate ? W::load(c1 + j) : W::zero();
      reg r2 = accumulate ? W::load(c2 + j) : W::zero();
      reg r3 = accumulate ? W::load(c3 + j) : W::zero();
      for (int l = 0; l < k; ++l) {
        reg bv = W::load(b + size_t(l) * ldb + j);
        r0 = W::fma(W::set1(aval(i, l)), bv, r0);
        r1 = W::fma(W::set1(aval(i + 1, l)), bv, r1);
        r2 = W::fma(W::set1(aval(i + 2, l)), bv, r2);
        r3 = W::fma(W::set1(aval(i + 3, l)), bv, r3);
      }
      W::store(c0 + j, r0);
      W::store(c1 + j, r1);
      W::store(c2 + j, r2);
      W::store(c3 + j, r3);
    }
    for (; j < n; ++j) {
      for (int r = 0; r < 4; ++r) {
        T acc = accumulate ? c[size_t(i + r) * ldc + j] : T(0);
        for (int l = 0; l < k; ++l)
          acc += aval(i + r, l) * b[size_t(l) * ldb + j];
        c[size_t(i + r) * ldc + j] = acc;
      }
    }
  }
  for (; i < m; ++i) {
    T* crow = c + size_t(i) * ldc;
    int j = 0;
    for (; j + L <= n; j += L) {
      reg r0 = accumulate ? W::load(crow + j) : W::zero();
      for (int l = 0; l < k; ++l)
        r0 = W::fma(W::set1(aval(i, l)), W::load(b + size_t(l) * ldb + j), r0);
      W::store(crow + j, r0);
    }
    for (; j < n; ++j) {
      T acc = accumulate ? crow[j] : T(0);
      for (int l = 0; l < k; ++l) acc += aval(i, l) * b[size_t(l) * ldb + j];
      crow[j] = acc;
    }
  }
}

}  // namespace

template <class T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate) {
  gemm_bcast<T, false>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <class T>
void gemm_tn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate) {
  gemm_bcast<T, true>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

// C = A·B^T: rows of A dot rows of B. Lane-parallel partial sums reduced
// horizontally at the end, so the summation order differs from scalar.
template <class T>
void gemm_abt(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
              T* c, int ldc, bool accumulate) {
  using W = V<T>;
  using reg = typename W::reg;
  constexpr int L = W::lanes;

  int i = 0;
  for (; i + 2 <= m; i += 2) {
    const T* a0 = a + size_t(i) * lda;
    const T* a1 = a0 + lda;
    int j = 0;
    for (; j + 2 <= n; j += 2) {
      const T* b0 = b + size_t(j) * ldb;
      const T* b1 = b0 + ldb;
      reg s00 = W::zero(), s01 = W::zero(), s10 = W::zero(), s11 = W::zero();
      int l = 0;
      for (; l + L <= k; l += L) {
        reg av0 = W::load(a0 + l);
        reg av1 = W::load(a1 + l);
        reg bv0 = W::load(b0 + l);
        reg bv1 = W::load(b1 + l);
        s00 = W::fma(av0, bv0, s00);
        s01 = W::fma(av0, bv1, s01);
        s10 = W::fma(av1, bv0, s10);
        s11 = W::fma(av1, bv1, s11);
      }
      T t00 = W::hsum(s00), t01 = W::hsum(s01);
      T t10 = W::hsum(s10), t11 = W::hsum(s11);
      for (; l < k; ++l) {
        t00 += a0[l] * b0[l];
        t01 += a0[l] * b1[l];
        t10 += a1[l] * b0[l];
        t11 += a1[l] * b1[l];
      }
      T* c0 = c + size_t(i) * ldc + j;
      T* c1 = c0 + ldc;
      if (accumulate) {
        c0[0] += t00;
        c0[1] += t01;
        c1[0] += t10;
        c1[1] += t11;
      } else {
        c0[0] = t00;
        c0[1] = t01;
        c1[0] = t10;
        c1[1] = t11;
      }
    }
    for (; j < n; ++j) {
      const T* b0 = b + size_t(j) * ldb;
      reg s0 = W::zero(), s1 = W::zero();
      int l = 0;
      for (; l + L <= k; l += L) {
        reg bv = W::load(b0 + l);
        s0 = W::fma(W::load(a0 + l), bv, s0);
        s1 = W::fma(W::load(a1 + l), bv, s1);
      }
      T t0 = W::hsum(s0), t1 = W::hsum(s1);
      for (; l < k; ++l) {
        t0 += a0[l] * b0[l];
        t1 += a1[l] * b0[l];
      }
      if (accumulate) {
        c[size_t(i) * ldc + j] += t0;
        c[size_t(i + 1) * ldc + j] += t1;
      } else {
        c[size_t(i) * ldc + j] = t0;
        c[size_t(i + 1) * ldc + j] = t1;
      }
    }
  }
  for (; i < m; ++i) {
    const T* a0 = a + size_t(i) * lda;
    for (int j = 0; j < n; ++j) {
      const T* b0 = b + size_t(j) * ldb;
      reg s0 = W::zero();
      int l = 0;
      for (; l + L <= k; l += L) s0 = W::fma(W::load(a0 + l), W::load(b0 + l), s0);
      T t = W::hsum(s0);
      for (; l < k; ++l) t += a0[l] * b0[l];
      if (accumulate)
        c[size_t(i) * ldc + j] += t;
      else
        c[size_t(i) * ldc + j] = t;
    }
  }
}

template <class T>
void relu_fwd(const T* x, T* y, size_t n) {
  using W = V<T>;
  const auto z = W::zero();
  size_t i = 0;
  for (; i + W::lanes <= n; i += W::lanes) W::store(y + i, W::max(W::load(x + i), z));
  for (; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_bwd_accum(const T* x, const T* gy, T* gx, size_t n) {
  using W = V<T>;
  const auto z = W::zero();
  size_t i = 0;
  for (; i + W::lanes <= n; i += W::lanes) {
    auto mask = W::gt(W::load(x + i), z);
    W::store(gx + i, W::add(W::load(gx + i), W::and_(W::load(gy + i), mask)));
  }
  for (; i < n; ++i)
    if (x[i] > T(0)) gx[i] += gy[i];
}

template <class T>
void add(const T* a, const T* b, T* y, size_t n) {
  using W = V<T>;
  size_t i = 0;
  for (; i + W::lanes <= n; i += W::lanes)
    W::store(y + i, W::add(W::load(a + i), W::load(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

template <class T>
void accum(T* y, const T* x, size_t n) {
  using W = V<T>;
  size_t i = 0;
  for (; i + W::lanes <= n; i += W::lanes)
    W::store(y + i, W::add(W::load(y + i), W::load(x + i)));
  for (; i < n; ++i) y[i] += x[i];
}

template <class T>
void axpy_accum(size_t n, T alpha, const T* x, T* y) {
  using W = V<T>;
  const auto av = W::set1(alpha);
  size_t i = 0;
  for (; i + W::lanes <= n; i += W::lanes)
    W::store(y + i, W::add(W::load(y + i), W::mul(av, W::load(x + i))));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void affine(const T* x, T* y, size_t n, T scale, T shift) {
  using W = V<T>;
  const auto sv = W::set1(scale);
  const auto hv = W::set1(shift);
  size_t i = 0;
  for (; i + W::lanes <= n; i += W::lanes)
    W::store(y + i, W::add(W::mul(sv, W::load(x + i)), hv));
  for (; i < n; ++i) y[i] = scale * x[i] + shift;
}

template <class T>
void sgd_update(size_t n, T* w, const T* g, T* v, T lr, T momentum,
                T weight_decay) {
  using W = V<T>;
  const auto mu = W::set1(momentum);
  const auto wd = W::set1(weight_decay);
  const auto lrv = W::set1(lr);
  size_t i = 0;
  for (; i + W::lanes <= n; i += W::lanes) {
    auto wv = W::load(w + i);
    auto vv = W::add(W::add(W::mul(mu, W::load(v + i)), W::load(g + i)),
                     W::mul(wd, wv));
    W::store(v + i, vv);
    W::store(w + i, W::sub(wv, W::mul(lrv, vv)));
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
    w[i] -= lr * v[i];
  }
}

#define UNIDUAL_INSTANTIATE_AVX2(T)                                            \
  template void gemm_nn<T>(int, int, int, const T*, int, const T*, int, T*,   \
                           int, bool);                                         \
  template void gemm_tn<T>(int, int, int, const T*, int, const T*, int, T*,   \
                           int, bool);                                         \
  template void gemm_abt<T>(int, int, int, const T*, int, const T*, int, T*,  \
                            int, bool);                                        \
  template void relu_fwd<T>(const T*, T*, size_t);                            \
  template void relu_bwd_accum<T>(const T*, const T*, T*, size_t);            \
  template void add<T>(const T*, const T*, T*, size_t);                       \
  template void accum<T>(T*, const T*, size_t);                               \
  template void axpy_accum<T>(size_t, T, const T*, T*);                       \
  template void affine<T>(const T*, T*, size_t, T, T);                        \
  template void sgd_update<T>(size_t, T*, const T*, T*, T, T, T);

UNIDUAL_INSTANTIATE_AVX2(float)
UNIDUAL_INSTANTIATE_AVX2(double)
#undef UNIDUAL_INSTANTIATE_AVX2

#else  // !UNIDUAL_HAVE_AVX2

namespace {
[[noreturn]] void unavailable() {
  throw NumericError("avx2 backend called but not compiled in");
}
}  // namespace

template <class T>
void gemm_nn(int, int, int, const T*, int, const T*, int, T*, int, bool) {
  unavailable();
}
template <class T>
void gemm_tn(int, int, int, const T*, int, const T*, int, T*, int, bool) {
  unavailable();
}
template <class T>
void gemm_abt(int, int, int, const T*, int, const T*, int, T*, int, bool) {
  unavailable();
}
template <class T>
void relu_fwd(const T*, T*, size_t) {
  unavailable();
}
template <class T>
void relu_bwd_accum(const T*, const T*, T*, size_t) {
  unavailable();
}
template <class T>
void add(const T*, const T*, T*, size_t) {
  unavailable();
}
template <class T>
void accum(T*, const T*, size_t) {
  unavailable();
}
template <class T>
void axpy_accum(size_t, T, const T*, T*) {
  unavailable();
}
template <class T>
void affine(const T*, T*, size_t, T, T) {
  unavailable();
}
template <class T>
void sgd_update(size_t, T*, const T*, T*, T, T, T) {
  unavailable();
}

#define UNIDUAL_INSTANTIATE_AVX2(T)                                            \
  template void gemm_nn<T>(int, int, int, const T*, int, const T*, int, T*,   \
                           int, bool);                                         \
  template void gemm_tn<T>(int, int, int, const T*, int, const T*, int, T*,   \
                           int, bool);                                         \
  template void gemm_abt<T>(int, int, int, const T*, int, const T*, int, T*,  \
                            int, bool);                                        \
  template void relu_fwd<T>(const T*, T*, size_t);                            \
  template void relu_bwd_accum<T>(const T*, const T*, T*, size_t);            \
  template void add<T>(const T*, const T*, T*, size_t);                       \
  template void accum<T>(T*, const T*, size_t);                               \
  template void axpy_accum<T>(size_t, T, const T*, T*);                       \
  template void affine<T>(const T*, T*, size_t, T, T);                        \
  template void sgd_update<T>(size_t, T*, const T*, T*, T, T, T);

UNIDUAL_INSTANTIATE_AVX2(float)
UNIDUAL_INSTANTIATE_AVX2(double)
#undef UNIDUAL_INSTANTIATE_AVX2

#endif

}  // namespace unidual::kernels::avx2
