#include "unidual/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>

#include "unidual/common.hpp"

namespace unidual::kernels {

namespace scalar {

template <class T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + size_t(i) * ldc;
    if (!accumulate) std::memset(crow, 0, sizeof(T) * n);
    for (int l = 0; l < k; ++l) {
      const T av = a[size_t(i) * lda + l];
      const T* brow = b + size_t(l) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void gemm_tn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + size_t(i) * ldc;
    if (!accumulate) std::memset(crow, 0, sizeof(T) * n);
    for (int l = 0; l < k; ++l) {
      const T av = a[size_t(l) * lda + i];
      const T* brow = b + size_t(l) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void gemm_abt(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
              T* c, int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + size_t(i) * lda;
    T* crow = c + size_t(i) * ldc;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + size_t(j) * ldb;
      T acc = 0;
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      if (accumulate)
        crow[j] += acc;
      else
        crow[j] = acc;
    }
  }
}

template <class T>
void relu_fwd(const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_bwd_accum(const T* x, const T* gy, T* gx, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (x[i] > T(0)) gx[i] += gy[i];
}

template <class T>
void add(const T* a, const T* b, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <class T>
void accum(T* y, const T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += x[i];
}

template <class T>
void axpy_accum(size_t n, T alpha, const T* x, T* y) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void affine(const T* x, T* y, size_t n, T scale, T shift) {
  for (size_t i = 0; i < n; ++i) y[i] = scale * x[i] + shift;
}

template <class T>
void sgd_update(size_t n, T* w, const T* g, T* v, T lr, T momentum,
                T weight_decay) {
  for (size_t i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
    w[i] -= lr * v[i];
  }
}

#define UNIDUAL_INSTANTIATE_SCALAR(T)                                          \
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

UNIDUAL_INSTANTIATE_SCALAR(float)
UNIDUAL_INSTANTIATE_SCALAR(double)
#undef UNIDUAL_INSTANTIATE_SCALAR

}  // namespace scalar

const char* backend_name(Backend b) {
  return b == Backend::scalar ? "scalar" : "avx2";
}

bool backend_available(Backend b) {
  if (b == Backend::scalar) return true;
  if (!avx2::compiled_in()) return false;
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

Backend pick_default() {
  if (const char* env = std::getenv("UNIDUAL_BACKEND")) {
    std::string s(env);
    if (s == "scalar") return Backend::scalar;
    if (s == "avx2") {
      if (!backend_available(Backend::avx2))
        throw ValueError("UNIDUAL_BACKEND=avx2 but AVX2 is not available");
      return Backend::avx2;
    }
    throw ValueError("unknown UNIDUAL_BACKEND value: " + s);
  }
  return backend_available(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

Backend& current() {
  static Backend b = pick_default();
  return b;
}

}  // namespace

Backend active_backend() { return current(); }

void set_backend(Backend b) {
  if (!backend_available(b))
    throw ValueError(std::string("backend not available: ") + backend_name(b));
  current() = b;
}

#define UNIDUAL_DISPATCH(fn, ...)                    \
  do {                                               \
    if (current() == Backend::avx2)                  \
      avx2::fn(__VA_ARGS__);                         \
    else                                             \
      scalar::fn(__VA_ARGS__);                       \
  } while (0)

template <class T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate) {
  UNIDUAL_DISPATCH(gemm_nn, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
template <class T>
void gemm_tn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool accumulate) {
  UNIDUAL_DISPATCH(gemm_tn, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
template <class T>
void gemm_abt(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
              T* c, int ldc, bool accumulate) {
  UNIDUAL_DISPATCH(gemm_abt, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
template <class T>
void relu_fwd(const T* x, T* y, size_t n) {
  UNIDUAL_DISPATCH(relu_fwd, x, y, n);
}
template <class T>
void relu_bwd_accum(const T* x, const T* gy, T* gx, size_t n) {
  UNIDUAL_DISPATCH(relu_bwd_accum, x, gy, gx, n);
}
template <class T>
void add(const T* a, const T* b, T* y, size_t n) {
  UNIDUAL_DISPATCH(add, a, b, y, n);
}
template <class T>
void accum(T* y, const T* x, size_t n) {
  UNIDUAL_DISPATCH(accum, y, x, n);
}
template <class T>
void axpy_accum(size_t n, T alpha, const T* x, T* y) {
  UNIDUAL_DISPATCH(axpy_accum, n, alpha, x, y);
}
template <class T>
void affine(const T* x, T* y, size_t n, T scale, T shift) {
  UNIDUAL_DISPATCH(affine, x, y, n, scale, shift);
}
template <class T>
void sgd_update(size_t n, T* w, const T* g, T* v, T lr, T momentum,
                T weight_decay) {
  UNIDUAL_DISPATCH(sgd_update, n, w, g, v, lr, momentum, weight_decay);
}
#undef UNIDUAL_DISPATCH

#define UNIDUAL_INSTANTIATE_DISPATCH(T)                                        \
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

UNIDUAL_INSTANTIATE_DISPATCH(float)
UNIDUAL_INSTANTIATE_DISPATCH(double)
#undef UNIDUAL_INSTANTIATE_DISPATCH

}  // namespace unidual::kernels
