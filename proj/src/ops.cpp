#include "unidual/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "unidual/kernels.hpp"

namespace unidual {

namespace {

template <class T>
std::vector<T>& scratch(int which) {
  thread_local std::vector<T> bufs[2];
  return bufs[which];
}

template <class T>
bool wants_grad(Tape<T>* tape, std::initializer_list<const Var<T>*> ins) {
  if (!tape) return false;
  for (const Var<T>* v : ins)
    if (*v && (*v)->requires_grad) return true;
  return false;
}

// Unpacks x (CI×L×H×W) into cols (CI·d·d rows by L·OH·OW columns) so that a
// spatial convolution becomes one GEMM over all frames.
template <class T>
void im2col_spatial(const Tensor<T>& x, int d, int stride, int pad, int oh,
                    int ow, T* cols) {
  const int ci_n = x.c(), l_n = x.l(), h = x.h(), w = x.w();
  const size_t ns = size_t(l_n) * oh * ow;
  for (int ci = 0; ci < ci_n; ++ci) {
    for (int kh = 0; kh < d; ++kh) {
      for (int kw = 0; kw < d; ++kw) {
        T* row = cols + (size_t(ci) * d * d + size_t(kh) * d + kw) * ns;
        for (int l = 0; l < l_n; ++l) {
          const T* plane = x.data() + (size_t(ci) * l_n + l) * x.plane();
          T* dst = row + size_t(l) * oh * ow;
          for (int y = 0; y < oh; ++y, dst += ow) {
            const int ih = y * stride + kh - pad;
            if (ih < 0 || ih >= h) {
              std::memset(dst, 0, sizeof(T) * ow);
              continue;
            }
            const T* src = plane + size_t(ih) * w;
            if (stride == 1) {
              // Valid input columns for this kernel tap form one contiguous run.
              const int iw0 = kw - pad;
              const int lo = std::max(0, -iw0);
              const int hi = std::min(ow, w - iw0);
              if (lo > 0) std::memset(dst, 0, sizeof(T) * lo);
              if (hi > lo) std::memcpy(dst + lo, src + iw0 + lo, sizeof(T) * (hi - lo));
              if (hi < ow) std::memset(dst + hi, 0, sizeof(T) * (ow - hi));
            } else {
              for (int xo = 0; xo < ow; ++xo) {
                const int iw = xo * stride + kw - pad;
                dst[xo] = (iw >= 0 && iw < w) ? src[iw] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col_spatial.
template <class T>
void col2im_spatial(const T* cols, int ci_n, int l_n, int h, int w, int d,
                    int stride, int pad, int oh, int ow, T* gx) {
  const size_t ns = size_t(l_n) * oh * ow;
  for (int ci = 0; ci < ci_n; ++ci) {
    for (int kh = 0; kh < d; ++kh) {
      for (int kw = 0; kw < d; ++kw) {
        const T* row = cols + (size_t(ci) * d * d + size_t(kh) * d + kw) * ns;
        for (int l = 0; l < l_n; ++l) {
          T* plane = gx + (size_t(ci) * l_n + l) * size_t(h) * w;
          const T* src = row + size_t(l) * oh * ow;
          for (int y = 0; y < oh; ++y, src += ow) {
            const int ih = y * stride + kh - pad;
            if (ih < 0 || ih >= h) continue;
            T* dstrow = plane + size_t(ih) * w;
            if (stride == 1) {
              const int iw0 = kw - pad;
              const int lo = std::max(0, -iw0);
              const int hi = std::min(ow, w - iw0);
              if (hi > lo)
                kernels::accum(dstrow + iw0 + lo, src + lo, size_t(hi - lo));
            } else {
              for (int xo = 0; xo < ow; ++xo) {
                const int iw = xo * stride + kw - pad;
                if (iw >= 0 && iw < w) dstrow[iw] += src[xo];
              }
            }
          }
        }
      }
    }
  }
}

// cols for the temporal conv: row (ci,tau), column (lo, h·w); whole-plane
// copies with zero fill outside the padded clip.
template <class T>
void im2col_temporal(const Tensor<T>& x, int t, int stride, int pad, int lo_n,
                     T* cols) {
  const int ci_n = x.c(), l_n = x.l();
  const size_t hw = x.plane();
  const size_t ns = size_t(lo_n) * hw;
  for (int ci = 0; ci < ci_n; ++ci) {
    for (int tau = 0; tau < t; ++tau) {
      T* row = cols + (size_t(ci) * t + tau) * ns;
      for (int lo = 0; lo < lo_n; ++lo) {
        const int li = lo * stride + tau - pad;
        T* dst = row + size_t(lo) * hw;
        if (li < 0 || li >= l_n)
          std::memset(dst, 0, sizeof(T) * hw);
        else
          std::memcpy(dst, x.data() + (size_t(ci) * l_n + li) * hw, sizeof(T) * hw);
      }
    }
  }
}

template <class T>
void col2im_temporal(const T* cols, int ci_n, int l_n, size_t hw, int t,
                     int stride, int pad, int lo_n, T* gx) {
  const size_t ns = size_t(lo_n) * hw;
  for (int ci = 0; ci < ci_n; ++ci) {
    for (int tau = 0; tau < t; ++tau) {
      const T* row = cols + (size_t(ci) * t + tau) * ns;
      for (int lo = 0; lo < lo_n; ++lo) {
        const int li = lo * stride + tau - pad;
        if (li < 0 || li >= l_n) continue;
        kernels::accum(gx + (size_t(ci) * l_n + li) * hw, row + size_t(lo) * hw, hw);
      }
    }
  }
}

template <class T>
void add_bias_rows(T* out, const Tensor<T>* b, int rows, size_t row_len) {
  if (!b) return;
  for (int r = 0; r < rows; ++r)
    kernels::affine(out + r * row_len, out + r * row_len, row_len, T(1), b->v[r]);
}

template <class T>
void bias_grad_rows(const T* gy, Tensor<T>* b, int rows, size_t row_len) {
  if (!b || !b->requires_grad) return;
  T* gb = b->grad();
  for (int r = 0; r < rows; ++r) {
    T acc = 0;
    const T* row = gy + r * row_len;
    for (size_t j = 0; j < row_len; ++j) acc += row[j];
    gb[r] += acc;
  }
}

}  // namespace

template <class T>
Var<T> conv_spatial(Tape<T>* tape, const Var<T>& x, const Var<T>& w,
                    const Var<T>& b, int stride, int pad) {
  require(x && x->shape.size() == 4, "conv_spatial: input must be C×L×H×W");
  require(w && w->shape.size() == 4, "conv_spatial: weight must be Co×Ci×d×d");
  const int ci = x->c(), l = x->l(), h = x->h(), wd = x->w();
  const int co = w->shape[0], d = w->shape[2];
  require(w->shape[1] == ci, "conv_spatial: input channels " +
                                 std::to_string(ci) + " do not match weight " +
                                 std::to_string(w->shape[1]));
  require(w->shape[3] == d, "conv_spatial: kernel must be square");
  require(d % 2 == 1, "conv_spatial: kernel size must be odd, got " + std::to_string(d));
  require(stride >= 1 && pad >= 0, "conv_spatial: bad stride/pad");
  require(h + 2 * pad >= d && wd + 2 * pad >= d,
          "conv_spatial: kernel larger than padded input");
  if (b) require(int64_t(b->size()) == co, "conv_spatial: bias size mismatch");

  const int oh = (h + 2 * pad - d) / stride + 1;
  const int ow = (wd + 2 * pad - d) / stride + 1;
  const int ck = ci * d * d;
  const size_t ns = size_t(l) * oh * ow;

  auto& cols = scratch<T>(0);
  cols.resize(size_t(ck) * ns);
  im2col_spatial(*x, d, stride, pad, oh, ow, cols.data());

  auto out = make_var<T>({co, l, oh, ow});
  kernels::gemm_nn<T>(co, int(ns), ck, w->data(), ck, cols.data(), int(ns),
                      out->data(), int(ns), false);
  add_bias_rows(out->data(), b.get(), co, ns);

  if (wants_grad(tape, {&x, &w, &b})) {
    out->requires_grad = true;
    tape->record([x, w, b, out, stride, pad, d, oh, ow, ck, ns]() {
      if (!out->has_grad()) return;
      const T* gy = out->g.data();
      if (w->requires_grad) {
        auto& cols2 = scratch<T>(0);
        cols2.resize(size_t(ck) * ns);
        im2col_spatial(*x, d, stride, pad, oh, ow, cols2.data());
        kernels::gemm_abt<T>(w->shape[0], ck, int(ns), gy, int(ns),
                             cols2.data(), int(ns), w->grad(), ck, true);
      }
      bias_grad_rows(gy, b.get(), w->shape[0], ns);
      if (x->requires_grad) {
        auto& dcols = scratch<T>(1);
        dcols.resize(size_t(ck) * ns);
        kernels::gemm_tn<T>(ck, int(ns), w->shape[0], w->data(), ck, gy,
                            int(ns), dcols.data(), int(ns), false);
        col2im_spatial(dcols.data(), x->c(), x->l(), x->h(), x->w(), d, stride,
                       pad, oh, ow, x->grad());
      }
    });
  }
  return out;
}

template <class T>
Var<T> conv_temporal(Tape<T>* tape, const Var<T>& x, const Var<T>& w,
                     const Var<T>& b, int pad, int stride) {
  require(x && x->shape.size() == 4, "conv_temporal: input must be C×L×H×W");
  require(w && w->shape.size() == 3, "conv_temporal: weight must be Co×Ci×t");
  const int ci = x->c(), l = x->l();
  const int co = w->shape[0], t = w->shape[2];
  require(w->shape[1] == ci, "conv_temporal: input channels " +
                                 std::to_string(ci) + " do not match weight " +
                                 std::to_string(w->shape[1]));
  require(t % 2 == 1, "conv_temporal: t must be odd, got " + std::to_string(t));
  require(stride >= 1 && pad >= 0, "conv_temporal: bad stride/pad");
  require(t <= l + 2 * pad, "conv_temporal: t exceeds padded clip length");
  if (b) require(int64_t(b->size()) == co, "conv_temporal: bias size mismatch");

  const int lo = (l + 2 * pad - t) / stride + 1;
  const size_t hw = x->plane();
  const int ck = ci * t;
  const size_t ns = size_t(lo) * hw;

  auto& cols = scratch<T>(0);
  cols.resize(size_t(ck) * ns);
  im2col_temporal(*x, t, stride, pad, lo, cols.data());

  auto out = make_var<T>({co, lo, x->h(), x->w()});
  kernels::gemm_nn<T>(co, int(ns), ck, w->data(), ck, cols.data(), int(ns),
                      out->data(), int(ns), false);
  add_bias_rows(out->data(), b.get(), co, ns);

  if (wants_grad(tape, {&x, &w, &b})) {
    out->requires_grad = true;
    tape->record([x, w, b, out, pad, stride, t, lo, ck, ns, hw]() {
      if (!out->has_grad()) return;
      const T* gy = out->g.data();
      if (w->requires_grad) {
        auto& cols2 = scratch<T>(0);
        cols2.resize(size_t(ck) * ns);
        im2col_temporal(*x, t, stride, pad, lo, cols2.data());
        kernels::gemm_abt<T>(w->shape[0], ck, int(ns), gy, int(ns),
                             cols2.data(), int(ns), w->grad(), ck, true);
      }
      bias_grad_rows(gy, b.get(), w->shape[0], ns);
      if (x->requires_grad) {
        auto& dcols = scratch<T>(1);
        dcols.resize(size_t(ck) * ns);
        kernels::gemm_tn<T>(ck, int(ns), w->shape[0], w->data(), ck, gy,
                            int(ns), dcols.data(), int(ns), false);
        col2im_temporal(dcols.data(), x->c(), x->l(), hw, t, stride, pad, lo,
                        x->grad());
      }
    });
  }
  return out;
}

template <class T>
Var<T> relu(Tape<T>* tape, const Var<T>& x) {
  auto out = make_var<T>(x->shape);
  kernels::relu_fwd(x->data(), out->data(), x->size());
  if (wants_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out]() {
      if (!out->has_grad()) return;
      kernels::relu_bwd_accum(x->data(), out->g.data(), x->grad(), x->size());
    });
  }
  return out;
}

template <class T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  require(a->shape == b->shape, "add: shape mismatch " + shape_str(a->shape) +
                                    " vs " + shape_str(b->shape));
  auto out = make_var<T>(a->shape);
  kernels::add(a->data(), b->data(), out->data(), a->size());
  if (wants_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out]() {
      if (!out->has_grad()) return;
      if (a->requires_grad) kernels::accum(a->grad(), out->g.data(), a->size());
      if (b->requires_grad) kernels::accum(b->grad(), out->g.data(), b->size());
    });
  }
  return out;
}

template <class T>
Var<T> subsample_frames(Tape<T>* tape, const Var<T>& x, int stride) {
  require(stride >= 1, "subsample_frames: stride must be >= 1");
  const int l = x->l();
  const int lo = (l - 1) / stride + 1;
  const size_t hw = x->plane();
  auto out = make_var<T>({x->c(), lo, x->h(), x->w()});
  for (int c = 0; c < x->c(); ++c)
    for (int j = 0; j < lo; ++j)
      std::memcpy(out->data() + (size_t(c) * lo + j) * hw,
                  x->data() + (size_t(c) * l + size_t(j) * stride) * hw,
                  sizeof(T) * hw);
  if (wants_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, stride, lo, hw]() {
      if (!out->has_grad()) return;
      T* gx = x->grad();
      for (int c = 0; c < x->c(); ++c)
        for (int j = 0; j < lo; ++j)
          kernels::accum(gx + (size_t(c) * x->l() + size_t(j) * stride) * hw,
                         out->g.data() + (size_t(c) * lo + j) * hw, hw);
    });
  }
  return out;
}

template <class T>
Var<T> global_pool(Tape<T>* tape, const Var<T>& x, bool over_l, bool over_h,
                   bool over_w) {
  require(x->shape.size() == 4, "global_pool: input must be C×L×H×W");
  require(over_l || over_h || over_w, "global_pool: no axes selected");
  const int c = x->c(), l = x->l(), h = x->h(), w = x->w();
  const int ol = over_l ? 1 : l, oh = over_h ? 1 : h, ow = over_w ? 1 : w;
  const int64_t n = (over_l ? l : 1) * int64_t(over_h ? h : 1) * (over_w ? w : 1);
  auto out = make_var<T>({c, ol, oh, ow});
  const T inv = T(1) / T(n);
  for (int cc = 0; cc < c; ++cc)
    for (int ll = 0; ll < l; ++ll)
      for (int hh = 0; hh < h; ++hh)
        for (int ww = 0; ww < w; ++ww) {
          const size_t si = ((size_t(cc) * l + ll) * h + hh) * w + ww;
          const size_t di =
              ((size_t(cc) * ol + (over_l ? 0 : ll)) * oh + (over_h ? 0 : hh)) * ow +
              (over_w ? 0 : ww);
          out->v[di] += x->v[si];
        }
  for (T& v : out->v) v *= inv;
  if (wants_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, over_l, over_h, over_w, ol, oh, ow, inv]() {
      if (!out->has_grad()) return;
      T* gx = x->grad();
      const int c = x->c(), l = x->l(), h = x->h(), w = x->w();
      for (int cc = 0; cc < c; ++cc)
        for (int ll = 0; ll < l; ++ll)
          for (int hh = 0; hh < h; ++hh)
            for (int ww = 0; ww < w; ++ww) {
              const size_t si = ((size_t(cc) * l + ll) * h + hh) * w + ww;
              const size_t di = ((size_t(cc) * ol + (over_l ? 0 : ll)) * oh +
                                 (over_h ? 0 : hh)) * ow + (over_w ? 0 : ww);
              gx[si] += out->g[di] * inv;
            }
    });
  }
  return out;
}

template <class T>
Var<T> max_pool_spatial(Tape<T>* tape, const Var<T>& x, int k, int stride,
                        int pad) {
  require(x->shape.size() == 4, "max_pool_spatial: input must be C×L×H×W");
  require(k >= 1 && stride >= 1 && pad >= 0 && pad < k,
          "max_pool_spatial: bad window/stride/pad");
  const int c = x->c(), l = x->l(), h = x->h(), w = x->w();
  require(k <= h + 2 * pad && k <= w + 2 * pad,
          "max_pool_spatial: window larger than padded input");
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  auto out = make_var<T>({c, l, oh, ow});
  auto argmax = std::make_shared<std::vector<int32_t>>(out->size());
  size_t di = 0;
  for (int cc = 0; cc < c; ++cc)
    for (int ll = 0; ll < l; ++ll) {
      const T* plane = x->data() + (size_t(cc) * l + ll) * x->plane();
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo, ++di) {
          T best = 0;
          int32_t best_i = -1;
          // First maximum in row-major scan order wins ties.
          for (int ky = 0; ky < k; ++ky) {
            const int ih = y * stride + ky - pad;
            if (ih < 0 || ih >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int iw = xo * stride + kx - pad;
              if (iw < 0 || iw >= w) continue;
              const T v = plane[size_t(ih) * w + iw];
              if (best_i < 0 || v > best) {
                best = v;
                best_i = int32_t(ih * w + iw);
              }
            }
          }
          out->v[di] = best;
          (*argmax)[di] = int32_t((size_t(cc) * l + ll) * x->plane()) + best_i;
        }
    }
  if (wants_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, argmax]() {
      if (!out->has_grad()) return;
      T* gx = x->grad();
      for (size_t i = 0; i < out->size(); ++i) gx[(*argmax)[i]] += out->g[i];
    });
  }
  return out;
}

template <class T>
Var<T> linear(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require(w && w->shape.size() == 2, "linear: weight must be K×F");
  const int kk = w->shape[0], f = w->shape[1];
  require(int64_t(x->size()) == f, "linear: input size " +
                                       std::to_string(x->size()) +
                                       " does not match weight F=" + std::to_string(f));
  if (b) require(int64_t(b->size()) == kk, "linear: bias size mismatch");
  auto out = make_var<T>({kk});
  for (int i = 0; i < kk; ++i) {
    const T* row = w->data() + size_t(i) * f;
    T acc = b ? b->v[i] : T(0);
    for (int j = 0; j < f; ++j) acc += row[j] * x->v[j];
    out->v[i] = acc;
  }
  if (wants_grad(tape, {&x, &w, &b})) {
    out->requires_grad = true;
    tape->record([x, w, b, out, kk, f]() {
      if (!out->has_grad()) return;
      const T* gy = out->g.data();
      if (w->requires_grad) {
        T* gw = w->grad();
        for (int i = 0; i < kk; ++i)
          kernels::axpy_accum(size_t(f), gy[i], x->data(), gw + size_t(i) * f);
      }
      if (b && b->requires_grad) {
        T* gb = b->grad();
        for (int i = 0; i < kk; ++i) gb[i] += gy[i];
      }
      if (x->requires_grad) {
        T* gx = x->grad();
        for (int i = 0; i < kk; ++i)
          kernels::axpy_accum(size_t(f), gy[i], w->data() + size_t(i) * f, gx);
      }
    });
  }
  return out;
}

template <class T>
Var<T> softmax_xent(Tape<T>* tape, const Var<T>& logits, int label) {
  const int k = int(logits->size());
  require(label >= 0 && label < k,
          "softmax_xent: label " + std::to_string(label) + " out of range [0," +
              std::to_string(k) + ")");
  T m = logits->v[0];
  for (T v : logits->v) m = std::max(m, v);
  T z = 0;
  auto probs = std::make_shared<std::vector<T>>(k);
  for (int i = 0; i < k; ++i) {
    (*probs)[i] = std::exp(logits->v[i] - m);
    z += (*probs)[i];
  }
  for (T& p : *probs) p /= z;
  auto out = make_var<T>({1});
  out->v[0] = std::log(z) + m - logits->v[label];
  if (wants_grad(tape, {&logits})) {
    out->requires_grad = true;
    tape->record([logits, out, probs, label]() {
      if (!out->has_grad()) return;
      const T g0 = out->g[0];
      T* gl = logits->grad();
      for (size_t i = 0; i < probs->size(); ++i)
        gl[i] += g0 * ((*probs)[i] - (int(i) == label ? T(1) : T(0)));
    });
  }
  return out;
}

template <class T>
Var<T> batch_norm(Tape<T>* tape, const Var<T>& x, const Var<T>& gamma,
                  const Var<T>& beta, NormStats<T>& stats, bool train, T eps,
                  T momentum) {
  require(x->shape.size() == 4, "batch_norm: input must be C×L×H×W");
  const int c = x->c();
  require(int64_t(gamma->size()) == c && int64_t(beta->size()) == c,
          "batch_norm: gamma/beta size mismatch");
  require(eps > T(0), "batch_norm: eps must be positive");
  const size_t n = x->size() / c;
  auto out = make_var<T>(x->shape);

  auto mean = std::make_shared<std::vector<T>>(c);
  auto inv = std::make_shared<std::vector<T>>(c);
  if (train) {
    for (int cc = 0; cc < c; ++cc) {
      const T* px = x->data() + size_t(cc) * n;
      T s = 0;
      for (size_t i = 0; i < n; ++i) s += px[i];
      const T mu = s / T(n);
      T vs = 0;
      for (size_t i = 0; i < n; ++i) {
        const T d = px[i] - mu;
        vs += d * d;
      }
      const T var = vs / T(n);
      (*mean)[cc] = mu;
      (*inv)[cc] = T(1) / std::sqrt(var + eps);
      stats.mean->v[cc] = (T(1) - momentum) * stats.mean->v[cc] + momentum * mu;
      stats.var->v[cc] = (T(1) - momentum) * stats.var->v[cc] + momentum * var;
    }
    stats.count->v[0] += T(1);
  } else {
    if (stats.count->v[0] == T(0))
      throw NumericError("batch_norm: eval mode with uninitialized running stats");
    for (int cc = 0; cc < c; ++cc) {
      (*mean)[cc] = stats.mean->v[cc];
      (*inv)[cc] = T(1) / std::sqrt(stats.var->v[cc] + eps);
    }
  }
  for (int cc = 0; cc < c; ++cc) {
    const T scale = gamma->v[cc] * (*inv)[cc];
    const T shift = beta->v[cc] - scale * (*mean)[cc];
    kernels::affine(x->data() + size_t(cc) * n, out->data() + size_t(cc) * n, n,
                    scale, shift);
  }

  if (wants_grad(tape, {&x, &gamma, &beta})) {
    out->requires_grad = true;
    tape->record([x, gamma, beta, out, mean, inv, train, n]() {
      if (!out->has_grad()) return;
      const int c = x->c();
      for (int cc = 0; cc < c; ++cc) {
        const T* px = x->data() + size_t(cc) * n;
        const T* gy = out->g.data() + size_t(cc) * n;
        const T mu = (*mean)[cc], iv = (*inv)[cc];
        T sg = 0, sgx = 0;
        for (size_t i = 0; i < n; ++i) {
          sg += gy[i];
          sgx += gy[i] * (px[i] - mu) * iv;
        }
        if (gamma->requires_grad) gamma->grad()[cc] += sgx;
        if (beta->requires_grad) beta->grad()[cc] += sg;
        if (x->requires_grad) {
          T* gx = x->grad() + size_t(cc) * n;
          const T scale = gamma->v[cc] * iv;
          if (train) {
            const T a = sg / T(n), b2 = sgx / T(n);
            for (size_t i = 0; i < n; ++i)
              gx[i] += scale * (gy[i] - a - (px[i] - mu) * iv * b2);
          } else {
            for (size_t i = 0; i < n; ++i) gx[i] += scale * gy[i];
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Var<T> scale_gradient(Tape<T>* tape, const Var<T>& x, T factor) {
  auto out = make_var<T>(x->shape);
  out->v = x->v;
  if (wants_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, factor]() {
      if (!out->has_grad()) return;
      kernels::axpy_accum(x->size(), factor, out->g.data(), x->grad());
    });
  }
  return out;
}

template <class T>
Var<T> weighted_sum(Tape<T>* tape, const std::vector<Var<T>>& xs,
                    const std::vector<T>& weights) {
  require(!xs.empty() && xs.size() == weights.size(),
          "weighted_sum: needs matching non-empty terms and weights");
  auto out = make_var<T>({1});
  bool any = false;
  for (size_t i = 0; i < xs.size(); ++i) {
    require(xs[i]->size() == 1, "weighted_sum: terms must be scalars");
    out->v[0] += weights[i] * xs[i]->v[0];
    any = any || xs[i]->requires_grad;
  }
  if (tape && any) {
    out->requires_grad = true;
    auto terms = xs;
    auto ws = weights;
    tape->record([terms, ws, out]() {
      if (!out->has_grad()) return;
      for (size_t i = 0; i < terms.size(); ++i)
        if (terms[i]->requires_grad) terms[i]->grad()[0] += ws[i] * out->g[0];
    });
  }
  return out;
}

template <class T>
std::vector<T> softmax(const Tensor<T>& logits) {
  std::vector<T> p(logits.size());
  T m = logits.v[0];
  for (T v : logits.v) m = std::max(m, v);
  T z = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits.v[i] - m);
    z += p[i];
  }
  for (T& v : p) v /= z;
  return p;
}

#define UNIDUAL_INSTANTIATE_OPS(T)                                             \
  template Var<T> conv_spatial<T>(Tape<T>*, const Var<T>&, const Var<T>&,     \
                                  const Var<T>&, int, int);                    \
  template Var<T> conv_temporal<T>(Tape<T>*, const Var<T>&, const Var<T>&,    \
                                   const Var<T>&, int, int);                   \
  template Var<T> relu<T>(Tape<T>*, const Var<T>&);                           \
  template Var<T> add<T>(Tape<T>*, const Var<T>&, const Var<T>&);             \
  template Var<T> subsample_frames<T>(Tape<T>*, const Var<T>&, int);          \
  template Var<T> global_pool<T>(Tape<T>*, const Var<T>&, bool, bool, bool);  \
  template Var<T> max_pool_spatial<T>(Tape<T>*, const Var<T>&, int, int, int);\
  template Var<T> linear<T>(Tape<T>*, const Var<T>&, const Var<T>&,           \
                            const Var<T>&);                                    \
  template Var<T> softmax_xent<T>(Tape<T>*, const Var<T>&, int);              \
  template Var<T> batch_norm<T>(Tape<T>*, const Var<T>&, const Var<T>&,       \
                                const Var<T>&, NormStats<T>&, bool, T, T);    \
  template Var<T> scale_gradient<T>(Tape<T>*, const Var<T>&, T);              \
  template Var<T> weighted_sum<T>(Tape<T>*, const std::vector<Var<T>>&,       \
                                  const std::vector<T>&);                      \
  template std::vector<T> softmax<T>(const Tensor<T>&);

UNIDUAL_INSTANTIATE_OPS(float)
UNIDUAL_INSTANTIATE_OPS(double)
#undef UNIDUAL_INSTANTIATE_OPS

}  // namespace unidual
