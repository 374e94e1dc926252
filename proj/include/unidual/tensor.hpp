#pragma once

#include <cmath>
#include <memory>
#include <type_traits>

#include "unidual/common.hpp"
#include "unidual/rng.hpp"

namespace unidual {

// Dense tensor with value and (lazily allocated) gradient buffers.
// Activations use the canonical C×L×H×W layout with L=1 for images; weights
// use whatever rank their op defines. An absent gradient buffer means
// "exactly zero".
template <class T>
struct Tensor {
  static_assert(std::is_floating_point_v<T>);

  Shape shape;
  std::vector<T> v;
  std::vector<T> g;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0))
      : shape(std::move(s)), v(size_t(unidual::numel(shape)), fill) {
    for (int e : shape) require(e > 0, "tensor extents must be positive");
  }

  size_t size() const { return v.size(); }
  bool has_grad() const { return !g.empty(); }

  void ensure_grad() {
    if (g.empty()) g.assign(v.size(), T(0));
  }
  void clear_grad() {
    g.clear();
    g.shrink_to_fit();
  }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T* grad() {
    ensure_grad();
    return g.data();
  }

  // Rank-4 accessors for C×L×H×W activations.
  int c() const { return shape.at(0); }
  int l() const { return shape.at(1); }
  int h() const { return shape.at(2); }
  int w() const { return shape.at(3); }
  size_t plane() const { return size_t(h()) * w(); }  // one frame of one channel

  void fill_uniform(Rng& rng, T lo, T hi) {
    for (T& x : v) x = T(rng.uniform(double(lo), double(hi)));
  }
};

template <class T>
using Var = std::shared_ptr<Tensor<T>>;

template <class T>
Var<T> make_var(Shape s, bool requires_grad = false) {
  auto t = std::make_shared<Tensor<T>>(std::move(s));
  t->requires_grad = requires_grad;
  return t;
}

template <class T>
Var<T> to_var(const Tensor<T>& t) {
  auto v = std::make_shared<Tensor<T>>(t);
  v->requires_grad = false;
  v->clear_grad();
  return v;
}

/// C×1×H×W image copied L times into a static clip.
template <class T>
Tensor<T> repeat_frames(const Tensor<T>& img, int l) {
  require(img.shape.size() == 4 && img.l() == 1, "repeat_frames: expected C×1×H×W");
  require(l >= 1, "repeat_frames: L must be >= 1");
  Tensor<T> clip({img.c(), l, img.h(), img.w()});
  for (int c = 0; c < img.c(); ++c)
    for (int f = 0; f < l; ++f)
      std::copy_n(img.v.begin() + size_t(c) * img.plane(), img.plane(),
                  clip.v.begin() + (size_t(c) * l + f) * img.plane());
  return clip;
}

template <class T>
Tensor<T> extract_frame(const Tensor<T>& clip, int f) {
  require(clip.shape.size() == 4, "extract_frame: expected C×L×H×W");
  require(f >= 0 && f < clip.l(), "extract_frame: frame index out of range");
  Tensor<T> img({clip.c(), 1, clip.h(), clip.w()});
  for (int c = 0; c < clip.c(); ++c)
    std::copy_n(clip.v.begin() + (size_t(c) * clip.l() + f) * clip.plane(),
                clip.plane(), img.v.begin() + size_t(c) * clip.plane());
  return img;
}

template <class T>
bool all_finite(const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

template <class T>
void assert_finite(const Tensor<T>& t, const std::string& what) {
  if (!all_finite(t.v))
    throw NumericError("non-finite values in " + what);
}

}  // namespace unidual
