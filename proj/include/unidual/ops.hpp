#pragma once

#include <functional>

#include "unidual/tensor.hpp"

namespace unidual {

// Reverse-mode tape. Ops append one backward step per recorded node;
// backward() runs them in exact reverse creation order, which is a valid
// topological order because every consumer is recorded after its producer.
// A tape may span several forward passes (e.g. all examples of a batch);
// backward() consumes it.
template <class T>
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  /// Seeds d(loss)/d(loss)=1 and propagates. Throws ValueError for a
  /// non-scalar loss or a second backward on the same recording.
  void backward(const Var<T>& loss) {
    require(loss && loss->size() == 1,
            "backward requires a scalar tensor, got " +
                (loss ? shape_str(loss->shape) : std::string("null")));
    require(!consumed_, "backward already called on this tape");
    consumed_ = true;
    loss->ensure_grad();
    loss->g[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() {
    nodes_.clear();
    consumed_ = false;
  }
  size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// Running statistics of one batch-norm site (one set per pathway when the
// per-pathway mode is active). count doubles as the initialization flag.
template <class T>
struct NormStats {
  Var<T> mean;
  Var<T> var;
  Var<T> count;
};

// All ops accept tape == nullptr for inference-only evaluation. Bias
// arguments may be null. Gradients accumulate into existing buffers.

template <class T>
Var<T> conv_spatial(Tape<T>* tape, const Var<T>& x, const Var<T>& w,
                    const Var<T>& b, int stride, int pad);

template <class T>
Var<T> conv_temporal(Tape<T>* tape, const Var<T>& x, const Var<T>& w,
                     const Var<T>& b, int pad, int stride = 1);

template <class T>
Var<T> relu(Tape<T>* tape, const Var<T>& x);

template <class T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b);

/// Keeps frames 0, stride, 2·stride, … (shortcut path of temporally strided units).
template <class T>
Var<T> subsample_frames(Tape<T>* tape, const Var<T>& x, int stride);

template <class T>
Var<T> global_pool(Tape<T>* tape, const Var<T>& x, bool over_l, bool over_h,
                   bool over_w);

template <class T>
Var<T> max_pool_spatial(Tape<T>* tape, const Var<T>& x, int k, int stride,
                        int pad = 0);

template <class T>
Var<T> linear(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& b);

template <class T>
Var<T> softmax_xent(Tape<T>* tape, const Var<T>& logits, int label);

template <class T>
Var<T> batch_norm(Tape<T>* tape, const Var<T>& x, const Var<T>& gamma,
                  const Var<T>& beta, NormStats<T>& stats, bool train, T eps,
                  T momentum);

/// Identity forward, gradient scaled by `factor` on the way back.
template <class T>
Var<T> scale_gradient(Tape<T>* tape, const Var<T>& x, T factor);

/// Weighted sum of scalar tensors into one scalar (loss aggregation).
template <class T>
Var<T> weighted_sum(Tape<T>* tape, const std::vector<Var<T>>& xs,
                    const std::vector<T>& weights);

/// Plain softmax of a logit vector (evaluation-side scoring).
template <class T>
std::vector<T> softmax(const Tensor<T>& logits);

}  // namespace unidual
