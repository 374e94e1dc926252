#pragma once

#include <functional>
#include <map>
#include <optional>

#include "unidual/data.hpp"
#include "unidual/model.hpp"

namespace unidual {

enum class ScheduleKind { WarmupStep, WarmupCosine };

struct Schedule {
  ScheduleKind kind = ScheduleKind::WarmupStep;
  double base_lr = 0.01;
  int warmup_epochs = 1;
  int total_epochs = 5;
  int step_every = 10;       // warmup_step only
  double decay_factor = 10;  // warmup_step only

  void validate() const;
};

/// Learning rate at a (possibly fractional) epoch. Warm-up ramps linearly
/// from base_lr/10 to base_lr; the step schedule then divides by
/// decay_factor every step_every epochs; the cosine schedule follows
/// 0.5·base·(1+cos(π·(e−warmup)/(total−warmup))).
double lr_at(const Schedule& s, double epoch);

template <class T>
struct OptimizerState {
  T momentum = T(0.9);
  T weight_decay = T(1e-4);
  std::map<std::string, std::vector<T>> velocity;
};

/// v ← μ·v + g + λ·w;  w ← w − lr·v. Parameters without a gradient buffer
/// are untouched (their loss never reached them); grads are cleared after
/// the step. Throws NumericError naming the parameter on non-finite grads.
template <class T>
void sgd_step(ParamRegistry<T>& params, OptimizerState<T>& opt, T lr);

enum class TrainMode {
  SeparateImage,
  SeparateVideo,
  Multitask,
  UniDual,
  UniDualAux,
};

struct TrainWeights {
  double image = 1.0;
  double video = 1.0;
  double aux_image = 1.0;
  double aux_video = 1.0;
};

struct StepLosses {
  std::optional<double> image, video, aux_image, aux_video;
  double total = 0.0;
};

/// Multitask route: the (possibly inflated) clip through the shared trunk,
/// spatiotemporal pooling, then the task's FC layer; pooling over L is the
/// temporal average pooling of the frame-wise R2D trunk.
template <class T>
Var<T> multitask_logits(Network<T>& net, Tape<T>* tape, const Var<T>& clip,
                        HeadId head);

/// Forward + backward of one mixed batch under the given regime; gradients
/// are left in the parameter buffers (one sgd_step applies them).
template <class T>
StepLosses accumulate_gradients(Network<T>& net, TrainMode mode,
                                const std::vector<typename MixedStream<T>::SubBatch>& batch,
                                const std::vector<SourceSpec>& sources,
                                const TrainWeights& weights, AuxFrame aux_frame,
                                Rng& aux_rng);

template <class T>
StepLosses train_step(Network<T>& net, TrainMode mode,
                      const std::vector<typename MixedStream<T>::SubBatch>& batch,
                      const std::vector<SourceSpec>& sources,
                      const TrainWeights& weights, AuxFrame aux_frame,
                      Rng& aux_rng, OptimizerState<T>& opt, T lr);

struct ImageEval {
  double top1 = 0, top5 = 0;
};
struct VideoEval {
  double clip1 = 0, video1 = 0;
};

template <class T>
using LogitsFn = std::function<std::vector<T>(const ModalExample<T>&)>;

/// top-k with k = min(5, K); ties broken toward the lowest class index.
template <class T>
ImageEval evaluate_image_with(const LogitsFn<T>& logits, const SourceSpec& src,
                              int examples, uint64_t seed);
template <class T>
ImageEval evaluate_image(Network<T>& net, const SourceSpec& src, int examples,
                         uint64_t seed);

/// num_clips clips with starts evenly spaced over [0, frames−L]; clip@1 over
/// individual clips, video@1 from averaged per-clip scores (softmax
/// probabilities, or raw logits when softmax_average=false).
template <class T>
VideoEval evaluate_video_with(const LogitsFn<T>& logits, const SourceSpec& src,
                              int videos, int frames, int num_clips,
                              uint64_t seed, bool softmax_average);
template <class T>
VideoEval evaluate_video(Network<T>& net, const SourceSpec& src, int videos,
                         int frames, int num_clips, uint64_t seed,
                         bool softmax_average);

}  // namespace unidual
