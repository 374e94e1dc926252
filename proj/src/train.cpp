#include "unidual/train.hpp"

#include <algorithm>
#include <cmath>

#include "unidual/kernels.hpp"

namespace unidual {

void Schedule::validate() const {
  require(base_lr > 0, "schedule: base_lr must be positive");
  require(total_epochs >= 1, "schedule: total_epochs must be >= 1");
  require(warmup_epochs >= 0 && warmup_epochs < total_epochs,
          "schedule: warmup_epochs must be < total_epochs");
  require(step_every >= 1, "schedule: step_every must be >= 1");
  require(decay_factor > 0, "schedule: decay_factor must be positive");
}

double lr_at(const Schedule& s, double epoch) {
  s.validate();
  require(epoch >= 0 && epoch < double(s.total_epochs),
          "lr_at: epoch " + std::to_string(epoch) + " outside [0," +
              std::to_string(s.total_epochs) + ")");
  if (epoch < double(s.warmup_epochs))
    return s.base_lr * (0.1 + 0.9 * epoch / double(s.warmup_epochs));
  const double e = epoch - double(s.warmup_epochs);
  if (s.kind == ScheduleKind::WarmupStep)
    return s.base_lr / std::pow(s.decay_factor, std::floor(e / double(s.step_every)));
  const double span = double(s.total_epochs - s.warmup_epochs);
  return 0.5 * s.base_lr * (1.0 + std::cos(M_PI * e / span));
}

template <class T>
void sgd_step(ParamRegistry<T>& params, OptimizerState<T>& opt, T lr) {
  for (const auto& p : params.items()) {
    if (!p.trainable || !p.tensor->has_grad()) continue;
    if (!all_finite(p.tensor->g))
      throw NumericError("non-finite gradient in parameter " + p.name);
    auto& v = opt.velocity[p.name];
    if (v.empty()) v.assign(p.tensor->size(), T(0));
    kernels::sgd_update(p.tensor->size(), p.tensor->data(), p.tensor->g.data(),
                        v.data(), lr, opt.momentum, opt.weight_decay);
  }
  for (const auto& p : params.items()) p.tensor->clear_grad();
}

namespace {

template <class T>
struct LossPool {
  std::vector<Var<T>> terms;
  std::vector<T> term_weights;
  double sum = 0;
  int count = 0;

  void take(Var<T> loss, double weight_over_n) {
    sum += double(loss->v[0]);
    ++count;
    terms.push_back(std::move(loss));
    term_weights.push_back(T(weight_over_n));
  }
  std::optional<double> mean() const {
    if (!count) return std::nullopt;
    return sum / count;
  }
};

template <class T>
const SourceSpec& source_of(const std::vector<SourceSpec>& sources,
                            const typename MixedStream<T>::SubBatch& sb) {
  require(sb.source_index >= 0 && sb.source_index < int(sources.size()),
          "train: batch references unknown source");
  return sources[sb.source_index];
}

}  // namespace

template <class T>
Var<T> multitask_logits(Network<T>& net, Tape<T>* tape, const Var<T>& clip,
                        HeadId head) {
  auto y = net.trunk_forward(tape, clip, Modality::Video, tape != nullptr);
  y = global_pool(tape, y, true, true, true);
  const Head<T>& hd = net.head(head);
  require(hd.present(), std::string("head not present: ") + head_name(head));
  return linear(tape, y, hd.weight, hd.bias);
}

template <class T>
StepLosses accumulate_gradients(Network<T>& net, TrainMode mode,
                                const std::vector<typename MixedStream<T>::SubBatch>& batch,
                                const std::vector<SourceSpec>& sources,
                                const TrainWeights& weights, AuxFrame aux_frame,
                                Rng& aux_rng) {
  const int clip_len = net.config.clip_len;
  Tape<T> tape;
  LossPool<T> img, vid, aux_img, aux_vid;

  for (const auto& sb : batch) {
    const SourceSpec& src = source_of<T>(sources, sb);
    const size_t n = sb.examples.size();
    if (n == 0) continue;
    const bool is_image = src.modality == Modality::Image;

    switch (mode) {
      case TrainMode::SeparateImage:
        require(is_image, "separate_image: video source in batch");
        break;
      case TrainMode::SeparateVideo:
        require(!is_image, "separate_video: image source in batch");
        break;
      default:
        break;
    }

    for (const auto& ex : sb.examples) {
      if (is_image) {
        switch (mode) {
          case TrainMode::SeparateImage:
          case TrainMode::UniDual:
          case TrainMode::UniDualAux: {
            auto logits = net.forward(&tape, to_var(ex.pixels), Modality::Image,
                                      HeadId::ImageMain, true);
            img.take(softmax_xent(&tape, logits, ex.label), weights.image / n);
            if (mode == TrainMode::UniDualAux) {
              // "auxiliary loss defined for inflated images": the static clip
              // drives the video pathway with the image-task label.
              auto clip = inflate_image_to_clip(ex, clip_len);
              auto alogits = net.forward(&tape, to_var(clip.pixels),
                                         Modality::Video, HeadId::AuxImage, true);
              aux_img.take(softmax_xent(&tape, alogits, ex.label),
                           weights.aux_image / n);
            }
            break;
          }
          case TrainMode::Multitask: {
            auto clip = inflate_image_to_clip(ex, clip_len);
            auto logits = multitask_logits(net, &tape, to_var(clip.pixels),
                                           HeadId::ImageMain);
            img.take(softmax_xent(&tape, logits, ex.label), weights.image / n);
            break;
          }
          default:
            throw ValueError("train: image source not valid for this mode");
        }
      } else {
        switch (mode) {
          case TrainMode::SeparateVideo:
          case TrainMode::UniDual:
          case TrainMode::UniDualAux: {
            auto logits = net.forward(&tape, to_var(ex.pixels), Modality::Video,
                                      HeadId::VideoMain, true);
            vid.take(softmax_xent(&tape, logits, ex.label), weights.video / n);
            if (mode == TrainMode::UniDualAux) {
              // "auxiliary loss over individual video frames" on the image
              // pathway, keeping the video-task label.
              auto frame = sample_aux_frame(ex, aux_frame, aux_rng.next_u64());
              auto alogits = net.forward(&tape, to_var(frame.pixels),
                                         Modality::Image, HeadId::AuxVideo, true);
              aux_vid.take(softmax_xent(&tape, alogits, ex.label),
                           weights.aux_video / n);
            }
            break;
          }
          case TrainMode::Multitask: {
            auto logits = multitask_logits(net, &tape, to_var(ex.pixels),
                                           HeadId::VideoMain);
            vid.take(softmax_xent(&tape, logits, ex.label), weights.video / n);
            break;
          }
          default:
            throw ValueError("train: video source not valid for this mode");
        }
      }
    }
  }

  std::vector<Var<T>> all;
  std::vector<T> ws;
  for (LossPool<T>* pool : {&img, &vid, &aux_img, &aux_vid}) {
    all.insert(all.end(), pool->terms.begin(), pool->terms.end());
    ws.insert(ws.end(), pool->term_weights.begin(), pool->term_weights.end());
  }
  require(!all.empty(), "train: batch produced no loss terms");
  auto total = weighted_sum(&tape, all, ws);
  if (!std::isfinite(double(total->v[0])))
    throw NumericError("non-finite training loss");
  tape.backward(total);

  StepLosses out;
  out.image = img.mean();
  out.video = vid.mean();
  out.aux_image = aux_img.mean();
  out.aux_video = aux_vid.mean();
  out.total = double(total->v[0]);
  return out;
}

template <class T>
StepLosses train_step(Network<T>& net, TrainMode mode,
                      const std::vector<typename MixedStream<T>::SubBatch>& batch,
                      const std::vector<SourceSpec>& sources,
                      const TrainWeights& weights, AuxFrame aux_frame,
                      Rng& aux_rng, OptimizerState<T>& opt, T lr) {
  auto losses = accumulate_gradients(net, mode, batch, sources, weights,
                                     aux_frame, aux_rng);
  sgd_step(net.params, opt, lr);
  return losses;
}

namespace {

// Rank of the true label under "ties go to the lowest index": the label is
// in the top k iff fewer than k classes beat it.
template <class T>
int label_rank(const std::vector<T>& logits, int label) {
  int rank = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    if (logits[i] > logits[label]) ++rank;
    else if (logits[i] == logits[label] && int(i) < label) ++rank;
  }
  return rank;
}

template <class T>
int argmax_lowest(const std::vector<T>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = int(i);
  return best;
}

}  // namespace

template <class T>
ImageEval evaluate_image_with(const LogitsFn<T>& logits_fn, const SourceSpec& src,
                              int examples, uint64_t seed) {
  require(examples >= 1, "evaluate_image: needs examples >= 1");
  const int k5 = std::min(5, src.classes());
  int top1 = 0, top5 = 0;
  for (int i = 0; i < examples; ++i) {
    auto ex = gen_shape_image<T>(src, seed, uint64_t(i));
    const auto logits = logits_fn(ex);
    require(int(logits.size()) == src.classes(), "evaluate_image: bad logit size");
    const int rank = label_rank(logits, ex.label);
    if (rank < 1) ++top1;
    if (rank < k5) ++top5;
  }
  return {double(top1) / examples, double(top5) / examples};
}

template <class T>
ImageEval evaluate_image(Network<T>& net, const SourceSpec& src, int examples,
                         uint64_t seed) {
  LogitsFn<T> fn = [&net](const ModalExample<T>& ex) {
    auto logits = net.forward(nullptr, to_var(ex.pixels), Modality::Image,
                              HeadId::ImageMain, false);
    return logits->v;
  };
  return evaluate_image_with(fn, src, examples, seed);
}

template <class T>
VideoEval evaluate_video_with(const LogitsFn<T>& logits_fn, const SourceSpec& src,
                              int videos, int frames, int num_clips,
                              uint64_t seed, bool softmax_average) {
  require(videos >= 1 && num_clips >= 1, "evaluate_video: bad sizes");
  require(frames >= src.clip_len, "evaluate_video: video shorter than clip");
  const int l = src.clip_len;
  int clip_hits = 0, video_hits = 0;
  for (int i = 0; i < videos; ++i) {
    auto video = gen_motion_video<T>(src, seed, uint64_t(i), frames);
    std::vector<double> mean_score(src.classes(), 0.0);
    for (int c = 0; c < num_clips; ++c) {
      const int start =
          num_clips == 1
              ? 0
              : int(std::llround(double(c) * (frames - l) / double(num_clips - 1)));
      auto clip = clip_window(video, start, l);
      const auto logits = logits_fn(clip);
      require(int(logits.size()) == src.classes(), "evaluate_video: bad logit size");
      if (argmax_lowest(logits) == video.label) ++clip_hits;
      if (softmax_average) {
        Tensor<T> lt({int(logits.size())});
        lt.v = logits;
        const auto p = softmax(lt);
        for (size_t j = 0; j < p.size(); ++j) mean_score[j] += double(p[j]);
      } else {
        for (size_t j = 0; j < logits.size(); ++j) mean_score[j] += double(logits[j]);
      }
    }
    if (argmax_lowest(mean_score) == video.label) ++video_hits;
  }
  return {double(clip_hits) / (double(videos) * num_clips),
          double(video_hits) / videos};
}

template <class T>
VideoEval evaluate_video(Network<T>& net, const SourceSpec& src, int videos,
                         int frames, int num_clips, uint64_t seed,
                         bool softmax_average) {
  LogitsFn<T> fn = [&net](const ModalExample<T>& ex) {
    auto logits = net.forward(nullptr, to_var(ex.pixels), Modality::Video,
                              HeadId::VideoMain, false);
    return logits->v;
  };
  return evaluate_video_with(fn, src, videos, frames, num_clips, seed,
                             softmax_average);
}

#define UNIDUAL_INSTANTIATE_TRAIN(T)                                           \
  template void sgd_step<T>(ParamRegistry<T>&, OptimizerState<T>&, T);        \
  template Var<T> multitask_logits<T>(Network<T>&, Tape<T>*, const Var<T>&,   \
                                      HeadId);                                 \
  template StepLosses accumulate_gradients<T>(                                \
      Network<T>&, TrainMode, const std::vector<typename MixedStream<T>::SubBatch>&, \
      const std::vector<SourceSpec>&, const TrainWeights&, AuxFrame, Rng&);   \
  template StepLosses train_step<T>(                                          \
      Network<T>&, TrainMode, const std::vector<typename MixedStream<T>::SubBatch>&, \
      const std::vector<SourceSpec>&, const TrainWeights&, AuxFrame, Rng&,    \
      OptimizerState<T>&, T);                                                  \
  template ImageEval evaluate_image_with<T>(const LogitsFn<T>&,               \
                                            const SourceSpec&, int, uint64_t);\
  template ImageEval evaluate_image<T>(Network<T>&, const SourceSpec&, int,   \
                                       uint64_t);                              \
  template VideoEval evaluate_video_with<T>(const LogitsFn<T>&,               \
                                            const SourceSpec&, int, int, int, \
                                            uint64_t, bool);                   \
  template VideoEval evaluate_video<T>(Network<T>&, const SourceSpec&, int,   \
                                       int, int, uint64_t, bool);

UNIDUAL_INSTANTIATE_TRAIN(float)
UNIDUAL_INSTANTIATE_TRAIN(double)
#undef UNIDUAL_INSTANTIATE_TRAIN

}  // namespace unidual
