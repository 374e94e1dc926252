#pragma once

#include "unidual/tensor.hpp"

namespace unidual {

// Synthetic sources: the image task classifies rendered shapes; the video
// task classifies (shape, direction) of a shape translating at constant
// per-class velocity on a toroidal canvas. Both tasks share one renderer, so
// appearance features transfer across sources, while direction is invisible
// in any single frame (positions are uniform at every frame by construction).
struct SourceSpec {
  int id = 0;
  Modality modality = Modality::Image;
  int shapes = 4;
  int directions = 4;  // video only; video classes = shapes × directions
  double noise = 0.1;
  double speed = 1.5;  // px/frame
  double weight = 1.0; // sampling rate weight in the mixed stream
  int channels = 3;
  int size = 32;
  int clip_len = 8;

  int classes() const {
    return modality == Modality::Image ? shapes : shapes * directions;
  }
  void validate() const;
};

constexpr int kMaxShapes = 8;

template <class T>
struct ModalExample {
  Tensor<T> pixels;  // C×L×H×W in [0,1]
  int label = 0;
  int source = 0;
  Modality modality = Modality::Image;
};

// (seed, index) fully determine every example.
template <class T>
ModalExample<T> gen_shape_image(const SourceSpec& src, uint64_t seed, uint64_t index);

template <class T>
ModalExample<T> gen_motion_clip(const SourceSpec& src, uint64_t seed, uint64_t index);

/// Longer sequence of `frames` frames from the same generator (evaluation
/// protocol: clips are cut from these "full videos").
template <class T>
ModalExample<T> gen_motion_video(const SourceSpec& src, uint64_t seed,
                                 uint64_t index, int frames);

template <class T>
ModalExample<T> clip_window(const ModalExample<T>& video, int start, int len);

/// All L frames bitwise equal to the image ("static video clip").
template <class T>
ModalExample<T> inflate_image_to_clip(const ModalExample<T>& img, int l);

enum class AuxFrame { Center, Random };

/// One frame of a clip, keeping the clip's (video-task) label.
template <class T>
ModalExample<T> sample_aux_frame(const ModalExample<T>& clip, AuxFrame strategy,
                                 uint64_t seed);

// Renderer internals, exposed so tests can place trajectories explicitly.
struct ClipRender {
  int shape = 0;
  int direction = 0;
  double intensity = 0.7;
  double cx = 0, cy = 0;  // trajectory position at the temporal midpoint
};
template <class T>
void render_motion_frames(Tensor<T>& out, const SourceSpec& src,
                          const ClipRender& r, Rng& noise_rng);
template <class T>
void splat_shape(Tensor<T>& pixels, int frame, int shape, double cx, double cy,
                 double intensity);

// Mixed multi-source batch stream: each slot draws its source from the
// normalized rate weights; a batch comes back partitioned into per-source
// sub-batches (heterogeneous shapes are never mixed in one tensor).
template <class T>
class MixedStream {
 public:
  struct SubBatch {
    int source_index = 0;
    std::vector<ModalExample<T>> examples;
  };

  MixedStream(std::vector<SourceSpec> sources, uint64_t seed);
  std::vector<SubBatch> next_batch(int batch_size);
  const std::vector<SourceSpec>& sources() const { return sources_; }

 private:
  std::vector<SourceSpec> sources_;
  std::vector<double> cumulative_;
  Rng rng_;
  uint64_t seed_;
  std::vector<uint64_t> counters_;
};

}  // namespace unidual
