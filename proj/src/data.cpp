#include "unidual/data.hpp"

#include <algorithm>
#include <cmath>

namespace unidual {

void SourceSpec::validate() const {
  require(shapes >= 1 && shapes <= kMaxShapes,
          "source: shapes must be in [1," + std::to_string(kMaxShapes) + "]");
  require(directions >= 2 && directions % 2 == 0,
          "source: directions must be even and >= 2");
  require(noise >= 0 && speed >= 0, "source: bad noise/speed");
  require(weight >= 0, "source: rate weight must be >= 0");
  require(channels >= 1 && size >= 12 && clip_len >= 1, "source: bad geometry");
}

namespace {

constexpr int kTemplateRadius = 4;  // shapes live on a 9×9 stencil
constexpr double kBackground = 0.1;

// Filled masks on template coordinates (u right, v down), origin centred.
double shape_mask(int kind, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  switch (kind) {
    case 0: return (au <= 3.5 && av <= 3.5) ? 1.0 : 0.0;                // square
    case 1: return (u * u + v * v <= 3.8 * 3.8) ? 1.0 : 0.0;            // disc
    case 2: return ((au <= 1.2 && av <= 4.2) || (av <= 1.2 && au <= 4.2))
                       ? 1.0 : 0.0;                                     // cross
    case 3: return (v >= -4 && v <= 4 && au <= (v + 4) / 2) ? 1.0 : 0.0; // triangle
    case 4: {                                                           // ring
      const double r2 = u * u + v * v;
      return (r2 >= 2.0 * 2.0 && r2 <= 3.9 * 3.9) ? 1.0 : 0.0;
    }
    case 5: return (au + av <= 4.2) ? 1.0 : 0.0;                        // diamond
    case 6: return (av <= 1.6 && au <= 4.2) ? 1.0 : 0.0;                // h-bar
    case 7: return (au <= 1.6 && av <= 4.2) ? 1.0 : 0.0;                // v-bar
  }
  throw ValueError("unknown shape kind " + std::to_string(kind));
}

inline int wrap(int i, int n) {
  i %= n;
  return i < 0 ? i + n : i;
}

void direction_unit(int dir, int dirs, double& ux, double& uy) {
  if (dirs == 4) {
    // Exact cardinal units keep the per-frame displacement axis-aligned.
    static const double dx[4] = {1, 0, -1, 0};
    static const double dy[4] = {0, 1, 0, -1};
    ux = dx[dir];
    uy = dy[dir];
    return;
  }
  const double a = 2.0 * M_PI * double(dir) / double(dirs);
  ux = std::cos(a);
  uy = std::sin(a);
}

}  // namespace

// Bilinear splat with toroidal wrap: each template cell deposits onto the
// four surrounding pixels, preserving the mass centroid exactly.
template <class T>
void splat_shape(Tensor<T>& pixels, int frame, int shape, double cx, double cy,
                 double intensity) {
  const int h = pixels.h(), w = pixels.w(), l = pixels.l();
  const int r = kTemplateRadius;
  for (int tv = -r; tv <= r; ++tv) {
    for (int tu = -r; tu <= r; ++tu) {
      const double m = shape_mask(shape, tu, tv);
      if (m == 0.0) continue;
      const double px = cx + tu, py = cy + tv;
      const int x0 = int(std::floor(px)), y0 = int(std::floor(py));
      const double fx = px - x0, fy = py - y0;
      const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
      const double w10 = (1 - fx) * fy, w11 = fx * fy;
      const int xa = wrap(x0, w), xb = wrap(x0 + 1, w);
      const int ya = wrap(y0, h), yb = wrap(y0 + 1, h);
      for (int c = 0; c < pixels.c(); ++c) {
        T* plane = pixels.data() + (size_t(c) * l + frame) * pixels.plane();
        plane[size_t(ya) * w + xa] += T(intensity * m * w00);
        plane[size_t(ya) * w + xb] += T(intensity * m * w01);
        plane[size_t(yb) * w + xa] += T(intensity * m * w10);
        plane[size_t(yb) * w + xb] += T(intensity * m * w11);
      }
    }
  }
}

namespace {

template <class T>
void fill_background(Tensor<T>& pixels, int frame, double noise, Rng& rng) {
  const size_t plane = pixels.plane();
  for (int c = 0; c < pixels.c(); ++c) {
    T* p = pixels.data() + (size_t(c) * pixels.l() + frame) * plane;
    if (noise > 0)
      for (size_t i = 0; i < plane; ++i)
        p[i] = T(kBackground + rng.uniform(-noise, noise));
    else
      for (size_t i = 0; i < plane; ++i) p[i] = T(kBackground);
  }
}

template <class T>
void clamp_unit(Tensor<T>& pixels) {
  for (T& v : pixels.v) v = std::clamp(v, T(0), T(1));
}

}  // namespace

template <class T>
ModalExample<T> gen_shape_image(const SourceSpec& src, uint64_t seed,
                                uint64_t index) {
  require(src.modality == Modality::Image, "gen_shape_image: not an image source");
  Rng rng = sub_rng(hash_mix(seed, uint64_t(src.id)), "image", index);
  ModalExample<T> ex;
  ex.source = src.id;
  ex.modality = Modality::Image;
  ex.label = int(rng.below(uint64_t(src.shapes)));
  const double intensity = rng.uniform(0.4, 0.85);
  const double cx = rng.uniform(0, src.size);
  const double cy = rng.uniform(0, src.size);
  ex.pixels = Tensor<T>({src.channels, 1, src.size, src.size});
  fill_background(ex.pixels, 0, src.noise, rng);
  splat_shape(ex.pixels, 0, ex.label, cx, cy, intensity);
  clamp_unit(ex.pixels);
  return ex;
}

template <class T>
void render_motion_frames(Tensor<T>& out, const SourceSpec& src,
                          const ClipRender& r, Rng& noise_rng) {
  const int frames = out.l();
  double ux, uy;
  direction_unit(r.direction, src.directions, ux, uy);
  const double vx = src.speed * ux, vy = src.speed * uy;
  const double mid = double(frames - 1) / 2.0;
  for (int f = 0; f < frames; ++f) {
    fill_background(out, f, src.noise, noise_rng);
    splat_shape(out, f, r.shape, r.cx + vx * (f - mid), r.cy + vy * (f - mid),
                r.intensity);
  }
  clamp_unit(out);
}

namespace {

template <class T>
ModalExample<T> gen_motion(const SourceSpec& src, uint64_t seed, uint64_t index,
                           int frames) {
  require(src.modality == Modality::Video, "gen_motion_clip: not a video source");
  Rng rng = sub_rng(hash_mix(seed, uint64_t(src.id)), "video", index);
  ModalExample<T> ex;
  ex.source = src.id;
  ex.modality = Modality::Video;
  ClipRender r;
  r.shape = int(rng.below(uint64_t(src.shapes)));
  r.direction = int(rng.below(uint64_t(src.directions)));
  ex.label = r.shape * src.directions + r.direction;
  r.intensity = rng.uniform(0.4, 0.85);
  // Midpoint position uniform over the torus: every frame's position
  // marginal is uniform, so no single frame carries direction information.
  r.cx = rng.uniform(0, src.size);
  r.cy = rng.uniform(0, src.size);
  ex.pixels = Tensor<T>({src.channels, frames, src.size, src.size});
  render_motion_frames(ex.pixels, src, r, rng);
  return ex;
}

}  // namespace

template <class T>
ModalExample<T> gen_motion_clip(const SourceSpec& src, uint64_t seed,
                                uint64_t index) {
  return gen_motion<T>(src, seed, index, src.clip_len);
}

template <class T>
ModalExample<T> gen_motion_video(const SourceSpec& src, uint64_t seed,
                                 uint64_t index, int frames) {
  require(frames >= src.clip_len, "gen_motion_video: frames < clip_len");
  return gen_motion<T>(src, seed, index, frames);
}

template <class T>
ModalExample<T> clip_window(const ModalExample<T>& video, int start, int len) {
  const Tensor<T>& v = video.pixels;
  require(start >= 0 && start + len <= v.l(), "clip_window: out of range");
  ModalExample<T> ex;
  ex.label = video.label;
  ex.source = video.source;
  ex.modality = Modality::Video;
  ex.pixels = Tensor<T>({v.c(), len, v.h(), v.w()});
  for (int c = 0; c < v.c(); ++c)
    std::copy_n(v.v.begin() + (size_t(c) * v.l() + start) * v.plane(),
                size_t(len) * v.plane(),
                ex.pixels.v.begin() + size_t(c) * len * v.plane());
  return ex;
}

template <class T>
ModalExample<T> inflate_image_to_clip(const ModalExample<T>& img, int l) {
  require(l >= 1, "inflate_image_to_clip: L must be >= 1");
  ModalExample<T> ex;
  ex.pixels = repeat_frames(img.pixels, l);
  ex.label = img.label;
  ex.source = img.source;
  ex.modality = Modality::Video;
  return ex;
}

template <class T>
ModalExample<T> sample_aux_frame(const ModalExample<T>& clip, AuxFrame strategy,
                                 uint64_t seed) {
  const int l = clip.pixels.l();
  int f = l / 2;
  if (strategy == AuxFrame::Random) {
    Rng rng(seed);
    f = int(rng.below(uint64_t(l)));
  }
  ModalExample<T> ex;
  ex.pixels = extract_frame(clip.pixels, f);
  ex.label = clip.label;
  ex.source = clip.source;
  ex.modality = Modality::Image;
  return ex;
}

template <class T>
MixedStream<T>::MixedStream(std::vector<SourceSpec> sources, uint64_t seed)
    : sources_(std::move(sources)), rng_(hash_mix(seed, hash_str("mixed-stream"))),
      seed_(seed), counters_(sources_.size(), 0) {
  require(!sources_.empty(), "mixed stream: needs at least one source");
  double total = 0;
  for (const auto& s : sources_) {
    s.validate();
    total += s.weight;
  }
  require(total > 0, "mixed stream: all source weights are zero");
  double acc = 0;
  for (const auto& s : sources_) {
    acc += s.weight / total;
    cumulative_.push_back(acc);
  }
  cumulative_.back() = 1.0;
}

template <class T>
std::vector<typename MixedStream<T>::SubBatch> MixedStream<T>::next_batch(
    int batch_size) {
  require(batch_size >= 1, "mixed stream: batch size must be >= 1");
  std::vector<SubBatch> out(sources_.size());
  for (size_t s = 0; s < sources_.size(); ++s) out[s].source_index = int(s);
  for (int b = 0; b < batch_size; ++b) {
    const double u = rng_.next_unit();
    size_t s = 0;
    while (s + 1 < cumulative_.size() && u >= cumulative_[s]) ++s;
    const uint64_t index = counters_[s]++;
    const SourceSpec& spec = sources_[s];
    out[s].examples.push_back(spec.modality == Modality::Image
                                  ? gen_shape_image<T>(spec, seed_, index)
                                  : gen_motion_clip<T>(spec, seed_, index));
  }
  std::erase_if(out, [](const SubBatch& sb) { return sb.examples.empty(); });
  return out;
}

#define UNIDUAL_INSTANTIATE_DATA(T)                                            \
  template ModalExample<T> gen_shape_image<T>(const SourceSpec&, uint64_t,    \
                                              uint64_t);                       \
  template ModalExample<T> gen_motion_clip<T>(const SourceSpec&, uint64_t,    \
                                              uint64_t);                       \
  template ModalExample<T> gen_motion_video<T>(const SourceSpec&, uint64_t,   \
                                               uint64_t, int);                 \
  template ModalExample<T> clip_window<T>(const ModalExample<T>&, int, int);  \
  template ModalExample<T> inflate_image_to_clip<T>(const ModalExample<T>&,   \
                                                    int);                      \
  template ModalExample<T> sample_aux_frame<T>(const ModalExample<T>&,        \
                                               AuxFrame, uint64_t);            \
  template void render_motion_frames<T>(Tensor<T>&, const SourceSpec&,        \
                                        const ClipRender&, Rng&);              \
  template void splat_shape<T>(Tensor<T>&, int, int, double, double, double); \
  template class MixedStream<T>;

UNIDUAL_INSTANTIATE_DATA(float)
UNIDUAL_INSTANTIATE_DATA(double)
#undef UNIDUAL_INSTANTIATE_DATA

}  // namespace unidual
