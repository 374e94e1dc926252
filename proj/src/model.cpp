#include "unidual/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace unidual {

const char* arch_name(Arch a) {
  switch (a) {
    case Arch::R2D: return "r2d";
    case Arch::R2P1D: return "r2p1d";
    case Arch::UniDual: return "unidual";
  }
  return "?";
}

Arch arch_from_name(const std::string& s) {
  if (s == "r2d") return Arch::R2D;
  if (s == "r2p1d") return Arch::R2P1D;
  if (s == "unidual") return Arch::UniDual;
  throw ValueError("unknown arch: " + s);
}

const char* head_name(HeadId h) {
  switch (h) {
    case HeadId::ImageMain: return "image_main";
    case HeadId::VideoMain: return "video_main";
    case HeadId::AuxImage: return "aux_image";
    case HeadId::AuxVideo: return "aux_video";
  }
  return "?";
}

Modality head_pathway(HeadId h) {
  // Aux heads sit on the opposite pathway of the task they predict.
  return (h == HeadId::ImageMain || h == HeadId::AuxVideo) ? Modality::Image
                                                           : Modality::Video;
}

std::string stages_to_string(const std::vector<StageSpec>& stages) {
  std::string out;
  for (size_t i = 0; i < stages.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(stages[i].units) + "@" + std::to_string(stages[i].channels) +
           ":" + std::to_string(stages[i].spatial_stride) + ":" +
           std::to_string(stages[i].temporal_stride);
  }
  return out;
}

std::vector<StageSpec> stages_from_string(const std::string& s) {
  std::vector<StageSpec> stages;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    StageSpec st;
    const auto at = item.find('@');
    require(at != std::string::npos, "bad stage spec '" + item +
                                         "', expected units@channels[:sstride[:tstride]]");
    try {
      st.units = std::stoi(item.substr(0, at));
      std::string rest = item.substr(at + 1);
      std::stringstream rs(rest);
      std::string part;
      int idx = 0;
      while (std::getline(rs, part, ':')) {
        const int v = std::stoi(part);
        if (idx == 0) st.channels = v;
        else if (idx == 1) st.spatial_stride = v;
        else if (idx == 2) st.temporal_stride = v;
        else throw ValueError("bad stage spec '" + item + "'");
        ++idx;
      }
    } catch (const std::logic_error&) {
      throw ValueError("bad stage spec '" + item + "'");
    }
    stages.push_back(st);
  }
  require(!stages.empty(), "stages must not be empty");
  return stages;
}

void ModelConfig::validate() const {
  require(!stages.empty(), "config: zero stages");
  for (const auto& s : stages) {
    require(s.units >= 1 && s.channels >= 1, "config: bad stage");
    require(s.spatial_stride >= 1 && s.temporal_stride >= 1, "config: bad stage stride");
  }
  require(stem_channels >= 1, "config: stem_channels must be >= 1");
  require(stem_spatial_kernel % 2 == 1, "config: stem spatial kernel must be odd");
  require(stem_temporal_kernel % 2 == 1, "config: stem temporal kernel must be odd");
  require(block_temporal_kernel % 2 == 1, "config: block temporal kernel must be odd");
  require(stem_stride >= 1, "config: bad stem stride");
  require(clip_len >= 1 && input_size >= 1 && input_channels >= 1,
          "config: bad input geometry");
  require(classes_image >= 2 && classes_video >= 2,
          "config: class counts must be >= 2");
  require(precision == 32 || precision == 64, "config: precision must be 32 or 64");
  if (arch == Arch::UniDual)
    require(heads.image_main && heads.video_main,
            "config: UniDual requires both main heads");
  if (heads.aux_image || heads.aux_video)
    require(arch == Arch::UniDual, "config: aux heads are only valid for UniDual");
  require(heads.image_main || heads.video_main, "config: no heads configured");
}

namespace {

std::string heads_to_string(const HeadSet& h) {
  std::string out;
  auto app = [&](bool on, const char* n) {
    if (!on) return;
    if (!out.empty()) out += ",";
    out += n;
  };
  app(h.image_main, "image_main");
  app(h.video_main, "video_main");
  app(h.aux_image, "aux_image");
  app(h.aux_video, "aux_video");
  return out.empty() ? "none" : out;
}

HeadSet heads_from_string(const std::string& s) {
  HeadSet h;
  if (s == "none") return h;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "image_main") h.image_main = true;
    else if (item == "video_main") h.video_main = true;
    else if (item == "aux_image") h.aux_image = true;
    else if (item == "aux_video") h.aux_video = true;
    else throw ValueError("unknown head: " + item);
  }
  return h;
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int r = std::stoi(v, &pos);
    require(pos == v.size(), "");
    return r;
  } catch (const std::logic_error&) {
    throw ValueError("bad integer for " + key + ": '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const uint64_t r = std::stoull(v, &pos);
    require(pos == v.size(), "");
    return r;
  } catch (const std::logic_error&) {
    throw ValueError("bad integer for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValueError("bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

std::vector<std::pair<std::string, std::string>> model_config_kv(const ModelConfig& c) {
  return {
      {"arch", arch_name(c.arch)},
      {"stem_channels", std::to_string(c.stem_channels)},
      {"stem_spatial_kernel", std::to_string(c.stem_spatial_kernel)},
      {"stem_temporal_kernel", std::to_string(c.stem_temporal_kernel)},
      {"stem_stride", std::to_string(c.stem_stride)},
      {"stem_pool", c.stem_pool ? "true" : "false"},
      {"stages", stages_to_string(c.stages)},
      {"block_temporal_kernel", std::to_string(c.block_temporal_kernel)},
      {"clip_len", std::to_string(c.clip_len)},
      {"input_size", std::to_string(c.input_size)},
      {"input_channels", std::to_string(c.input_channels)},
      {"classes_image", std::to_string(c.classes_image)},
      {"classes_video", std::to_string(c.classes_video)},
      {"heads", heads_to_string(c.heads)},
      {"norm", c.norm == NormMode::None ? "none" : "batch"},
      {"bn_stats", c.bn_stats == BnStatsMode::Shared ? "shared" : "per_pathway"},
      {"seed", std::to_string(c.seed)},
      {"precision", std::to_string(c.precision)},
  };
}

void model_config_set(ModelConfig& c, const std::string& key, const std::string& v) {
  if (key == "arch") c.arch = arch_from_name(v);
  else if (key == "stem_channels") c.stem_channels = parse_int(key, v);
  else if (key == "stem_spatial_kernel") c.stem_spatial_kernel = parse_int(key, v);
  else if (key == "stem_temporal_kernel") c.stem_temporal_kernel = parse_int(key, v);
  else if (key == "stem_stride") c.stem_stride = parse_int(key, v);
  else if (key == "stem_pool") c.stem_pool = parse_bool(key, v);
  else if (key == "stages") c.stages = stages_from_string(v);
  else if (key == "block_temporal_kernel") c.block_temporal_kernel = parse_int(key, v);
  else if (key == "clip_len") c.clip_len = parse_int(key, v);
  else if (key == "input_size") c.input_size = parse_int(key, v);
  else if (key == "input_channels") c.input_channels = parse_int(key, v);
  else if (key == "classes_image") c.classes_image = parse_int(key, v);
  else if (key == "classes_video") c.classes_video = parse_int(key, v);
  else if (key == "heads") c.heads = heads_from_string(v);
  else if (key == "norm") {
    if (v == "none") c.norm = NormMode::None;
    else if (v == "batch") c.norm = NormMode::Batch;
    else throw ValueError("bad norm mode: " + v);
  } else if (key == "bn_stats") {
    if (v == "shared") c.bn_stats = BnStatsMode::Shared;
    else if (v == "per_pathway") c.bn_stats = BnStatsMode::PerPathway;
    else throw ValueError("bad bn_stats mode: " + v);
  } else if (key == "seed") c.seed = parse_u64(key, v);
  else if (key == "precision") c.precision = parse_int(key, v);
  else throw ValueError("unknown model config key: " + key);
}

std::string model_config_text(const ModelConfig& c) {
  std::string out = "[model]\n";
  for (const auto& [k, v] : model_config_kv(c)) out += k + " = " + v + "\n";
  return out;
}

ModelConfig model_config_from_text(const std::string& text) {
  ModelConfig c;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '[' || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "bad config line: " + line);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    model_config_set(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

namespace {

template <class T>
ParamFactory<T> make_factory(ParamRegistry<T>& reg, uint64_t seed) {
  return [&reg, seed](const std::string& name, Shape shape, ParamGroup group,
                      bool trainable, Init init) -> Var<T> {
    auto v = reg.create(name, std::move(shape), group, trainable);
    switch (init) {
      case Init::Zero:
        break;
      case Init::One:
        std::fill(v->v.begin(), v->v.end(), T(1));
        break;
      case Init::FanInUniform: {
        int64_t fan_in = 1;
        for (size_t i = 1; i < v->shape.size(); ++i) fan_in *= v->shape[i];
        const double bound = std::sqrt(6.0 / double(fan_in));
        Rng rng = sub_rng(seed, "init/" + name);
        v->fill_uniform(rng, T(-bound), T(bound));
        break;
      }
    }
    return v;
  };
}

BlockKind arch_block_kind(Arch a) {
  switch (a) {
    case Arch::R2D: return BlockKind::R2D;
    case Arch::R2P1D: return BlockKind::R2P1D;
    case Arch::UniDual: return BlockKind::UniDual;
  }
  return BlockKind::R2D;
}

}  // namespace

template <class T>
Network<T> build_network(const ModelConfig& config) {
  config.validate();
  Network<T> net;
  net.config = config;
  auto factory = make_factory<T>(net.params, config.seed);
  const BlockKind kind = arch_block_kind(config.arch);
  const bool norm = config.norm == NormMode::Batch;
  const bool split = norm && config.arch == Arch::UniDual &&
                     config.bn_stats == BnStatsMode::PerPathway;

  BlockSpec stem;
  stem.kind = kind;
  stem.in_channels = config.input_channels;
  stem.out_channels = config.stem_channels;
  stem.mid_channels = config.stem_channels;
  stem.spatial_kernel = config.stem_spatial_kernel;
  stem.temporal_kernel = config.arch == Arch::R2D ? 1 : config.stem_temporal_kernel;
  stem.spatial_stride = config.stem_stride;
  stem.temporal_stride = 1;
  stem.norm = norm;
  stem.split_norm_stats = split;
  net.stem = make_block(stem, factory, "stem", ParamGroup::Shared);

  int prev = config.stem_channels;
  for (size_t si = 0; si < config.stages.size(); ++si) {
    const StageSpec& st = config.stages[si];
    for (int ui = 0; ui < st.units; ++ui) {
      BlockSpec spec;
      spec.kind = kind;
      spec.in_channels = prev;
      spec.out_channels = st.channels;
      spec.mid_channels = st.channels;
      spec.spatial_kernel = 3;
      spec.temporal_kernel = config.arch == Arch::R2D ? 1 : config.block_temporal_kernel;
      spec.spatial_stride = ui == 0 ? st.spatial_stride : 1;
      spec.temporal_stride =
          (ui == 0 && config.arch != Arch::R2D) ? st.temporal_stride : 1;
      spec.norm = norm;
      spec.split_norm_stats = split;
      const std::string prefix =
          "stage" + std::to_string(si) + ".unit" + std::to_string(ui);
      net.units.push_back(
          make_residual_unit(spec, factory, prefix, ParamGroup::Shared));
      prev = st.channels;
    }
  }

  const int feat = config.trunk_out_channels();
  auto make_head = [&](HeadId id, ParamGroup group, int classes) {
    Head<T> h;
    const std::string prefix = std::string("head.") + head_name(id);
    h.weight = factory(prefix + ".weight", {classes, feat}, group, true,
                       Init::FanInUniform);
    h.bias = factory(prefix + ".bias", {classes}, group, true, Init::Zero);
    net.heads[int(id)] = h;
  };
  if (config.heads.image_main)
    make_head(HeadId::ImageMain, ParamGroup::HeadImage, config.classes_image);
  if (config.heads.video_main)
    make_head(HeadId::VideoMain, ParamGroup::HeadVideo, config.classes_video);
  if (config.heads.aux_image)
    make_head(HeadId::AuxImage, ParamGroup::HeadAuxImage, config.classes_image);
  if (config.heads.aux_video)
    make_head(HeadId::AuxVideo, ParamGroup::HeadAuxVideo, config.classes_video);
  return net;
}

template <class T>
Var<T> Network<T>::trunk_forward(Tape<T>* tape, const Var<T>& input,
                                 Modality pathway, bool train, int probe_unit,
                                 UnitProbe<T>* probe) {
  require(input->shape.size() == 4, "input must be C×L×H×W");
  require(input->c() == config.input_channels,
          "input has " + std::to_string(input->c()) + " channels, config expects " +
              std::to_string(config.input_channels));
  require(input->h() == config.input_size && input->w() == config.input_size,
          "input spatial size " + std::to_string(input->h()) + "×" +
              std::to_string(input->w()) + " does not match config " +
              std::to_string(config.input_size));
  if (pathway == Modality::Image)
    require(input->l() == 1, "image pathway input must have L=1");
  else
    require(input->l() == config.clip_len,
            "video input has L=" + std::to_string(input->l()) +
                ", config clip_len=" + std::to_string(config.clip_len));

  auto y = block_forward(tape, stem, input, pathway, train, bn_eps, bn_momentum);
  y = norm_forward(tape, stem.pw_norm, y, pathway, train, bn_eps, bn_momentum);
  y = relu(tape, y);
  if (config.stem_pool) y = max_pool_spatial(tape, y, 3, 2, 1);
  for (size_t i = 0; i < units.size(); ++i)
    y = unit_forward(tape, units[i], y, pathway, train, bn_eps, bn_momentum,
                     int(i) == probe_unit ? probe : nullptr);
  return y;
}

template <class T>
Var<T> Network<T>::forward(Tape<T>* tape, const Var<T>& input, Modality pathway,
                           HeadId head_id, bool train) {
  const Head<T>& hd = head(head_id);
  require(hd.present(), std::string("head not present: ") + head_name(head_id));
  require(head_pathway(head_id) == pathway,
          std::string("head ") + head_name(head_id) + " is not on the " +
              modality_name(pathway) + " pathway");
  auto y = trunk_forward(tape, input, pathway, train);
  // Spatiotemporal pooling; L=1 on the image pathway makes it spatial-only.
  y = global_pool(tape, y, true, true, true);
  return linear(tape, y, hd.weight, hd.bias);
}

template <class T>
void strip_aux_heads(Network<T>& net) {
  net.params.remove_groups({ParamGroup::HeadAuxImage, ParamGroup::HeadAuxVideo});
  net.heads[int(HeadId::AuxImage)] = {};
  net.heads[int(HeadId::AuxVideo)] = {};
  net.config.heads.aux_image = false;
  net.config.heads.aux_video = false;
}

namespace {

template <class T>
ChannelMap<T> channel_map(const Tensor<T>& feat, int channel) {
  ChannelMap<T> m;
  m.channel = channel;
  const size_t plane = feat.plane();
  const T* base = feat.data() + size_t(channel) * feat.l() * plane;
  m.peak = base[0];
  size_t peak_i = 0;
  for (size_t i = 1; i < size_t(feat.l()) * plane; ++i)
    if (base[i] > m.peak) {
      m.peak = base[i];
      peak_i = i;
    }
  m.frame = int(peak_i / plane);
  m.map_shape = {feat.h(), feat.w()};
  m.map.assign(base + size_t(m.frame) * plane, base + size_t(m.frame + 1) * plane);
  return m;
}

}  // namespace

template <class T>
TopMaps<T> top_activated_maps(Network<T>& net, const Tensor<T>& pixels,
                              Modality modality, int unit_index, int k) {
  require(unit_index >= 0 && unit_index < int(net.units.size()),
          "unit index out of range");
  const int channels = net.units[unit_index].block2.spec.out_channels;
  require(k >= 1 && k <= channels,
          "k=" + std::to_string(k) + " exceeds channel count " +
              std::to_string(channels));

  // The image pathway sees the clip's middle frame; the video pathway sees an
  // inflated static clip when the input is an image.
  Tensor<T> image_in = modality == Modality::Image
                           ? pixels
                           : extract_frame(pixels, pixels.l() / 2);
  Tensor<T> video_in = modality == Modality::Video
                           ? pixels
                           : repeat_frames(pixels, net.config.clip_len);

  UnitProbe<T> image_probe, video_probe;
  net.trunk_forward(nullptr, to_var(image_in), Modality::Image, false,
                    unit_index, &image_probe);
  net.trunk_forward(nullptr, to_var(video_in), Modality::Video, false,
                    unit_index, &video_probe);

  const Tensor<T>& primary_feat = modality == Modality::Image
                                      ? *image_probe.post_pointwise
                                      : *video_probe.post_pointwise;
  const Tensor<T>& dual_feat = modality == Modality::Image
                                   ? *video_probe.post_pointwise
                                   : *image_probe.post_pointwise;

  std::vector<ChannelMap<T>> all;
  all.reserve(channels);
  for (int c = 0; c < channels; ++c) all.push_back(channel_map(primary_feat, c));
  std::stable_sort(all.begin(), all.end(),
                   [](const ChannelMap<T>& a, const ChannelMap<T>& b) {
                     return a.peak > b.peak;  // ties keep lower channel first
                   });

  TopMaps<T> out;
  out.primary_pathway = modality;
  for (int i = 0; i < k; ++i) {
    out.primary.push_back(all[i]);
    out.dual.push_back(channel_map(dual_feat, all[i].channel));
  }
  return out;
}

#define UNIDUAL_INSTANTIATE_MODEL(T)                                           \
  template Network<T> build_network<T>(const ModelConfig&);                    \
  template class Network<T>;                                                   \
  template void strip_aux_heads<T>(Network<T>&);                               \
  template TopMaps<T> top_activated_maps<T>(Network<T>&, const Tensor<T>&,    \
                                            Modality, int, int);

UNIDUAL_INSTANTIATE_MODEL(float)
UNIDUAL_INSTANTIATE_MODEL(double)
#undef UNIDUAL_INSTANTIATE_MODEL

}  // namespace unidual
