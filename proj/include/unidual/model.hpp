#pragma once

#include <map>
#include <optional>

#include "unidual/blocks.hpp"

namespace unidual {

enum class Arch { R2D, R2P1D, UniDual };
enum class NormMode { None, Batch };
enum class BnStatsMode { Shared, PerPathway };

struct StageSpec {
  int units = 1;
  int channels = 0;
  int spatial_stride = 1;
  int temporal_stride = 1;
};

struct HeadSet {
  bool image_main = false;
  bool video_main = false;
  bool aux_image = false;  // image-task head on the video pathway
  bool aux_video = false;  // video-task head on the image pathway
};

struct ModelConfig {
  Arch arch = Arch::UniDual;
  int stem_channels = 16;
  int stem_spatial_kernel = 3;
  int stem_temporal_kernel = 3;
  int stem_stride = 1;
  bool stem_pool = false;
  std::vector<StageSpec> stages = {{1, 16, 1, 1}, {1, 32, 2, 1}, {1, 64, 2, 1}};
  int block_temporal_kernel = 3;
  int clip_len = 8;
  int input_size = 32;
  int input_channels = 3;
  int classes_image = 4;
  int classes_video = 16;
  HeadSet heads = {true, true, false, false};
  NormMode norm = NormMode::Batch;
  BnStatsMode bn_stats = BnStatsMode::PerPathway;
  uint64_t seed = 1;
  int precision = 32;  // payload precision of checkpoints: 32 or 64

  void validate() const;
  int trunk_out_channels() const { return stages.back().channels; }
};

const char* arch_name(Arch a);
Arch arch_from_name(const std::string& s);
std::string stages_to_string(const std::vector<StageSpec>& stages);
std::vector<StageSpec> stages_from_string(const std::string& s);

// Canonical key=value form of a ModelConfig; embedded in checkpoints and in
// the [model] section of run config files.
std::vector<std::pair<std::string, std::string>> model_config_kv(const ModelConfig& c);
void model_config_set(ModelConfig& c, const std::string& key, const std::string& value);
std::string model_config_text(const ModelConfig& c);
ModelConfig model_config_from_text(const std::string& text);

enum class HeadId { ImageMain, VideoMain, AuxImage, AuxVideo };
const char* head_name(HeadId h);
Modality head_pathway(HeadId h);

template <class T>
struct Head {
  Var<T> weight, bias;
  bool present() const { return weight != nullptr; }
};

template <class T>
class Network {
 public:
  ModelConfig config;
  Block<T> stem;
  std::vector<ResidualUnit<T>> units;
  // Norm + ReLU applied to the stem's point-wise output before stage 1.
  NormSite<T> stem_norm;
  Head<T> heads[4];
  ParamRegistry<T> params;
  T bn_eps = T(1e-5);
  T bn_momentum = T(0.1);

  Network() = default;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  Head<T>& head(HeadId id) { return heads[int(id)]; }
  const Head<T>& head(HeadId id) const { return heads[int(id)]; }

  /// Features after stem and all units, one example.
  Var<T> trunk_forward(Tape<T>* tape, const Var<T>& input, Modality pathway,
                       bool train, int probe_unit = -1,
                       UnitProbe<T>* probe = nullptr);

  /// Trunk + global pool + linear head. Validates head/pathway/shape
  /// compatibility ("only one pathway is activated for each input").
  Var<T> forward(Tape<T>* tape, const Var<T>& input, Modality pathway,
                 HeadId head, bool train);
};

/// Deterministic assembly from the config: fan-in-scaled uniform weights
/// seeded per parameter name, zero biases, gamma=1/beta=0.
template <class T>
Network<T> build_network(const ModelConfig& config);

/// Removes the auxiliary heads ("the auxiliary FC layers are removed").
/// Main-head outputs are bit-identical before and after; idempotent.
template <class T>
void strip_aux_heads(Network<T>& net);

template <class T>
struct ChannelMap {
  int channel = 0;
  T peak = T(0);
  int frame = 0;       // temporal index the map was taken from
  Shape map_shape;     // H×W
  std::vector<T> map;
};

template <class T>
struct TopMaps {
  Modality primary_pathway = Modality::Video;
  std::vector<ChannelMap<T>> primary;  // ranked by peak activation
  std::vector<ChannelMap<T>> dual;     // same channels, opposite pathway
};

/// Top-k most activated channels of the post-point-wise feature map of one
/// unit, with the corresponding maps from the dual pathway. Clip inputs feed
/// the image pathway their middle frame; image inputs feed the video pathway
/// as an inflated static clip.
template <class T>
TopMaps<T> top_activated_maps(Network<T>& net, const Tensor<T>& pixels,
                              Modality modality, int unit_index, int k);

}  // namespace unidual
