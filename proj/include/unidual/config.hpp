#pragma once

#include "unidual/train.hpp"

namespace unidual {

// Paper-variant names exposed by the CLI. A variant pins the architecture,
// the head set and the training regime.
enum class Variant {
  R2D,
  R2P1D,
  R2DMultitask,
  R2P1DMultitask,
  UniDual,
  UniDualAux,
  FinetuneImage,
  FinetuneVideo,
};

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& s);

struct VariantTraits {
  Arch arch;
  TrainMode mode;
  HeadSet heads;
  bool needs_init_checkpoint;
};
VariantTraits variant_traits(Variant v);

struct DataConfig {
  int image_shapes = 4;
  int video_shapes = 4;
  int video_directions = 4;
  double image_noise = 0.1;
  double video_noise = 0.1;
  double speed = 1.5;
  double image_weight = 1.0;
  double video_weight = 1.0;
  int extra_video_sources = 0;  // additional video tasks (same class count)
};

struct TrainParams {
  Variant mode = Variant::UniDualAux;
  int batch_size = 16;
  int epochs = 5;
  int epoch_size = 20000;
  ScheduleKind schedule = ScheduleKind::WarmupStep;
  double base_lr = 0.01;
  int warmup_epochs = 1;
  int step_every = 10;
  double decay_factor = 10.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  TrainWeights weights;
  AuxFrame aux_frame = AuxFrame::Random;
  std::string init_checkpoint;
  bool freeze_trunk = false;
  bool save_optimizer = false;
  bool log_timing = true;
  int snapshot_every = 0;
};

struct EvalParams {
  int num_clips = 10;
  bool softmax_average = true;
  int image_examples = 500;
  int videos = 100;
  int video_frames = 20;
};

// Plain-text run configuration: [model]/[data]/[train]/[eval] sections of
// key = value lines; every key can be overridden with --set section.key=value.
struct RunConfig {
  ModelConfig model;
  DataConfig data;
  TrainParams train;
  EvalParams eval;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_text(const std::string& text);
  /// `spec` is "section.key=value"; unknown keys are rejected by name.
  void set_override(const std::string& spec);
  void set(const std::string& section, const std::string& key,
           const std::string& value);
  std::string to_text() const;

  /// All sources, image first, then video, then the extra video sources.
  std::vector<SourceSpec> sources() const;
  Schedule schedule() const;

  /// Pins model arch/heads/class counts to the chosen training variant.
  void apply_variant();
  void validate() const;
};

struct ConfigKeyDoc {
  std::string key;      // "section.name"
  std::string value;    // default
};

/// Every config key with its default (the --help enumeration).
std::vector<ConfigKeyDoc> config_defaults();

/// Shortest decimal form that parses back exactly.
std::string format_double(double v);

}  // namespace unidual
