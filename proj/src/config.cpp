#include "unidual/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace unidual {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::R2D: return "r2d";
    case Variant::R2P1D: return "r2p1d";
    case Variant::R2DMultitask: return "r2d_multitask";
    case Variant::R2P1DMultitask: return "r2p1d_multitask";
    case Variant::UniDual: return "unidual";
    case Variant::UniDualAux: return "unidual_aux";
    case Variant::FinetuneImage: return "finetune_image";
    case Variant::FinetuneVideo: return "finetune_video";
  }
  return "?";
}

Variant variant_from_name(const std::string& s) {
  for (Variant v : {Variant::R2D, Variant::R2P1D, Variant::R2DMultitask,
                    Variant::R2P1DMultitask, Variant::UniDual, Variant::UniDualAux,
                    Variant::FinetuneImage, Variant::FinetuneVideo})
    if (s == variant_name(v)) return v;
  throw ValueError("unknown training mode: " + s);
}

VariantTraits variant_traits(Variant v) {
  switch (v) {
    case Variant::R2D:
      return {Arch::R2D, TrainMode::SeparateImage, {true, false, false, false}, false};
    case Variant::R2P1D:
      return {Arch::R2P1D, TrainMode::SeparateVideo, {false, true, false, false}, false};
    case Variant::R2DMultitask:
      return {Arch::R2D, TrainMode::Multitask, {true, true, false, false}, false};
    case Variant::R2P1DMultitask:
      return {Arch::R2P1D, TrainMode::Multitask, {true, true, false, false}, false};
    case Variant::UniDual:
      return {Arch::UniDual, TrainMode::UniDual, {true, true, false, false}, false};
    case Variant::UniDualAux:
      return {Arch::UniDual, TrainMode::UniDualAux, {true, true, true, true}, false};
    case Variant::FinetuneImage:
      return {Arch::R2D, TrainMode::SeparateImage, {true, false, false, false}, true};
    case Variant::FinetuneVideo:
      return {Arch::R2P1D, TrainMode::SeparateVideo, {false, true, false, false}, true};
  }
  throw ValueError("bad variant");
}

std::string format_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

namespace {

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

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    require(pos == v.size(), "");
    return r;
  } catch (const std::logic_error&) {
    throw ValueError("bad number for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValueError("bad boolean for " + key + ": '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

using KV = std::vector<std::pair<std::string, std::string>>;

KV data_kv(const DataConfig& d) {
  return {
      {"image_shapes", std::to_string(d.image_shapes)},
      {"video_shapes", std::to_string(d.video_shapes)},
      {"video_directions", std::to_string(d.video_directions)},
      {"image_noise", format_double(d.image_noise)},
      {"video_noise", format_double(d.video_noise)},
      {"speed", format_double(d.speed)},
      {"image_weight", format_double(d.image_weight)},
      {"video_weight", format_double(d.video_weight)},
      {"extra_video_sources", std::to_string(d.extra_video_sources)},
  };
}

KV train_kv(const TrainParams& t) {
  return {
      {"mode", variant_name(t.mode)},
      {"batch_size", std::to_string(t.batch_size)},
      {"epochs", std::to_string(t.epochs)},
      {"epoch_size", std::to_string(t.epoch_size)},
      {"schedule", t.schedule == ScheduleKind::WarmupStep ? "warmup_step"
                                                          : "warmup_cosine"},
      {"base_lr", format_double(t.base_lr)},
      {"warmup_epochs", std::to_string(t.warmup_epochs)},
      {"step_every", std::to_string(t.step_every)},
      {"decay_factor", format_double(t.decay_factor)},
      {"momentum", format_double(t.momentum)},
      {"weight_decay", format_double(t.weight_decay)},
      {"loss_weight_image", format_double(t.weights.image)},
      {"loss_weight_video", format_double(t.weights.video)},
      {"aux_weight_image", format_double(t.weights.aux_image)},
      {"aux_weight_video", format_double(t.weights.aux_video)},
      {"aux_frame", t.aux_frame == AuxFrame::Center ? "center" : "random"},
      {"init_checkpoint", t.init_checkpoint},
      {"freeze_trunk", t.freeze_trunk ? "true" : "false"},
      {"save_optimizer", t.save_optimizer ? "true" : "false"},
      {"log_timing", t.log_timing ? "true" : "false"},
      {"snapshot_every", std::to_string(t.snapshot_every)},
  };
}

KV eval_kv(const EvalParams& e) {
  return {
      {"num_clips", std::to_string(e.num_clips)},
      {"score_average", e.softmax_average ? "softmax" : "logit"},
      {"image_examples", std::to_string(e.image_examples)},
      {"videos", std::to_string(e.videos)},
      {"video_frames", std::to_string(e.video_frames)},
  };
}

void data_set(DataConfig& d, const std::string& key, const std::string& v) {
  if (key == "image_shapes") d.image_shapes = parse_int(key, v);
  else if (key == "video_shapes") d.video_shapes = parse_int(key, v);
  else if (key == "video_directions") d.video_directions = parse_int(key, v);
  else if (key == "image_noise") d.image_noise = parse_double(key, v);
  else if (key == "video_noise") d.video_noise = parse_double(key, v);
  else if (key == "speed") d.speed = parse_double(key, v);
  else if (key == "image_weight") d.image_weight = parse_double(key, v);
  else if (key == "video_weight") d.video_weight = parse_double(key, v);
  else if (key == "extra_video_sources") d.extra_video_sources = parse_int(key, v);
  else throw ValueError("unknown config key: data." + key);
}

void train_set(TrainParams& t, const std::string& key, const std::string& v) {
  if (key == "mode") t.mode = variant_from_name(v);
  else if (key == "batch_size") t.batch_size = parse_int(key, v);
  else if (key == "epochs") t.epochs = parse_int(key, v);
  else if (key == "epoch_size") t.epoch_size = parse_int(key, v);
  else if (key == "schedule") {
    if (v == "warmup_step") t.schedule = ScheduleKind::WarmupStep;
    else if (v == "warmup_cosine") t.schedule = ScheduleKind::WarmupCosine;
    else throw ValueError("bad schedule kind: " + v);
  } else if (key == "base_lr") t.base_lr = parse_double(key, v);
  else if (key == "warmup_epochs") t.warmup_epochs = parse_int(key, v);
  else if (key == "step_every") t.step_every = parse_int(key, v);
  else if (key == "decay_factor") t.decay_factor = parse_double(key, v);
  else if (key == "momentum") t.momentum = parse_double(key, v);
  else if (key == "weight_decay") t.weight_decay = parse_double(key, v);
  else if (key == "loss_weight_image") t.weights.image = parse_double(key, v);
  else if (key == "loss_weight_video") t.weights.video = parse_double(key, v);
  else if (key == "aux_weight_image") t.weights.aux_image = parse_double(key, v);
  else if (key == "aux_weight_video") t.weights.aux_video = parse_double(key, v);
  else if (key == "aux_frame") {
    if (v == "center") t.aux_frame = AuxFrame::Center;
    else if (v == "random") t.aux_frame = AuxFrame::Random;
    else throw ValueError("bad aux_frame: " + v);
  } else if (key == "init_checkpoint") t.init_checkpoint = v;
  else if (key == "freeze_trunk") t.freeze_trunk = parse_bool(key, v);
  else if (key == "save_optimizer") t.save_optimizer = parse_bool(key, v);
  else if (key == "log_timing") t.log_timing = parse_bool(key, v);
  else if (key == "snapshot_every") t.snapshot_every = parse_int(key, v);
  else throw ValueError("unknown config key: train." + key);
}

void eval_set(EvalParams& e, const std::string& key, const std::string& v) {
  if (key == "num_clips") e.num_clips = parse_int(key, v);
  else if (key == "score_average") {
    if (v == "softmax") e.softmax_average = true;
    else if (v == "logit") e.softmax_average = false;
    else throw ValueError("bad score_average: " + v);
  } else if (key == "image_examples") e.image_examples = parse_int(key, v);
  else if (key == "videos") e.videos = parse_int(key, v);
  else if (key == "video_frames") e.video_frames = parse_int(key, v);
  else throw ValueError("unknown config key: eval." + key);
}

}  // namespace

void RunConfig::set(const std::string& section, const std::string& key,
                    const std::string& value) {
  if (section == "model") {
    try {
      model_config_set(model, key, value);
    } catch (const ValueError& e) {
      if (std::string(e.what()).rfind("unknown model config key", 0) == 0)
        throw ValueError("unknown config key: model." + key);
      throw;
    }
  } else if (section == "data") data_set(data, key, value);
  else if (section == "train") train_set(train, key, value);
  else if (section == "eval") eval_set(eval, key, value);
  else throw ValueError("unknown config section: " + section);
}

void RunConfig::set_override(const std::string& spec) {
  const auto eq = spec.find('=');
  require(eq != std::string::npos, "--set expects section.key=value, got '" + spec + "'");
  const std::string key = trim(spec.substr(0, eq));
  const std::string value = trim(spec.substr(eq + 1));
  const auto dot = key.find('.');
  require(dot != std::string::npos, "--set expects section.key=value, got '" + spec + "'");
  set(key.substr(0, dot), key.substr(dot + 1), value);
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      require(line.back() == ']', "bad section header at line " + std::to_string(lineno));
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos,
            "expected key = value at line " + std::to_string(lineno) + ": " + line);
    require(!section.empty(), "key outside any section at line " + std::to_string(lineno));
    cfg.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out = "[model]\n";
  for (const auto& [k, v] : model_config_kv(model)) out += k + " = " + v + "\n";
  out += "\n[data]\n";
  for (const auto& [k, v] : data_kv(data)) out += k + " = " + v + "\n";
  out += "\n[train]\n";
  for (const auto& [k, v] : train_kv(train)) out += k + " = " + v + "\n";
  out += "\n[eval]\n";
  for (const auto& [k, v] : eval_kv(eval)) out += k + " = " + v + "\n";
  return out;
}

std::vector<SourceSpec> RunConfig::sources() const {
  std::vector<SourceSpec> out;
  SourceSpec img;
  img.id = 0;
  img.modality = Modality::Image;
  img.shapes = data.image_shapes;
  img.noise = data.image_noise;
  img.weight = data.image_weight;
  img.channels = model.input_channels;
  img.size = model.input_size;
  out.push_back(img);
  for (int i = 0; i <= data.extra_video_sources; ++i) {
    SourceSpec vid;
    vid.id = 1 + i;
    vid.modality = Modality::Video;
    vid.shapes = data.video_shapes;
    vid.directions = data.video_directions;
    vid.noise = data.video_noise;
    vid.speed = data.speed;
    vid.weight = data.video_weight;
    vid.channels = model.input_channels;
    vid.size = model.input_size;
    vid.clip_len = model.clip_len;
    out.push_back(vid);
  }
  return out;
}

Schedule RunConfig::schedule() const {
  Schedule s;
  s.kind = train.schedule;
  s.base_lr = train.base_lr;
  s.warmup_epochs = train.warmup_epochs;
  s.total_epochs = train.epochs;
  s.step_every = train.step_every;
  s.decay_factor = train.decay_factor;
  return s;
}

void RunConfig::apply_variant() {
  const VariantTraits traits = variant_traits(train.mode);
  model.arch = traits.arch;
  model.heads = traits.heads;
  model.classes_image = data.image_shapes;
  model.classes_video = data.video_shapes * data.video_directions;
  if (traits.needs_init_checkpoint)
    require(!train.init_checkpoint.empty(),
            std::string(variant_name(train.mode)) +
                " requires train.init_checkpoint");
}

void RunConfig::validate() const {
  model.validate();
  schedule().validate();
  require(train.batch_size >= 1, "config: batch_size must be >= 1");
  require(train.epoch_size >= train.batch_size,
          "config: epoch_size must be >= batch_size");
  require(train.momentum >= 0 && train.momentum < 1, "config: bad momentum");
  require(train.weight_decay >= 0, "config: bad weight_decay");
  require(eval.num_clips >= 1 && eval.image_examples >= 1 && eval.videos >= 1,
          "config: bad eval sizes");
  require(eval.video_frames >= model.clip_len,
          "config: eval.video_frames must be >= clip_len");
  require(data.extra_video_sources >= 0, "config: bad extra_video_sources");
  for (const auto& s : sources()) s.validate();
}

std::vector<ConfigKeyDoc> config_defaults() {
  const RunConfig def;
  std::vector<ConfigKeyDoc> out;
  for (const auto& [k, v] : model_config_kv(def.model)) out.push_back({"model." + k, v});
  for (const auto& [k, v] : data_kv(def.data)) out.push_back({"data." + k, v});
  for (const auto& [k, v] : train_kv(def.train)) out.push_back({"train." + k, v});
  for (const auto& [k, v] : eval_kv(def.eval)) out.push_back({"eval." + k, v});
  return out;
}

}  // namespace unidual
