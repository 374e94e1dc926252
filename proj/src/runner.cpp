#include "unidual/runner.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace unidual {

std::string metrics_csv_header() {
  return "epoch,lr,loss_img,loss_vid,loss_aux_img,loss_aux_vid,top1,top5,clip1,"
         "video1,seconds";
}

std::string metrics_csv_row(const EpochRecord& r) {
  auto field = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  std::string row = std::to_string(r.epoch) + "," + format_double(r.lr);
  for (const auto* v : {&r.loss_img, &r.loss_vid, &r.loss_aux_img, &r.loss_aux_vid,
                        &r.top1, &r.top5, &r.clip1, &r.video1, &r.seconds})
    row += "," + field(*v);
  return row;
}

namespace {

struct MeanAcc {
  double sum = 0;
  int n = 0;
  void add(const std::optional<double>& v) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  std::optional<double> mean() const {
    if (!n) return std::nullopt;
    return sum / n;
  }
};

std::vector<SourceSpec> active_sources(const RunConfig& cfg, TrainMode mode) {
  const auto all = cfg.sources();
  std::vector<SourceSpec> out;
  for (const auto& s : all) {
    const bool is_image = s.modality == Modality::Image;
    switch (mode) {
      case TrainMode::SeparateImage:
        if (is_image) out.push_back(s);
        break;
      case TrainMode::SeparateVideo:
        if (!is_image) out.push_back(s);
        break;
      default:
        out.push_back(s);
        break;
    }
  }
  return out;
}

}  // namespace

template <class T>
RunMetrics run_training(const RunConfig& cfg, const std::string& out_dir,
                        std::ostream& log) {
  cfg.validate();
  const VariantTraits traits = variant_traits(cfg.train.mode);
  require(cfg.model.arch == traits.arch,
          "config: model.arch does not match train.mode (run apply_variant)");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream cfg_out(fs::path(out_dir) / "config.cfg");
    cfg_out << cfg.to_text();
  }

  auto net = build_network<T>(cfg.model);
  if (!cfg.train.init_checkpoint.empty()) {
    const CheckpointData init = load_checkpoint_file(cfg.train.init_checkpoint);
    require(init.config.arch == cfg.model.arch,
            "init checkpoint arch (" + std::string(arch_name(init.config.arch)) +
                ") does not match run arch (" + arch_name(cfg.model.arch) + ")");
    assign_checkpoint(net, init, HeadLoadPolicy::ReinitMissing);
    log << "initialized from " << cfg.train.init_checkpoint << "\n";
  }
  if (cfg.train.freeze_trunk) {
    for (const auto& p : net.params.items())
      if (p.name.rfind("head.", 0) != 0) p.tensor->requires_grad = false;
  }

  const auto sources = active_sources(cfg, traits.mode);
  require(!sources.empty(), "train: no sources active for this mode");
  MixedStream<T> stream(sources, hash_mix(cfg.model.seed, hash_str("stream")));
  Rng aux_rng = sub_rng(cfg.model.seed, "aux-frames");
  OptimizerState<T> opt;
  opt.momentum = T(cfg.train.momentum);
  opt.weight_decay = T(cfg.train.weight_decay);
  const Schedule sched = cfg.schedule();
  const int steps = std::max(1, cfg.train.epoch_size / cfg.train.batch_size);
  const uint64_t eval_img_seed = hash_mix(cfg.model.seed, hash_str("eval-image"));
  const uint64_t eval_vid_seed = hash_mix(cfg.model.seed, hash_str("eval-video"));

  std::ofstream csv(fs::path(out_dir) / "metrics.csv");
  csv << metrics_csv_header() << "\n";
  csv.flush();

  RunMetrics metrics;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    MeanAcc l_img, l_vid, l_aux_img, l_aux_vid;
    for (int s = 0; s < steps; ++s) {
      const double lr = lr_at(sched, epoch + double(s) / steps);
      auto batch = stream.next_batch(cfg.train.batch_size);
      try {
        const StepLosses losses =
            train_step(net, traits.mode, batch, sources, cfg.train.weights,
                       cfg.train.aux_frame, aux_rng, opt, T(lr));
        l_img.add(losses.image);
        l_vid.add(losses.video);
        l_aux_img.add(losses.aux_image);
        l_aux_vid.add(losses.aux_video);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(s) + ": " + e.what());
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(sched, epoch);
    rec.loss_img = l_img.mean();
    rec.loss_vid = l_vid.mean();
    rec.loss_aux_img = l_aux_img.mean();
    rec.loss_aux_vid = l_aux_vid.mean();

    const SourceSpec* image_src = nullptr;
    const SourceSpec* video_src = nullptr;
    for (const auto& s : sources) {
      if (s.modality == Modality::Image && !image_src) image_src = &s;
      if (s.modality == Modality::Video && !video_src) video_src = &s;
    }
    if (net.config.heads.image_main && image_src) {
      ImageEval ev;
      if (traits.mode == TrainMode::Multitask) {
        // Multitask evaluates images the way it trains them: inflated clips
        // through the shared trunk.
        LogitsFn<T> fn = [&](const ModalExample<T>& ex) {
          auto clip = inflate_image_to_clip(ex, net.config.clip_len);
          return multitask_logits(net, (Tape<T>*)nullptr, to_var(clip.pixels),
                                  HeadId::ImageMain)->v;
        };
        ev = evaluate_image_with(fn, *image_src, cfg.eval.image_examples,
                                 eval_img_seed);
      } else {
        ev = evaluate_image(net, *image_src, cfg.eval.image_examples, eval_img_seed);
      }
      rec.top1 = ev.top1 * 100.0;
      rec.top5 = ev.top5 * 100.0;
    }
    if (net.config.heads.video_main && video_src) {
      VideoEval ev;
      if (traits.mode == TrainMode::Multitask) {
        LogitsFn<T> fn = [&](const ModalExample<T>& ex) {
          return multitask_logits(net, (Tape<T>*)nullptr, to_var(ex.pixels),
                                  HeadId::VideoMain)->v;
        };
        ev = evaluate_video_with(fn, *video_src, cfg.eval.videos,
                                 cfg.eval.video_frames, cfg.eval.num_clips,
                                 eval_vid_seed, cfg.eval.softmax_average);
      } else {
        ev = evaluate_video(net, *video_src, cfg.eval.videos, cfg.eval.video_frames,
                            cfg.eval.num_clips, eval_vid_seed,
                            cfg.eval.softmax_average);
      }
      rec.clip1 = ev.clip1 * 100.0;
      rec.video1 = ev.video1 * 100.0;
    }
    if (cfg.train.log_timing) {
      const auto t1 = std::chrono::steady_clock::now();
      rec.seconds = std::chrono::duration<double>(t1 - t0).count();
    }
    csv << metrics_csv_row(rec) << "\n";
    csv.flush();
    metrics.epochs.push_back(rec);

    log << "epoch " << epoch << " " << metrics_csv_row(rec) << "\n";

    if (cfg.train.snapshot_every > 0 && (epoch + 1) % cfg.train.snapshot_every == 0 &&
        epoch + 1 < cfg.train.epochs) {
      save_checkpoint(net,
                      (fs::path(out_dir) / ("epoch" + std::to_string(epoch + 1) +
                                            ".udck")).string());
    }
  }

  CheckpointData final_ckpt = checkpoint_from_network(net);
  if (cfg.train.save_optimizer) {
    final_ckpt.has_optimizer = true;
    for (const auto& p : net.params.items()) {
      auto it = opt.velocity.find(p.name);
      if (it == opt.velocity.end()) continue;
      TensorRecord r;
      r.name = "momentum/" + p.name;
      r.dtype = cfg.model.precision == 64 ? 2 : 1;
      r.extents = p.tensor->shape;
      r.values.assign(it->second.begin(), it->second.end());
      final_ckpt.optimizer.push_back(std::move(r));
    }
  }
  save_checkpoint_file(final_ckpt, (fs::path(out_dir) / "final.udck").string());
  return metrics;
}

RunMetrics run_training_auto(const RunConfig& cfg, const std::string& out_dir,
                             std::ostream& log) {
  if (cfg.model.precision == 64) return run_training<double>(cfg, out_dir, log);
  return run_training<float>(cfg, out_dir, log);
}

template RunMetrics run_training<float>(const RunConfig&, const std::string&,
                                        std::ostream&);
template RunMetrics run_training<double>(const RunConfig&, const std::string&,
                                         std::ostream&);

}  // namespace unidual
