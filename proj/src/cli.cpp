#include "unidual/cli.hpp"

#include <filesystem>
#include <ostream>

#include <CLI11.hpp>

#include "unidual/gradcheck.hpp"
#include "unidual/image_io.hpp"
#include "unidual/kernels.hpp"
#include "unidual/runner.hpp"

namespace unidual {

namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
  std::string config;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& c) {
  cmd->add_option("--config", c.config, "run config file ([model]/[data]/[train]/[eval])");
  cmd->add_option("--set", c.sets, "override a config key: section.key=value");
}

RunConfig load_config(const ConfigArgs& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::from_file(c.config);
  for (const auto& s : c.sets) cfg.set_override(s);
  return cfg;
}

void apply_backend(const std::string& backend) {
  if (backend == "auto") {
    kernels::set_backend(kernels::backend_available(kernels::Backend::avx2)
                             ? kernels::Backend::avx2
                             : kernels::Backend::scalar);
  } else if (backend == "scalar") {
    kernels::set_backend(kernels::Backend::scalar);
  } else if (backend == "avx2") {
    kernels::set_backend(kernels::Backend::avx2);
  } else {
    throw ValueError("unknown backend: " + backend);
  }
}

template <class T>
std::vector<double> to_doubles(const std::vector<T>& v) {
  return std::vector<double>(v.begin(), v.end());
}

template <class T>
int dump_examples(const RunConfig& cfg, const std::string& out_dir,
                  const std::string& which, int count, std::ostream& out) {
  fs::create_directories(out_dir);
  const auto sources = cfg.sources();
  int files = 0;
  auto dump_frame = [&](const Tensor<T>& px, int frame, const std::string& path) {
    const size_t plane = px.plane();
    auto chan = [&](int c) {
      const T* p = px.data() + (size_t(c) * px.l() + frame) * plane;
      return std::vector<double>(p, p + plane);
    };
    if (px.c() >= 3)
      write_ppm(path, px.h(), px.w(), chan(0), chan(1), chan(2));
    else
      write_pgm(path, px.h(), px.w(), chan(0));
    ++files;
  };
  const uint64_t seed = hash_mix(cfg.model.seed, hash_str("synth"));
  const char* ext = cfg.model.input_channels >= 3 ? "ppm" : "pgm";
  for (const auto& src : sources) {
    if (src.modality == Modality::Image) {
      if (which == "video") continue;
      for (int i = 0; i < count; ++i) {
        auto ex = gen_shape_image<T>(src, seed, uint64_t(i));
        dump_frame(ex.pixels, 0,
                   (fs::path(out_dir) / ("image" + std::to_string(i) + "_label" +
                                         std::to_string(ex.label) + "." + ext))
                       .string());
      }
    } else {
      if (which == "image") continue;
      if (src.id > 1) continue;  // dump the primary video source only
      for (int i = 0; i < count; ++i) {
        auto ex = gen_motion_clip<T>(src, seed, uint64_t(i));
        for (int f = 0; f < ex.pixels.l(); ++f)
          dump_frame(ex.pixels, f,
                     (fs::path(out_dir) / ("clip" + std::to_string(i) + "_label" +
                                           std::to_string(ex.label) + "_f" +
                                           std::to_string(f) + "." + ext))
                         .string());
      }
    }
  }
  out << "wrote " << files << " files to " << out_dir << "\n";
  return 0;
}

template <class T>
void eval_checkpoint(const CheckpointData& data, const RunConfig& cfg,
                     std::ostream& out) {
  auto net = network_from_checkpoint<T>(data);
  const auto sources = cfg.sources();
  const SourceSpec* image_src = nullptr;
  const SourceSpec* video_src = nullptr;
  for (const auto& s : sources) {
    if (s.modality == Modality::Image && !image_src) image_src = &s;
    if (s.modality == Modality::Video && !video_src) video_src = &s;
  }
  const uint64_t img_seed = hash_mix(net.config.seed, hash_str("eval-image"));
  const uint64_t vid_seed = hash_mix(net.config.seed, hash_str("eval-video"));

  if (net.config.heads.image_main && image_src) {
    require(image_src->classes() == net.config.classes_image,
            "eval: data.image_shapes does not match checkpoint classes_image");
    ImageEval ev;
    if (net.config.arch == Arch::R2P1D) {
      // A 2+1D trunk with an image head is a multitask model: images are
      // evaluated the way they were trained, inflated through the trunk.
      LogitsFn<T> fn = [&](const ModalExample<T>& ex) {
        auto clip = inflate_image_to_clip(ex, net.config.clip_len);
        return multitask_logits(net, (Tape<T>*)nullptr, to_var(clip.pixels),
                                HeadId::ImageMain)
            ->v;
      };
      ev = evaluate_image_with(fn, *image_src, cfg.eval.image_examples, img_seed);
    } else {
      ev = evaluate_image(net, *image_src, cfg.eval.image_examples, img_seed);
    }
    out << "top1 " << format_double(ev.top1 * 100) << "\n";
    out << "top5 " << format_double(ev.top5 * 100) << "\n";
  }
  if (net.config.heads.video_main && video_src) {
    require(video_src->classes() == net.config.classes_video,
            "eval: data video classes do not match checkpoint classes_video");
    const VideoEval ev =
        evaluate_video(net, *video_src, cfg.eval.videos, cfg.eval.video_frames,
                       cfg.eval.num_clips, vid_seed, cfg.eval.softmax_average);
    out << "clip1 " << format_double(ev.clip1 * 100) << "\n";
    out << "video1 " << format_double(ev.video1 * 100) << "\n";
  }
}

template <class T>
int gradcheck_run(RunConfig cfg, double eps, double tol, int samples,
                  std::ostream& out) {
  cfg.model.classes_image = cfg.data.image_shapes;
  cfg.model.classes_video = cfg.data.video_shapes * cfg.data.video_directions;
  if (cfg.model.arch == Arch::UniDual)
    cfg.model.heads = {true, true, true, true};
  else if (cfg.model.arch == Arch::R2D)
    cfg.model.heads = {true, false, false, false};
  else
    cfg.model.heads = {false, true, false, false};
  cfg.model.validate();

  auto net = build_network<T>(cfg.model);
  const auto sources = cfg.sources();
  const SourceSpec* image_src = &sources[0];
  const SourceSpec* video_src = &sources[1];
  const uint64_t seed = hash_mix(cfg.model.seed, hash_str("gradcheck"));
  const auto image = gen_shape_image<T>(*image_src, seed, 0);
  const auto clip = gen_motion_clip<T>(*video_src, seed, 0);
  const auto inflated = inflate_image_to_clip(image, cfg.model.clip_len);
  const auto frame = sample_aux_frame(clip, AuxFrame::Center, 0);

  // Frozen-stats evaluation keeps finite differences well posed; one
  // training-mode pass initializes the running statistics first.
  const bool frozen_norm = cfg.model.norm == NormMode::Batch;
  auto loss_fn = [&](Tape<T>* tape) -> Var<T> {
    std::vector<Var<T>> losses;
    std::vector<T> ws;
    auto add = [&](const Tensor<T>& px, Modality m, HeadId head, int label) {
      if (!net.head(head).present()) return;
      auto logits = net.forward(tape, to_var(px), m, head, false);
      losses.push_back(softmax_xent(tape, logits, label));
      ws.push_back(T(1));
    };
    add(image.pixels, Modality::Image, HeadId::ImageMain, image.label);
    add(clip.pixels, Modality::Video, HeadId::VideoMain, clip.label);
    add(inflated.pixels, Modality::Video, HeadId::AuxImage, image.label);
    add(frame.pixels, Modality::Image, HeadId::AuxVideo, clip.label);
    return weighted_sum(tape, losses, ws);
  };
  if (frozen_norm) {
    if (net.config.heads.image_main)
      net.forward(nullptr, to_var(image.pixels), Modality::Image,
                  HeadId::ImageMain, true);
    if (net.config.heads.video_main)
      net.forward(nullptr, to_var(clip.pixels), Modality::Video,
                  HeadId::VideoMain, true);
  }

  const GradCheckReport report =
      grad_check<T>(loss_fn, net.params.items(), T(eps), samples, seed);

  std::map<std::string, double> by_group;
  for (const auto& e : report.entries) {
    const Parameter<T>* p = net.params.find(e.name);
    auto& slot = by_group[group_name(p->group)];
    slot = std::max(slot, e.max_rel_err);
  }
  for (const auto& [group, maxerr] : by_group)
    out << "group " << group << " max_rel_err " << format_double(maxerr) << "\n";
  out << "overall max_rel_err " << format_double(report.max_rel_err) << " tol "
      << format_double(tol) << "\n";
  out << (report.passed(tol) ? "PASS" : "FAIL") << "\n";
  return report.passed(tol) ? 0 : 1;
}

template <class T>
int inspect_run(const CheckpointData& data, const RunConfig& cfg,
                const std::string& source, uint64_t index, int unit, int k,
                const std::string& out_dir, std::ostream& out) {
  auto net = network_from_checkpoint<T>(data);
  if (unit < 0) unit = int(net.units.size()) - 1;
  const auto sources = cfg.sources();
  const uint64_t seed = hash_mix(net.config.seed, hash_str("inspect"));
  ModalExample<T> ex;
  if (source == "image")
    ex = gen_shape_image<T>(sources[0], seed, index);
  else if (source == "video")
    ex = gen_motion_clip<T>(sources[1], seed, index);
  else
    throw ValueError("inspect: --source must be image or video");

  const auto maps = top_activated_maps(net, ex.pixels, ex.modality, unit, k);
  fs::create_directories(out_dir);
  auto write_maps = [&](const std::vector<ChannelMap<T>>& list, Modality pathway) {
    for (const auto& m : list) {
      const std::string name = std::string(modality_name(pathway)) + "_" +
                               std::to_string(unit) + "_" +
                               std::to_string(m.channel) + ".pgm";
      write_pgm_autoscale((fs::path(out_dir) / name).string(), m.map_shape[0],
                          m.map_shape[1], to_doubles(m.map));
    }
  };
  write_maps(maps.primary, maps.primary_pathway);
  write_maps(maps.dual, maps.primary_pathway == Modality::Image ? Modality::Video
                                                                : Modality::Image);
  out << "input: " << source << " example " << index << " label " << ex.label
      << "\n";
  for (size_t i = 0; i < maps.primary.size(); ++i) {
    out << modality_name(maps.primary_pathway) << " unit " << unit << " channel "
        << maps.primary[i].channel << " peak "
        << format_double(double(maps.primary[i].peak)) << " | dual peak "
        << format_double(double(maps.dual[i].peak)) << "\n";
  }
  return 0;
}

}  // namespace

std::string cli_help_footer() {
  std::string s = "Configuration keys (section.key = default):\n";
  for (const auto& doc : config_defaults())
    s += "  " + doc.key + " = " + doc.value + "\n";
  return s;
}

int cmd_dispatch(const std::vector<std::string>& args, std::ostream& out,
                 std::ostream& err) {
  CLI::App app{"unidual — joint image/video training on synthetic tasks"};
  app.footer(cli_help_footer());
  app.require_subcommand(1);
  std::string backend = "auto";
  app.add_option("--backend", backend, "kernel backend: auto|scalar|avx2")
      ->capture_default_str();

  int exit_code = 0;

  // synth
  auto* synth = app.add_subcommand("synth", "dump generated examples as PGM/PPM files");
  ConfigArgs synth_cfg;
  add_config_options(synth, synth_cfg);
  std::string synth_out, synth_source = "all";
  int synth_count = 8;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", synth_count, "examples per source")->capture_default_str();
  synth->add_option("--source", synth_source, "image|video|all")->capture_default_str();
  synth->callback([&] {
    apply_backend(backend);
    RunConfig cfg = load_config(synth_cfg);
    cfg.model.classes_image = cfg.data.image_shapes;
    cfg.model.classes_video = cfg.data.video_shapes * cfg.data.video_directions;
    exit_code = dump_examples<double>(cfg, synth_out, synth_source, synth_count, out);
  });

  // train
  auto* train = app.add_subcommand("train", "train one of the paper variants");
  ConfigArgs train_cfg;
  add_config_options(train, train_cfg);
  std::string train_mode, train_out, train_init;
  train->add_option("--mode", train_mode,
                    "r2d|r2p1d|r2d_multitask|r2p1d_multitask|unidual|unidual_aux|"
                    "finetune_image|finetune_video");
  train->add_option("--out", train_out, "run directory")->required();
  train->add_option("--init", train_init, "initial checkpoint (finetune modes)");
  train->callback([&] {
    apply_backend(backend);
    RunConfig cfg = load_config(train_cfg);
    if (!train_mode.empty()) cfg.train.mode = variant_from_name(train_mode);
    if (!train_init.empty()) cfg.train.init_checkpoint = train_init;
    cfg.apply_variant();
    cfg.validate();
    const RunMetrics metrics = run_training_auto(cfg, train_out, err);
    out << metrics_csv_header() << "\n"
        << metrics_csv_row(metrics.epochs.back()) << "\n";
    out << "wrote " << (fs::path(train_out) / "metrics.csv").string() << " and "
        << (fs::path(train_out) / "final.udck").string() << "\n";
  });

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  ConfigArgs eval_cfg;
  add_config_options(eval, eval_cfg);
  std::string eval_ckpt;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate")->required();
  eval->callback([&] {
    apply_backend(backend);
    const CheckpointData data = load_checkpoint_file(eval_ckpt);
    RunConfig cfg = load_config(eval_cfg);
    cfg.model = data.config;
    if (data.config.precision == 64)
      eval_checkpoint<double>(data, cfg, out);
    else
      eval_checkpoint<float>(data, cfg, out);
  });

  // convert
  auto* convert = app.add_subcommand("convert", "inflate/deflate a checkpoint");
  std::string conv_in, conv_out;
  bool do_deflate = false, do_inflate = false;
  int conv_t = 3;
  convert->add_option("--in", conv_in, "input checkpoint")->required();
  convert->add_option("--out", conv_out, "output checkpoint")->required();
  convert->add_flag("--deflate", do_deflate, "video model -> image model");
  convert->add_flag("--inflate", do_inflate, "image model -> video model");
  convert->add_option("--t", conv_t, "temporal taps for --inflate")->capture_default_str();
  convert->callback([&] {
    apply_backend(backend);
    require(do_deflate != do_inflate, "convert: pass exactly one of --deflate/--inflate");
    const CheckpointData data = load_checkpoint_file(conv_in);
    const CheckpointData result =
        do_deflate ? deflate_weights(data) : inflate_weights(data, conv_t);
    save_checkpoint_file(result, conv_out);
    out << arch_name(data.config.arch) << " -> " << arch_name(result.config.arch)
        << ", " << result.records.size() << " records, wrote " << conv_out << "\n";
  });

  // gradcheck
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "compare analytic gradients against central differences");
  ConfigArgs gc_cfg;
  add_config_options(gradcheck, gc_cfg);
  int gc_precision = 64, gc_samples = 60;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  std::string gc_norm = "none";
  gradcheck->add_option("--precision", gc_precision, "32|64")->capture_default_str();
  gradcheck->add_option("--norm", gc_norm, "none|batch (frozen)")->capture_default_str();
  gradcheck->add_option("--eps", gc_eps, "finite-difference step")->capture_default_str();
  gradcheck->add_option("--tol", gc_tol, "max relative error")->capture_default_str();
  gradcheck->add_option("--samples", gc_samples, "coordinates per tensor")
      ->capture_default_str();
  gradcheck->callback([&] {
    apply_backend(backend);
    RunConfig cfg = load_config(gc_cfg);
    cfg.model.precision = gc_precision;
    model_config_set(cfg.model, "norm", gc_norm);
    exit_code = gc_precision == 64
                    ? gradcheck_run<double>(cfg, gc_eps, gc_tol, gc_samples, out)
                    : gradcheck_run<float>(cfg, gc_eps, gc_tol, gc_samples, out);
  });

  // inspect
  auto* inspect = app.add_subcommand(
      "inspect", "dump the most activated feature maps of both pathways");
  ConfigArgs in_cfg;
  add_config_options(inspect, in_cfg);
  std::string in_ckpt, in_out, in_source = "video";
  int in_unit = -1, in_k = 3;
  uint64_t in_index = 0;
  inspect->add_option("--ckpt", in_ckpt, "checkpoint")->required();
  inspect->add_option("--out", in_out, "output directory")->required();
  inspect->add_option("--source", in_source, "image|video")->capture_default_str();
  inspect->add_option("--index", in_index, "example index")->capture_default_str();
  inspect->add_option("--unit", in_unit, "residual unit (-1 = last)")->capture_default_str();
  inspect->add_option("--k", in_k, "channels per pathway")->capture_default_str();
  inspect->callback([&] {
    apply_backend(backend);
    const CheckpointData data = load_checkpoint_file(in_ckpt);
    RunConfig cfg = load_config(in_cfg);
    cfg.model = data.config;
    exit_code = data.config.precision == 64
                    ? inspect_run<double>(data, cfg, in_source, in_index, in_unit,
                                          in_k, in_out, out)
                    : inspect_run<float>(data, cfg, in_source, in_index, in_unit,
                                         in_k, in_out, out);
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    return exit_code;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.get_name() << ": " << e.what() << "\n";
    err << app.help() << "\n";
    return 1;
  } catch (const ValueError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace unidual
