#pragma once

#include <iosfwd>

#include "unidual/checkpoint.hpp"
#include "unidual/config.hpp"

namespace unidual {

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  std::optional<double> loss_img, loss_vid, loss_aux_img, loss_aux_vid;
  std::optional<double> top1, top5, clip1, video1;
  std::optional<double> seconds;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochRecord& r);

struct RunMetrics {
  std::vector<EpochRecord> epochs;
};

// One full training run: epoch loop over epoch_size/batch_size steps,
// per-epoch evaluation, incrementally written metrics CSV, resolved config
// echoed to <out_dir>/config.cfg, final checkpoint at <out_dir>/final.udck.
// Deterministic given the config seed (wall time lands only in the optional
// `seconds` CSV field, which train.log_timing=false leaves empty).
template <class T>
RunMetrics run_training(const RunConfig& cfg, const std::string& out_dir,
                        std::ostream& log);

/// Dispatches on cfg.model.precision. Expects apply_variant() already done.
RunMetrics run_training_auto(const RunConfig& cfg, const std::string& out_dir,
                             std::ostream& log);

}  // namespace unidual
