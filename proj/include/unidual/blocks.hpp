#pragma once

#include "unidual/ops.hpp"
#include "unidual/params.hpp"

namespace unidual {

enum class BlockKind { R2D, R2P1D, UniDual };

// One convolutional block: a d×d spatial convolution shared across
// modalities, then a point-wise convolution (1×1 for the image pathway,
// t×1×1 temporal for the video pathway). R2D keeps only the 1×1 bank,
// R(2+1)D only the temporal bank, UniDual both.
struct BlockSpec {
  BlockKind kind = BlockKind::R2D;
  int in_channels = 0;
  int out_channels = 0;
  int mid_channels = 0;  // width between spatial and point-wise conv
  int spatial_kernel = 3;
  int temporal_kernel = 1;
  int spatial_stride = 1;
  int temporal_stride = 1;
  bool norm = false;
  bool split_norm_stats = false;  // per-pathway running statistics

  void validate() const;
};

template <class T>
struct NormSite {
  Var<T> gamma, beta;
  NormStats<T> stats[2];  // [0]=image (and the single set when not split)
  bool split = false;

  bool enabled() const { return gamma != nullptr; }
  NormStats<T>& stats_for(Modality m) {
    return stats[split && m == Modality::Video ? 1 : 0];
  }
};

template <class T>
struct Block {
  BlockSpec spec;
  Var<T> spatial_w, spatial_b;
  NormSite<T> spatial_norm;
  Var<T> pw_image_w, pw_image_b;  // 1×1
  Var<T> pw_video_w, pw_video_b;  // t×1×1
  NormSite<T> pw_norm;            // applied by the unit after the point-wise conv
};

// Two blocks plus a shortcut (Eq.-style residual unit, basic 34-layer form).
// The projection shortcut is a modality-agnostic 1×1 spatial convolution.
template <class T>
struct ResidualUnit {
  Block<T> block1, block2;
  bool has_projection = false;
  Var<T> shortcut_w, shortcut_b;
  NormSite<T> shortcut_norm;
};

template <class T>
struct UnitProbe {
  Var<T> post_pointwise;  // raw output of the unit's second point-wise conv
};

template <class T>
Block<T> make_block(const BlockSpec& spec, const ParamFactory<T>& factory,
                    const std::string& prefix, ParamGroup trunk_group);

/// Applies the site's batch norm (pathway-matched stats); identity when the
/// site is disabled.
template <class T>
Var<T> norm_forward(Tape<T>* tape, NormSite<T>& site, const Var<T>& x,
                    Modality m, bool train, T eps, T momentum);

template <class T>
ResidualUnit<T> make_residual_unit(const BlockSpec& spec,
                                   const ParamFactory<T>& factory,
                                   const std::string& prefix,
                                   ParamGroup trunk_group);

/// conv_spatial → norm → ReLU → point-wise conv selected by modality.
/// Ends at the point-wise conv output; the caller owns any trailing
/// norm/ReLU. Only the selected branch's parameters enter the tape.
template <class T>
Var<T> block_forward(Tape<T>* tape, Block<T>& block, const Var<T>& x,
                     Modality modality, bool train, T bn_eps, T bn_momentum);

/// relu(shortcut(x) + norm(block2(relu(norm(block1(x)))))); ReLU between the
/// blocks only, plus the post-add ReLU.
template <class T>
Var<T> unit_forward(Tape<T>* tape, ResidualUnit<T>& unit, const Var<T>& x,
                    Modality modality, bool train, T bn_eps, T bn_momentum,
                    UnitProbe<T>* probe = nullptr);

}  // namespace unidual
