#include "unidual/blocks.hpp"

namespace unidual {

void BlockSpec::validate() const {
  require(in_channels > 0 && out_channels > 0 && mid_channels > 0,
          "block: channel counts must be positive");
  require(spatial_kernel % 2 == 1, "block: spatial kernel must be odd");
  require(temporal_kernel % 2 == 1, "block: temporal kernel must be odd");
  require(spatial_stride >= 1 && temporal_stride >= 1, "block: bad stride");
  if (kind == BlockKind::R2D)
    require(temporal_stride == 1, "R2D block cannot stride temporally");
}

namespace {

template <class T>
NormSite<T> make_norm(const ParamFactory<T>& factory, const std::string& prefix,
                      int channels, ParamGroup group, bool enabled, bool split) {
  NormSite<T> site;
  if (!enabled) return site;
  site.split = split;
  site.gamma = factory(prefix + ".gamma", {channels}, group, true, Init::One);
  site.beta = factory(prefix + ".beta", {channels}, group, true, Init::Zero);
  const int sets = split ? 2 : 1;
  const char* tag[2] = {".image", ".video"};
  for (int s = 0; s < sets; ++s) {
    const std::string suffix = split ? tag[s] : "";
    site.stats[s].mean =
        factory(prefix + ".mean" + suffix, {channels}, group, false, Init::Zero);
    site.stats[s].var =
        factory(prefix + ".var" + suffix, {channels}, group, false, Init::One);
    site.stats[s].count =
        factory(prefix + ".count" + suffix, {1}, group, false, Init::Zero);
  }
  return site;
}

}  // namespace

template <class T>
Var<T> norm_forward(Tape<T>* tape, NormSite<T>& site, const Var<T>& x,
                    Modality m, bool train, T eps, T momentum) {
  if (!site.enabled()) return x;
  return batch_norm(tape, x, site.gamma, site.beta, site.stats_for(m), train,
                    eps, momentum);
}

template <class T>
Block<T> make_block(const BlockSpec& spec, const ParamFactory<T>& factory,
                    const std::string& prefix, ParamGroup trunk_group) {
  spec.validate();
  Block<T> b;
  b.spec = spec;
  const bool bias = !spec.norm;
  b.spatial_w = factory(prefix + ".spatial.weight",
                        {spec.mid_channels, spec.in_channels,
                         spec.spatial_kernel, spec.spatial_kernel},
                        trunk_group, true, Init::FanInUniform);
  if (bias)
    b.spatial_b = factory(prefix + ".spatial.bias", {spec.mid_channels},
                          trunk_group, true, Init::Zero);
  b.spatial_norm = make_norm(factory, prefix + ".spatial.norm",
                             spec.mid_channels, trunk_group, spec.norm,
                             spec.split_norm_stats);

  const bool dual = spec.kind == BlockKind::UniDual;
  if (spec.kind == BlockKind::R2D || dual) {
    const std::string stem = prefix + (dual ? ".pointwise.image" : ".pointwise");
    b.pw_image_w = factory(stem + ".weight",
                           {spec.out_channels, spec.mid_channels, 1},
                           dual ? ParamGroup::ImageBranch : trunk_group, true,
                           Init::FanInUniform);
    if (bias)
      b.pw_image_b = factory(stem + ".bias", {spec.out_channels},
                             dual ? ParamGroup::ImageBranch : trunk_group, true,
                             Init::Zero);
  }
  if (spec.kind == BlockKind::R2P1D || dual) {
    const std::string stem = prefix + (dual ? ".pointwise.video" : ".pointwise");
    b.pw_video_w = factory(stem + ".weight",
                           {spec.out_channels, spec.mid_channels,
                            spec.temporal_kernel},
                           dual ? ParamGroup::VideoBranch : trunk_group, true,
                           Init::FanInUniform);
    if (bias)
      b.pw_video_b = factory(stem + ".bias", {spec.out_channels},
                             dual ? ParamGroup::VideoBranch : trunk_group, true,
                             Init::Zero);
  }
  b.pw_norm = make_norm(factory, prefix + ".pointwise.norm", spec.out_channels,
                        trunk_group, spec.norm, spec.split_norm_stats);
  return b;
}

template <class T>
Var<T> block_forward(Tape<T>* tape, Block<T>& block, const Var<T>& x,
                     Modality modality, bool train, T bn_eps, T bn_momentum) {
  const BlockSpec& s = block.spec;
  require(x->c() == s.in_channels,
          "block: input has " + std::to_string(x->c()) + " channels, spec expects " +
              std::to_string(s.in_channels));
  if (s.kind == BlockKind::UniDual && modality == Modality::Image)
    require(x->l() == 1, "UniDual image input must have L=1, got L=" +
                             std::to_string(x->l()));

  auto y = conv_spatial(tape, x, block.spatial_w, block.spatial_b,
                        s.spatial_stride, (s.spatial_kernel - 1) / 2);
  y = norm_forward(tape, block.spatial_norm, y, modality, train, bn_eps, bn_momentum);
  y = relu(tape, y);

  // Point-wise stage. The unselected branch of a UniDual block is never
  // touched, so its parameters stay off the tape.
  const bool use_video_bank =
      s.kind == BlockKind::R2P1D ||
      (s.kind == BlockKind::UniDual && modality == Modality::Video);
  if (use_video_bank) {
    require(block.pw_video_w != nullptr, "block: missing video point-wise bank");
    return conv_temporal(tape, y, block.pw_video_w, block.pw_video_b,
                         (s.temporal_kernel - 1) / 2, s.temporal_stride);
  }
  require(block.pw_image_w != nullptr, "block: missing image point-wise bank");
  return conv_temporal(tape, y, block.pw_image_w, block.pw_image_b, 0, 1);
}

template <class T>
ResidualUnit<T> make_residual_unit(const BlockSpec& spec,
                                   const ParamFactory<T>& factory,
                                   const std::string& prefix,
                                   ParamGroup trunk_group) {
  ResidualUnit<T> u;
  BlockSpec b1 = spec;
  BlockSpec b2 = b1;
  b2.in_channels = spec.out_channels;
  b2.spatial_stride = 1;
  b2.temporal_stride = 1;
  u.block1 = make_block(b1, factory, prefix + ".block0", trunk_group);
  u.block2 = make_block(b2, factory, prefix + ".block1", trunk_group);
  u.has_projection = spec.in_channels != spec.out_channels ||
                     spec.spatial_stride > 1 || spec.temporal_stride > 1;
  if (u.has_projection) {
    u.shortcut_w = factory(prefix + ".shortcut.weight",
                           {spec.out_channels, spec.in_channels, 1, 1},
                           trunk_group, true, Init::FanInUniform);
    if (!spec.norm)
      u.shortcut_b = factory(prefix + ".shortcut.bias", {spec.out_channels},
                             trunk_group, true, Init::Zero);
    u.shortcut_norm = make_norm(factory, prefix + ".shortcut.norm",
                                spec.out_channels, trunk_group, spec.norm,
                                spec.split_norm_stats);
  }
  return u;
}

template <class T>
Var<T> unit_forward(Tape<T>* tape, ResidualUnit<T>& unit, const Var<T>& x,
                    Modality modality, bool train, T bn_eps, T bn_momentum,
                    UnitProbe<T>* probe) {
  auto h = block_forward(tape, unit.block1, x, modality, train, bn_eps, bn_momentum);
  h = norm_forward(tape, unit.block1.pw_norm, h, modality, train, bn_eps, bn_momentum);
  h = relu(tape, h);
  h = block_forward(tape, unit.block2, h, modality, train, bn_eps, bn_momentum);
  if (probe) probe->post_pointwise = h;
  h = norm_forward(tape, unit.block2.pw_norm, h, modality, train, bn_eps, bn_momentum);

  Var<T> sc = x;
  if (unit.has_projection) {
    sc = conv_spatial(tape, x, unit.shortcut_w, unit.shortcut_b,
                      unit.block1.spec.spatial_stride, 0);
    if (unit.block1.spec.temporal_stride > 1 && modality == Modality::Video)
      sc = subsample_frames(tape, sc, unit.block1.spec.temporal_stride);
    sc = norm_forward(tape, unit.shortcut_norm, sc, modality, train, bn_eps,
                    bn_momentum);
  }
  return relu(tape, add(tape, sc, h));
}

#define UNIDUAL_INSTANTIATE_BLOCKS(T)                                          \
  template Block<T> make_block<T>(const BlockSpec&, const ParamFactory<T>&,   \
                                  const std::string&, ParamGroup);             \
  template ResidualUnit<T> make_residual_unit<T>(                             \
      const BlockSpec&, const ParamFactory<T>&, const std::string&,           \
      ParamGroup);                                                             \
  template Var<T> block_forward<T>(Tape<T>*, Block<T>&, const Var<T>&,        \
                                   Modality, bool, T, T);                      \
  template Var<T> norm_forward<T>(Tape<T>*, NormSite<T>&, const Var<T>&,      \
                                  Modality, bool, T, T);                       \
  template Var<T> unit_forward<T>(Tape<T>*, ResidualUnit<T>&, const Var<T>&,  \
                                  Modality, bool, T, T, UnitProbe<T>*);

UNIDUAL_INSTANTIATE_BLOCKS(float)
UNIDUAL_INSTANTIATE_BLOCKS(double)
#undef UNIDUAL_INSTANTIATE_BLOCKS

}  // namespace unidual
