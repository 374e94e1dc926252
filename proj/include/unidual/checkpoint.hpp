#pragma once

#include "unidual/model.hpp"

namespace unidual {

// UDCK binary checkpoint format, version 1, little-endian throughout:
//
//   "UDCK" | u32 version | u32 config_len | config text
//   | u64 record_count | records…
//   | u8 has_optimizer_state | [u64 count | records…]
//
//   record: u32 name_len | name | u8 dtype (1=f32, 2=f64)
//           | u32 rank | u64 extents[rank] | raw values
//
// Readers are strict: trailing bytes after the last section are an error.

struct CheckpointError : NumericError {
  enum class Kind {
    BadMagic,
    UnsupportedVersion,
    CorruptRecord,
    UnknownTensor,
    MissingTensor,
    ExtentMismatch,
    TrailingData,
  };
  Kind kind;
  std::string record;
  CheckpointError(Kind k, const std::string& rec, const std::string& msg)
      : NumericError(msg), kind(k), record(rec) {}
};

struct TensorRecord {
  std::string name;
  int dtype = 1;  // 1=f32, 2=f64
  Shape extents;
  std::vector<double> values;  // exact carrier for both payload precisions
};

struct CheckpointData {
  ModelConfig config;
  std::vector<TensorRecord> records;
  bool has_optimizer = false;
  std::vector<TensorRecord> optimizer;
};

void save_checkpoint_file(const CheckpointData& data, const std::string& path);
CheckpointData load_checkpoint_file(const std::string& path);

enum class HeadLoadPolicy {
  Strict,        // every parameter must be covered by a record
  ReinitMissing  // head.* records may be absent; their fresh init is kept
};

template <class T>
CheckpointData checkpoint_from_network(const Network<T>& net);

template <class T>
void assign_checkpoint(Network<T>& net, const CheckpointData& data,
                       HeadLoadPolicy policy);

template <class T>
Network<T> network_from_checkpoint(const CheckpointData& data,
                                   HeadLoadPolicy policy = HeadLoadPolicy::Strict);

template <class T>
void save_checkpoint(const Network<T>& net, const std::string& path);

template <class T>
Network<T> load_checkpoint(const std::string& path,
                           HeadLoadPolicy policy = HeadLoadPolicy::Strict);

/// Video model → image model: every temporal bank C_out×C_in×t collapses to
/// C_out×C_in×1 by summing its taps; spatial banks, biases and norm
/// parameters are copied verbatim. The video head becomes the image head
/// only when the class counts match.
CheckpointData deflate_weights(const CheckpointData& video_ckpt);

/// Image model → video model: every 1×1 point-wise weight w becomes t taps
/// of w/t, so that deflate(inflate(c, t)) reproduces c and static clips
/// evaluate like the source images.
CheckpointData inflate_weights(const CheckpointData& image_ckpt, int t);

}  // namespace unidual
