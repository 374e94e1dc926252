#include "unidual/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace unidual {

namespace {

constexpr char kMagic[4] = {'U', 'D', 'C', 'K'};
constexpr uint32_t kVersion = 1;

using Kind = CheckpointError::Kind;

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw NumericError("cannot open for writing: " + path);
  }
  void bytes(const void* p, size_t n) { out_.write(static_cast<const char*>(p), n); }
  void u8(uint8_t v) { bytes(&v, 1); }
  void u32(uint32_t v) {
    uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
    bytes(b, 4);
  }
  void u64(uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = uint8_t(v >> (8 * i));
    bytes(b, 8);
  }
  void str(const std::string& s) {
    u32(uint32_t(s.size()));
    bytes(s.data(), s.size());
  }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void close() {
    out_.close();
    if (!out_) throw NumericError("write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw NumericError("cannot open checkpoint: " + path);
  }
  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), std::streamsize(n));
    if (size_t(in_.gcount()) != n)
      throw CheckpointError(Kind::CorruptRecord, context,
                            "truncated checkpoint while reading " +
                                (context.empty() ? std::string("header") : context));
  }
  uint8_t u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint8_t b[4];
    bytes(b, 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
           uint32_t(b[3]) << 24;
  }
  uint64_t u64() {
    uint8_t b[8];
    bytes(b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    if (n > (1u << 20))
      throw CheckpointError(Kind::CorruptRecord, context, "implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

  std::string context;  // record name for error messages

 private:
  std::ifstream in_;
};

void write_record(Writer& w, const TensorRecord& r) {
  w.str(r.name);
  w.u8(uint8_t(r.dtype));
  w.u32(uint32_t(r.extents.size()));
  for (int e : r.extents) w.u64(uint64_t(e));
  if (r.dtype == 1)
    for (double v : r.values) w.f32(float(v));
  else
    for (double v : r.values) w.f64(v);
}

TensorRecord read_record(Reader& rd) {
  TensorRecord r;
  r.name = rd.str();
  rd.context = r.name;
  r.dtype = rd.u8();
  if (r.dtype != 1 && r.dtype != 2)
    throw CheckpointError(Kind::CorruptRecord, r.name,
                          "record " + r.name + " has unknown dtype " +
                              std::to_string(r.dtype));
  const uint32_t rank = rd.u32();
  if (rank > 8)
    throw CheckpointError(Kind::CorruptRecord, r.name,
                          "record " + r.name + " has implausible rank");
  int64_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const uint64_t e = rd.u64();
    if (e == 0 || e > (1ull << 32))
      throw CheckpointError(Kind::CorruptRecord, r.name,
                            "record " + r.name + " has bad extent");
    r.extents.push_back(int(e));
    n *= int64_t(e);
  }
  r.values.resize(size_t(n));
  if (r.dtype == 1)
    for (auto& v : r.values) v = double(rd.f32());
  else
    for (auto& v : r.values) v = rd.f64();
  rd.context.clear();
  return r;
}

}  // namespace

void save_checkpoint_file(const CheckpointData& data, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.str(model_config_text(data.config));
  w.u64(data.records.size());
  for (const auto& r : data.records) write_record(w, r);
  w.u8(data.has_optimizer ? 1 : 0);
  if (data.has_optimizer) {
    w.u64(data.optimizer.size());
    for (const auto& r : data.optimizer) write_record(w, r);
  }
  w.close();
}

CheckpointData load_checkpoint_file(const std::string& path) {
  Reader rd(path);
  char magic[4];
  rd.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError(Kind::BadMagic, "",
                          "not a UDCK checkpoint: bad magic in " + path);
  const uint32_t version = rd.u32();
  if (version != kVersion)
    throw CheckpointError(Kind::UnsupportedVersion, "",
                          "unsupported checkpoint version " + std::to_string(version));
  CheckpointData data;
  data.config = model_config_from_text(rd.str());
  const uint64_t n = rd.u64();
  for (uint64_t i = 0; i < n; ++i) data.records.push_back(read_record(rd));
  data.has_optimizer = rd.u8() != 0;
  if (data.has_optimizer) {
    const uint64_t m = rd.u64();
    for (uint64_t i = 0; i < m; ++i) data.optimizer.push_back(read_record(rd));
  }
  if (!rd.at_eof())
    throw CheckpointError(Kind::TrailingData, "",
                          "unknown trailing records in " + path);
  return data;
}

template <class T>
CheckpointData checkpoint_from_network(const Network<T>& net) {
  CheckpointData data;
  data.config = net.config;
  const int dtype = net.config.precision == 64 ? 2 : 1;
  for (const auto& p : net.params.items()) {
    TensorRecord r;
    r.name = p.name;
    r.dtype = dtype;
    r.extents = p.tensor->shape;
    r.values.assign(p.tensor->v.begin(), p.tensor->v.end());
    data.records.push_back(std::move(r));
  }
  return data;
}

template <class T>
void assign_checkpoint(Network<T>& net, const CheckpointData& data,
                       HeadLoadPolicy policy) {
  std::vector<bool> seen(net.params.items().size(), false);
  for (const auto& r : data.records) {
    Parameter<T>* p = net.params.find(r.name);
    if (!p)
      throw CheckpointError(Kind::UnknownTensor, r.name,
                            "checkpoint record " + r.name +
                                " does not match any network parameter");
    if (p->tensor->shape != r.extents)
      throw CheckpointError(Kind::ExtentMismatch, r.name,
                            "record " + r.name + " has extents " +
                                shape_str(r.extents) + ", parameter expects " +
                                shape_str(p->tensor->shape));
    for (size_t i = 0; i < r.values.size(); ++i) p->tensor->v[i] = T(r.values[i]);
    for (size_t i = 0; i < net.params.items().size(); ++i)
      if (&net.params.items()[i] == p) seen[i] = true;
  }
  for (size_t i = 0; i < seen.size(); ++i) {
    if (seen[i]) continue;
    const auto& name = net.params.items()[i].name;
    if (policy == HeadLoadPolicy::ReinitMissing && name.rfind("head.", 0) == 0)
      continue;
    throw CheckpointError(Kind::MissingTensor, name,
                          "checkpoint has no record for parameter " + name);
  }
}

template <class T>
Network<T> network_from_checkpoint(const CheckpointData& data, HeadLoadPolicy policy) {
  auto net = build_network<T>(data.config);
  assign_checkpoint(net, data, policy);
  return net;
}

template <class T>
void save_checkpoint(const Network<T>& net, const std::string& path) {
  save_checkpoint_file(checkpoint_from_network(net), path);
}

template <class T>
Network<T> load_checkpoint(const std::string& path, HeadLoadPolicy policy) {
  return network_from_checkpoint<T>(load_checkpoint_file(path), policy);
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

TensorRecord sum_taps(const TensorRecord& r) {
  require(r.extents.size() == 3, "deflate: temporal bank " + r.name +
                                     " has unexpected rank");
  TensorRecord out = r;
  const int co = r.extents[0], ci = r.extents[1], t = r.extents[2];
  require(t % 2 == 1, "deflate: temporal bank " + r.name + " has even t");
  out.extents = {co, ci, 1};
  out.values.assign(size_t(co) * ci, 0.0);
  for (int o = 0; o < co; ++o)
    for (int i = 0; i < ci; ++i) {
      double s = 0;
      for (int tau = 0; tau < t; ++tau)
        s += r.values[(size_t(o) * ci + i) * t + tau];
      out.values[size_t(o) * ci + i] = s;
    }
  return out;
}

TensorRecord spread_taps(const TensorRecord& r, int t) {
  require(r.extents.size() == 3 && r.extents[2] == 1,
          "inflate: point-wise bank " + r.name + " has unexpected shape");
  TensorRecord out = r;
  const int co = r.extents[0], ci = r.extents[1];
  out.extents = {co, ci, t};
  out.values.assign(size_t(co) * ci * t, 0.0);
  for (int o = 0; o < co; ++o)
    for (int i = 0; i < ci; ++i) {
      const double tap = r.values[size_t(o) * ci + i] / double(t);
      for (int tau = 0; tau < t; ++tau)
        out.values[(size_t(o) * ci + i) * t + tau] = tap;
    }
  return out;
}

}  // namespace

CheckpointData deflate_weights(const CheckpointData& video_ckpt) {
  const ModelConfig& src = video_ckpt.config;
  require(src.arch == Arch::R2P1D || src.arch == Arch::UniDual,
          "deflate: source checkpoint must be r2p1d or unidual");
  const bool dual = src.arch == Arch::UniDual;
  const bool keep_head = src.heads.image_main;  // already has a trained image head
  const bool convert_head =
      !keep_head && src.classes_video == src.classes_image;

  ModelConfig cfg = src;
  cfg.arch = Arch::R2D;
  cfg.heads = {true, false, false, false};
  cfg.bn_stats = BnStatsMode::PerPathway;  // irrelevant for single pathway
  cfg.validate();

  CheckpointData out;
  out.config = cfg;
  bool saw_temporal = false;
  for (const auto& r : video_ckpt.records) {
    if (starts_with(r.name, "head.")) {
      if (keep_head && starts_with(r.name, "head.image.")) out.records.push_back(r);
      if (convert_head && starts_with(r.name, "head.video.")) {
        TensorRecord h = r;
        h.name = replace_all(h.name, "head.video.", "head.image.");
        out.records.push_back(std::move(h));
      }
      continue;  // mismatched or auxiliary heads are dropped
    }
    if (dual) {
      if (r.name.find(".pointwise.image.") != std::string::npos) continue;
      if (r.name.find(".pointwise.video.weight") != std::string::npos) {
        TensorRecord w = sum_taps(r);
        w.name = replace_all(w.name, ".pointwise.video.", ".pointwise.");
        out.records.push_back(std::move(w));
        saw_temporal = true;
        continue;
      }
      if (r.name.find(".pointwise.video.") != std::string::npos) {
        TensorRecord b = r;  // bias copied verbatim
        b.name = replace_all(b.name, ".pointwise.video.", ".pointwise.");
        out.records.push_back(std::move(b));
        continue;
      }
      // Per-pathway norm stats: the video set carries over, the image set drops.
      if (ends_with(r.name, ".image") &&
          r.name.find(".norm.") != std::string::npos)
        continue;
      if (ends_with(r.name, ".video") &&
          r.name.find(".norm.") != std::string::npos) {
        TensorRecord s = r;
        s.name = s.name.substr(0, s.name.size() - 6);
        out.records.push_back(std::move(s));
        continue;
      }
    } else if (ends_with(r.name, ".pointwise.weight")) {
      out.records.push_back(sum_taps(r));
      saw_temporal = true;
      continue;
    }
    out.records.push_back(r);
  }
  if (!saw_temporal)
    throw ValueError("deflate: checkpoint has no temporal banks");
  return out;
}

CheckpointData inflate_weights(const CheckpointData& image_ckpt, int t) {
  require(t >= 1 && t % 2 == 1, "inflate: t must be odd, got " + std::to_string(t));
  const ModelConfig& src = image_ckpt.config;
  require(src.arch == Arch::R2D, "inflate: source checkpoint must be r2d");
  const bool keep_head = src.heads.video_main;
  const bool convert_head = !keep_head && src.classes_image == src.classes_video;

  ModelConfig cfg = src;
  cfg.arch = Arch::R2P1D;
  cfg.stem_temporal_kernel = t;
  cfg.block_temporal_kernel = t;
  cfg.heads = {false, true, false, false};
  cfg.validate();

  CheckpointData out;
  out.config = cfg;
  for (const auto& r : image_ckpt.records) {
    if (starts_with(r.name, "head.")) {
      if (keep_head && starts_with(r.name, "head.video.")) out.records.push_back(r);
      if (convert_head && starts_with(r.name, "head.image.")) {
        TensorRecord h = r;
        h.name = replace_all(h.name, "head.image.", "head.video.");
        out.records.push_back(std::move(h));
      }
      continue;
    }
    if (ends_with(r.name, ".pointwise.weight")) {
      out.records.push_back(spread_taps(r, t));
      continue;
    }
    out.records.push_back(r);
  }
  return out;
}

#define UNIDUAL_INSTANTIATE_CKPT(T)                                            \
  template CheckpointData checkpoint_from_network<T>(const Network<T>&);       \
  template void assign_checkpoint<T>(Network<T>&, const CheckpointData&,      \
                                     HeadLoadPolicy);                          \
  template Network<T> network_from_checkpoint<T>(const CheckpointData&,       \
                                                 HeadLoadPolicy);              \
  template void save_checkpoint<T>(const Network<T>&, const std::string&);    \
  template Network<T> load_checkpoint<T>(const std::string&, HeadLoadPolicy);

UNIDUAL_INSTANTIATE_CKPT(float)
UNIDUAL_INSTANTIATE_CKPT(double)
#undef UNIDUAL_INSTANTIATE_CKPT

}  // namespace unidual
