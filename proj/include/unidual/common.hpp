#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace unidual {

/// Validation failure (bad shapes, arguments, configuration). CLI exit code 1.
struct ValueError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Runtime failure (non-finite values, corrupt files). CLI exit code 2.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += "x";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ValueError(msg);
}

enum class Modality { Image, Video };

inline const char* modality_name(Modality m) {
  return m == Modality::Image ? "image" : "video";
}

}  // namespace unidual
