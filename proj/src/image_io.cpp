#include "unidual/image_io.hpp"

#include <algorithm>
#include <fstream>

#include "unidual/common.hpp"

namespace unidual {

namespace {

uint8_t to_byte(double v) {
  return uint8_t(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
}

std::ofstream open_binary(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NumericError("cannot open for writing: " + path);
  return out;
}

}  // namespace

void write_pgm(const std::string& path, int h, int w,
               const std::vector<double>& gray) {
  require(int64_t(gray.size()) == int64_t(h) * w, "write_pgm: size mismatch");
  auto out = open_binary(path);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (double v : gray) out.put(char(to_byte(v)));
}

void write_ppm(const std::string& path, int h, int w,
               const std::vector<double>& r, const std::vector<double>& g,
               const std::vector<double>& b) {
  require(int64_t(r.size()) == int64_t(h) * w && g.size() == r.size() &&
              b.size() == r.size(),
          "write_ppm: size mismatch");
  auto out = open_binary(path);
  out << "P6\n" << w << " " << h << "\n255\n";
  for (size_t i = 0; i < r.size(); ++i) {
    out.put(char(to_byte(r[i])));
    out.put(char(to_byte(g[i])));
    out.put(char(to_byte(b[i])));
  }
}

void write_pgm_autoscale(const std::string& path, int h, int w,
                         const std::vector<double>& values) {
  require(!values.empty(), "write_pgm_autoscale: empty map");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double span = *hi - *lo;
  std::vector<double> scaled(values.size());
  for (size_t i = 0; i < values.size(); ++i)
    scaled[i] = span > 0 ? (values[i] - *lo) / span : 0.5;
  write_pgm(path, h, w, scaled);
}

}  // namespace unidual
