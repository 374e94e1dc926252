#pragma once

#include <string>
#include <vector>

namespace unidual {

// Binary PGM (P5) / PPM (P6) writers for eyeballing generated examples and
// activation maps. Values are expected in [0,1]; write_pgm_autoscale maps
// [min,max] onto the full gray range.

void write_pgm(const std::string& path, int h, int w,
               const std::vector<double>& gray);
void write_ppm(const std::string& path, int h, int w,
               const std::vector<double>& r, const std::vector<double>& g,
               const std::vector<double>& b);
void write_pgm_autoscale(const std::string& path, int h, int w,
                         const std::vector<double>& values);

}  // namespace unidual
