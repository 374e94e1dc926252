#include "unidual/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace unidual {

template <class T>
GradCheckReport grad_check(const std::function<Var<T>(Tape<T>*)>& forward,
                           const std::vector<Parameter<T>>& params, T eps,
                           int max_coords, uint64_t seed) {
  require(eps > T(0), "grad_check: eps must be positive");
  require(max_coords >= 1, "grad_check: max_coords must be >= 1");

  for (const auto& p : params) p.tensor->clear_grad();
  Tape<T> tape;
  auto loss = forward(&tape);
  assert_finite(*loss, "grad_check loss");
  tape.backward(loss);

  GradCheckReport report;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    auto& t = *p.tensor;
    if (!t.g.empty() && !all_finite(t.g))
      throw NumericError("grad_check: non-finite analytic gradient in " + p.name);

    std::vector<size_t> coords;
    if (int64_t(t.size()) <= max_coords) {
      coords.resize(t.size());
      for (size_t i = 0; i < t.size(); ++i) coords[i] = i;
    } else {
      Rng rng = sub_rng(seed, "gradcheck/" + p.name);
      for (int i = 0; i < max_coords; ++i) coords.push_back(size_t(rng.below(t.size())));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }

    GradCheckEntry entry;
    entry.name = p.name;
    for (size_t ci : coords) {
      const T saved = t.v[ci];
      t.v[ci] = saved + eps;
      const double lp = double(forward(nullptr)->v[0]);
      t.v[ci] = saved - eps;
      const double lm = double(forward(nullptr)->v[0]);
      t.v[ci] = saved;
      const double numeric = (lp - lm) / (2.0 * double(eps));
      if (!std::isfinite(numeric))
        throw NumericError("grad_check: non-finite numeric gradient in " + p.name);
      const double analytic = t.g.empty() ? 0.0 : double(t.g[ci]);
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.coords_checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

template GradCheckReport grad_check<float>(
    const std::function<Var<float>(Tape<float>*)>&,
    const std::vector<Parameter<float>>&, float, int, uint64_t);
template GradCheckReport grad_check<double>(
    const std::function<Var<double>(Tape<double>*)>&,
    const std::vector<Parameter<double>>&, double, int, uint64_t);

}  // namespace unidual
