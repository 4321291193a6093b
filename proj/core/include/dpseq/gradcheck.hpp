#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpseq/rng.hpp"
#include "dpseq/tensor.hpp"

namespace dpseq {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;

  bool passed(double tol = 1e-4) const { return max_rel_error < tol; }
};

// Central finite differences against the tape's analytic gradients, double
// precision only (the step is unusable in float32). make_loss must be a pure
// function of the current parameter values; it receives a tape pointer that
// is null for the perturbed re-evaluations. When a tensor has more
// coordinates than max_coords, a seeded random subset is probed.
template <typename MakeLoss>
GradCheckReport gradient_check(const std::vector<std::pair<std::string, Tensor<double>>>& params,
                               MakeLoss&& make_loss, double step = 1e-5,
                               std::size_t max_coords = SIZE_MAX,
                               std::uint64_t coord_seed = 0) {
  Tape<double> tape;
  Tensor<double> loss = make_loss(&tape);
  tape.backward(loss);

  GradCheckReport report;
  Rng rng(derive_seed(coord_seed, "gradcheck-coords"));
  for (const auto& [name, param] : params) {
    const std::vector<double>* analytic = tape.grad(param);
    std::vector<std::size_t> coords;
    if (param.size() <= max_coords) {
      coords.resize(param.size());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < max_coords; ++i)
        coords.push_back(static_cast<std::size_t>(rng.below(param.size())));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    GradCheckEntry entry{name, 0.0, coords.size()};
    auto& values = const_cast<Tensor<double>&>(param).values();
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = make_loss(static_cast<Tape<double>*>(nullptr)).item();
      values[i] = saved - step;
      const double down = make_loss(static_cast<Tape<double>*>(nullptr)).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic ? (*analytic)[i] : 0.0;
      // the floor keeps finite-difference noise on near-zero gradients from
      // registering as relative error
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dpseq
