// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fedsim/nn/graph.hpp"

namespace fedsim::nn {

struct GradCheckEntry {
  std::string path;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Largest errors first.
  std::vector<GradCheckEntry> worst;
};

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  /// Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t coords_per_param = 8;
  std::size_t report_top = 5;
  std::uint64_t seed = 0;
};

using LossClosure = std::function<Var(Graph&)>;

/// Compares reverse-mode gradients against central differences on a
/// coordinate sample. Violations land in the report, they never throw.
GradCheckReport grad_check(const LossClosure& loss, const std::vector<Param*>& params,
                           const GradCheckOptions& opts = {});

}  // namespace fedsim::nn
