// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/model/config.hpp"
#include "fedsim/nn/grad_check.hpp"

namespace fedsim::model {

struct GradSuiteCase {
  std::string name;
  nn::GradCheckReport report;
};

/// Finite-difference checks of whole transformer encoders: classification on
/// both modalities, the contrastive pair, and gated layers (random gates and
/// gates at zero). All parameters are perturbed away from their structured
/// init first so biases and norms see generic values.
std::vector<GradSuiteCase> transformer_grad_suite(const TransformerConfig& blocks, std::uint64_t seed,
                                                  const nn::GradCheckOptions& opts);

}  // namespace fedsim::model
