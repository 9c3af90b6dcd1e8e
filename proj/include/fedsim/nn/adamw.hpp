// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedsim/nn/param.hpp"

namespace fedsim::nn {

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  bool initialized = false;
};

AdamWState adamw_init(std::span<Param* const> params, const AdamWOptions& opts);

/// One AdamW update with decoupled weight decay. Params with trainable == false
/// are left untouched (their moments stay zero). The learning-rate schedule is
/// the caller's: it edits state.lr between steps.
void adamw_step(std::span<Param* const> params, AdamWState& state);

}  // namespace fedsim::nn
