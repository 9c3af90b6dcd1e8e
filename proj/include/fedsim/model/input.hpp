// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "fedsim/model/config.hpp"

namespace fedsim::model {

/// A batch of token sequences. Vision batches carry `patches`
/// ([batch, seq, patch_dim] row-major); text batches carry `tokens`
/// ([batch, seq]).
struct InputBatch {
  Modality modality = Modality::Vision;
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t patch_dim = 0;
  std::vector<double> patches;
  std::vector<int> tokens;
};

}  // namespace fedsim::model
