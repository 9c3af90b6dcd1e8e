// SPDX-License-Identifier: Apache-2.0
#include "fedsim/model/config.hpp"

#include <string>

#include "fedsim/common/error.hpp"

namespace fedsim::model {

std::string_view to_string(Modality m) { return m == Modality::Vision ? "vision" : "text"; }

void TransformerConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ContractError("transformer dim " + std::to_string(dim) + " not divisible by " +
                        std::to_string(heads) + " heads");
  }
  if (depth < 1) throw ContractError("transformer depth must be >= 1");
  if (max_seq < 1) throw ContractError("transformer max_seq must be >= 1");
  if (mlp_ratio < 1) throw ContractError("transformer mlp_ratio must be >= 1");
}

void EncoderConfig::validate() const {
  blocks.validate();
  if (input_dim == 0) throw ContractError("encoder input_dim must be positive");
  if (out_dim == 0) throw ContractError("encoder out_dim must be positive");
}

}  // namespace fedsim::model
