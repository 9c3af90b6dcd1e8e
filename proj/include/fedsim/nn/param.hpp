// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

#include "fedsim/nn/tensor.hpp"

namespace fedsim::nn {

/// Which part of the model a parameter belongs to. Transformer-block
/// parameters are always Attention, Mlp or Norm; aggregation keys off this.
enum class PartTag { Embedding, Attention, Mlp, Norm, Head, Gate };

std::string_view to_string(PartTag tag);
PartTag part_tag_from_string(std::string_view name);
inline bool is_block_tag(PartTag t) {
  return t == PartTag::Attention || t == PartTag::Mlp || t == PartTag::Norm;
}

class Param {
 public:
  Param(std::string path, PartTag tag, Tensor init)
      : value(std::move(init)), grad(Tensor::zeros_like(value)), path_(std::move(path)), tag_(tag) {}

  const std::string& path() const { return path_; }
  PartTag tag() const { return tag_; }

  void zero_grad() { grad.fill(0.0); }

  Tensor value;
  Tensor grad;
  bool trainable = true;

 private:
  std::string path_;
  PartTag tag_;
};

}  // namespace fedsim::nn
