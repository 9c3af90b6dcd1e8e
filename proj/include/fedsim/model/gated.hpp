// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/agg/param_set.hpp"
#include "fedsim/model/encoder.hpp"

namespace fedsim::model {

/// Which block layers receive the other modality's weights.
enum class CoLayer { None, Blocks, Attention, Mlp };

std::string_view to_string(CoLayer c);
CoLayer co_layer_from_string(std::string_view name);

/// Layer prefixes (e.g. "blocks.0.attn.q") wrapped by `variant`, block-major.
std::vector<std::string> complementary_layers(CoLayer variant, std::size_t depth);

/// Per-layer scalar gates (initialized to 0) and the complementary weights
/// they scale. gates[i] and out_weights[i] belong to layers[i].
struct GatedLayerSet {
  CoLayer variant = CoLayer::None;
  bool out_trainable = true;
  std::vector<std::string> layers;
  std::vector<nn::Param> gates;        // "<layer>.gate", scalar
  std::vector<nn::Param> out_weights;  // "<layer>.weight"

  std::optional<std::size_t> find(std::string_view layer) const;
  std::vector<nn::Param*> param_ptrs();
};

struct GatedEncoder {
  ModalEncoder local;
  GatedLayerSet gated;
};

/// x W_local + b + g (x W_out).
nn::Var gated_linear(nn::Var x, nn::Var w_local, nn::Var bias, nn::Var gate, nn::Var w_out);

/// Wraps the layers chosen by `variant` with zero gates and copies of the
/// matching weights from `out_blocks`. Out weights are frozen unless
/// `out_trainable`.
GatedEncoder attach_complementary(ModalEncoder local, const agg::NamedParamSet& out_blocks,
                                  CoLayer variant, bool out_trainable);

/// Folds every gated layer into W_local + g W_out, giving a plain encoder with
/// the original parameter layout.
ModalEncoder merge_gated_weights(const GatedEncoder& model);

nn::Var forward_classify(nn::Graph& g, GatedEncoder& m, const InputBatch& in);

}  // namespace fedsim::model
