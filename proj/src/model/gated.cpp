// SPDX-License-Identifier: Apache-2.0
#include "fedsim/model/gated.hpp"

#include <string>

#include "fedsim/common/error.hpp"

namespace fedsim::model {

using nn::Var;

std::string_view to_string(CoLayer c) {
  switch (c) {
    case CoLayer::None: return "none";
    case CoLayer::Blocks: return "blocks";
    case CoLayer::Attention: return "attention";
    case CoLayer::Mlp: return "mlp";
  }
  return "?";
}

CoLayer co_layer_from_string(std::string_view name) {
  if (name == "none") return CoLayer::None;
  if (name == "blocks") return CoLayer::Blocks;
  if (name == "attention") return CoLayer::Attention;
  if (name == "mlp") return CoLayer::Mlp;
  throw ContractError("unknown co_layer '" + std::string(name) +
                      "' (expected none, blocks, attention or mlp)");
}

std::vector<std::string> complementary_layers(CoLayer variant, std::size_t depth) {
  std::vector<std::string> out;
  if (variant == CoLayer::None) return out;
  for (std::size_t b = 0; b < depth; ++b) {
    for (auto& layer : block_linear_layers(b)) {
      const bool attn = layer.find(".attn.") != std::string::npos;
      if (variant == CoLayer::Blocks || (variant == CoLayer::Attention) == attn) {
        out.push_back(std::move(layer));
      }
    }
  }
  return out;
}

std::optional<std::size_t> GatedLayerSet::find(std::string_view layer) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] == layer) return i;
  }
  return std::nullopt;
}

std::vector<nn::Param*> GatedLayerSet::param_ptrs() {
  std::vector<nn::Param*> out;
  for (auto& g : gates) out.push_back(&g);
  for (auto& w : out_weights) out.push_back(&w);
  return out;
}

Var gated_linear(Var x, Var w_local, Var bias, Var gate, Var w_out) {
  if (w_out.shape() != w_local.shape()) {
    throw ContractError("gated layer: out weight " + nn::shape_str(w_out.shape()) +
                        " does not match local weight " + nn::shape_str(w_local.shape()));
  }
  Var local = nn::add(nn::matmul(x, w_local), bias);
  return nn::add(local, nn::scalar_mul(gate, nn::matmul(x, w_out)));
}

GatedEncoder attach_complementary(ModalEncoder local, const agg::NamedParamSet& out_blocks,
                                  CoLayer variant, bool out_trainable) {
  GatedLayerSet set;
  set.variant = variant;
  set.out_trainable = out_trainable;
  set.layers = complementary_layers(variant, local.config().blocks.depth);
  for (const auto& layer : set.layers) {
    const std::string path = layer + ".weight";
    const auto* out = out_blocks.find(path);
    if (out == nullptr) throw ContractError("complementary weights lack " + path);
    const auto& mine = local.param(path).value;
    if (out->value.shape() != mine.shape()) {
      throw ContractError("complementary weight " + path + " is " + nn::shape_str(out->value.shape()) +
                          ", local is " + nn::shape_str(mine.shape()));
    }
    set.gates.emplace_back(layer + ".gate", nn::PartTag::Gate, nn::Tensor::scalar(0.0));
    set.out_weights.emplace_back(path, out->tag, out->value);
    set.out_weights.back().trainable = out_trainable;
  }
  return GatedEncoder{std::move(local), std::move(set)};
}

ModalEncoder merge_gated_weights(const GatedEncoder& model) {
  ModalEncoder merged = model.local;
  const auto& set = model.gated;
  for (std::size_t i = 0; i < set.layers.size(); ++i) {
    const double g = set.gates[i].value.item();
    if (g == 0.0) continue;
    auto w = merged.param(set.layers[i] + ".weight").value.data();
    auto wo = set.out_weights[i].value.data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] += g * wo[k];
  }
  for (auto& p : merged.params()) p.zero_grad();
  return merged;
}

Var forward_classify(nn::Graph& g, GatedEncoder& m, const InputBatch& in) {
  return forward_classify(g, m.local, in, &m.gated);
}

}  // namespace fedsim::model
