// SPDX-License-Identifier: Apache-2.0
#include "fedsim/nn/param.hpp"

#include <array>
#include <utility>

#include "fedsim/common/error.hpp"

namespace fedsim::nn {
namespace {
constexpr std::array<std::pair<PartTag, std::string_view>, 6> kNames{{
    {PartTag::Embedding, "embedding"},
    {PartTag::Attention, "attention"},
    {PartTag::Mlp, "mlp"},
    {PartTag::Norm, "norm"},
    {PartTag::Head, "head"},
    {PartTag::Gate, "gate"},
}};
}  // namespace

std::string_view to_string(PartTag tag) {
  for (const auto& [t, name] : kNames) {
    if (t == tag) return name;
  }
  return "unknown";
}

PartTag part_tag_from_string(std::string_view name) {
  for (const auto& [t, n] : kNames) {
    if (n == name) return t;
  }
  throw ContractError("unknown part tag '" + std::string(name) + "'");
}

}  // namespace fedsim::nn
