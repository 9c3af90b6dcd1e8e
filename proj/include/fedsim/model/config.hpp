// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>

namespace fedsim::model {

enum class Modality { Vision, Text };
enum class HeadKind { Classify, Retrieval };

std::string_view to_string(Modality m);

/// Shape of the transformer blocks. Shared by every encoder so that block
/// parameters line up across modalities.
struct TransformerConfig {
  std::size_t dim = 16;
  std::size_t depth = 2;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 4;
  std::size_t max_seq = 16;

  void validate() const;
  std::size_t hidden() const { return dim * mlp_ratio; }

  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

struct EncoderConfig {
  Modality modality = Modality::Vision;
  /// Patch vector width (vision) or vocabulary size (text).
  std::size_t input_dim = 12;
  HeadKind head = HeadKind::Classify;
  /// Class count (classification) or projection width (retrieval).
  std::size_t out_dim = 8;
  TransformerConfig blocks;

  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

}  // namespace fedsim::model
