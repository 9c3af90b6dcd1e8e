// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedsim/agg/param_set.hpp"
#include "fedsim/common/rng.hpp"
#include "fedsim/model/config.hpp"
#include "fedsim/model/input.hpp"
#include "fedsim/nn/graph.hpp"

namespace fedsim::model {

struct GatedLayerSet;

/// Embedding layers, pre-norm transformer blocks and a task head.
///
/// Parameter paths:
///   embed.patch.{weight,bias}, embed.token, embed.pos          Embedding
///   blocks.<i>.norm{1,2}.{gamma,beta}                          Norm
///   blocks.<i>.attn.{q,k,v,o}.{weight,bias}                    Attention
///   blocks.<i>.mlp.{fc1,fc2}.{weight,bias}                     Mlp
///   head.norm.{gamma,beta}, head.fc.{weight,bias}              Head
/// Linear weights are stored [in, out].
class ModalEncoder {
 public:
  /// Block parameters draw from `block_rng`, everything else from `own_rng`,
  /// both split by path, so encoders sharing a block stream start with
  /// identical blocks.
  ModalEncoder(EncoderConfig cfg, const Rng& block_rng, const Rng& own_rng);

  const EncoderConfig& config() const { return cfg_; }

  std::vector<nn::Param>& params() { return params_; }
  const std::vector<nn::Param>& params() const { return params_; }
  nn::Param& param(std::string_view path);
  const nn::Param& param(std::string_view path) const;
  bool has_param(std::string_view path) const { return index_.find(path) != index_.end(); }
  std::vector<nn::Param*> param_ptrs();
  std::size_t param_count() const;

  agg::NamedParamSet to_param_set(agg::Owner owner) const;
  /// Overwrites values from `set`; paths, tags and shapes must match exactly.
  void load(const agg::NamedParamSet& set);

 private:
  void add(std::string path, nn::PartTag tag, nn::Tensor init);

  EncoderConfig cfg_;
  std::vector<nn::Param> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Names of the linear layers inside block `i`, in parameter order.
std::vector<std::string> block_linear_layers(std::size_t block);

/// Token representations after the last block, [batch, seq, dim].
nn::Var encode(nn::Graph& g, ModalEncoder& enc, const InputBatch& in,
               GatedLayerSet* gated = nullptr);
/// Mean-pooled block output through the head: [batch, out_dim].
nn::Var forward_head(nn::Graph& g, ModalEncoder& enc, const InputBatch& in,
                     GatedLayerSet* gated = nullptr);
/// Classification logits [batch, num_classes].
nn::Var forward_classify(nn::Graph& g, ModalEncoder& enc, const InputBatch& in,
                         GatedLayerSet* gated = nullptr);
/// L2-normalized retrieval embeddings [batch, proj_dim].
nn::Var forward_embed(nn::Graph& g, ModalEncoder& enc, const InputBatch& in,
                      GatedLayerSet* gated = nullptr);

/// The image-text model: one encoder per modality with retrieval heads into
/// a shared space.
struct MultiModalModel {
  ModalEncoder vision;
  ModalEncoder text;
};

/// Image and text embeddings. Batch sizes must agree (paired training).
std::pair<nn::Var, nn::Var> forward_retrieval(nn::Graph& g, MultiModalModel& m,
                                              const InputBatch& images, const InputBatch& texts);

/// Symmetric InfoNCE over cosine-similarity logits with matching pairs on the
/// diagonal: mean of image->text and text->image cross-entropy.
nn::Var contrastive_loss(nn::Var image_embeds, nn::Var text_embeds, double temperature = 0.07);

}  // namespace fedsim::model
