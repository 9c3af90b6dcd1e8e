// SPDX-License-Identifier: Apache-2.0
#include "fedsim/model/grad_suite.hpp"

#include "fedsim/common/rng.hpp"
#include "fedsim/model/encoder.hpp"
#include "fedsim/model/gated.hpp"

namespace fedsim::model {

namespace {

constexpr std::size_t kPatchDim = 6;
constexpr std::size_t kVocab = 11;
constexpr std::size_t kClasses = 4;
constexpr std::size_t kBatch = 3;
constexpr std::size_t kSeq = 5;

void jitter(std::vector<nn::Param*> params, Rng rng, double scale) {
  for (nn::Param* p : params) {
    for (double& v : p->value.data()) v += scale * rng.normal();
  }
}

InputBatch vision_batch(Rng rng, std::size_t batch) {
  InputBatch b{Modality::Vision, batch, kSeq, kPatchDim, {}, {}};
  for (std::size_t i = 0; i < batch * kSeq * kPatchDim; ++i) b.patches.push_back(rng.normal());
  return b;
}

InputBatch text_batch(Rng rng, std::size_t batch) {
  InputBatch b{Modality::Text, batch, kSeq, 0, {}, {}};
  for (std::size_t i = 0; i < batch * kSeq; ++i) b.tokens.push_back(static_cast<int>(rng.below(kVocab)));
  return b;
}

EncoderConfig enc_cfg(const TransformerConfig& blocks, Modality m, HeadKind head) {
  EncoderConfig c;
  c.modality = m;
  c.input_dim = m == Modality::Vision ? kPatchDim : kVocab;
  c.head = head;
  c.out_dim = head == HeadKind::Classify ? kClasses : 6;
  c.blocks = blocks;
  return c;
}

}  // namespace

std::vector<GradSuiteCase> transformer_grad_suite(const TransformerConfig& blocks, std::uint64_t seed,
                                                  const nn::GradCheckOptions& opts) {
  const Rng root(seed, "grad_suite");
  const Rng block_rng = root.split("blocks");
  const std::vector<int> labels{0, 3, 1};
  std::vector<GradSuiteCase> out;

  for (Modality m : {Modality::Vision, Modality::Text}) {
    ModalEncoder enc(enc_cfg(blocks, m, HeadKind::Classify), block_rng, root.split(to_string(m)));
    jitter(enc.param_ptrs(), root.split("jitter").split(to_string(m)), 0.1);
    const InputBatch in = m == Modality::Vision ? vision_batch(root.split("vin"), kBatch) : text_batch(root.split("tin"), kBatch);
    auto loss = [&](nn::Graph& g) { return nn::cross_entropy(forward_classify(g, enc, in), labels); };
    out.push_back({"classify_" + std::string(to_string(m)), nn::grad_check(loss, enc.param_ptrs(), opts)});
  }

  {
    MultiModalModel mm{ModalEncoder(enc_cfg(blocks, Modality::Vision, HeadKind::Retrieval), block_rng, root.split("mv")),
                       ModalEncoder(enc_cfg(blocks, Modality::Text, HeadKind::Retrieval), block_rng, root.split("mt"))};
    std::vector<nn::Param*> params = mm.vision.param_ptrs();
    for (nn::Param* p : mm.text.param_ptrs()) params.push_back(p);
    jitter(params, root.split("jitter").split("pair"), 0.1);
    const InputBatch vi = vision_batch(root.split("pv"), 4);
    const InputBatch ti = text_batch(root.split("pt"), 4);
    auto loss = [&](nn::Graph& g) {
      auto [a, b] = forward_retrieval(g, mm, vi, ti);
      return contrastive_loss(a, b, 0.5);
    };
    out.push_back({"contrastive", nn::grad_check(loss, params, opts)});
  }

  for (bool zero_gates : {false, true}) {
    ModalEncoder local(enc_cfg(blocks, Modality::Vision, HeadKind::Classify), block_rng, root.split("gl"));
    ModalEncoder other(enc_cfg(blocks, Modality::Text, HeadKind::Classify), root.split("other_blocks"), root.split("go"));
    GatedEncoder ge = attach_complementary(std::move(local), other.to_param_set(agg::Owner::L), CoLayer::Blocks, true);
    jitter(ge.local.param_ptrs(), root.split("jitter").split("gated"), 0.1);
    if (!zero_gates) jitter(ge.gated.param_ptrs(), root.split("jitter").split("gates"), 0.5);
    std::vector<nn::Param*> params = ge.local.param_ptrs();
    for (nn::Param* p : ge.gated.param_ptrs()) params.push_back(p);
    const InputBatch in = vision_batch(root.split("gin"), kBatch);
    auto loss = [&](nn::Graph& g) { return nn::cross_entropy(forward_classify(g, ge, in), labels); };
    out.push_back({zero_gates ? "gated_zero_gates" : "gated", nn::grad_check(loss, params, opts)});
  }
  return out;
}

}  // namespace fedsim::model
