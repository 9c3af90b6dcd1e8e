// SPDX-License-Identifier: Apache-2.0
#include "fedsim/model/encoder.hpp"

#include <cmath>
#include <string>

#include "fedsim/common/error.hpp"
#include "fedsim/model/gated.hpp"

namespace fedsim::model {

using nn::PartTag;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

Tensor gaussian(Shape shape, double stddev, Rng rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i) + "."; }

}  // namespace

std::vector<std::string> block_linear_layers(std::size_t block) {
  const std::string p = block_prefix(block);
  return {p + "attn.q", p + "attn.k", p + "attn.v", p + "attn.o", p + "mlp.fc1", p + "mlp.fc2"};
}

ModalEncoder::ModalEncoder(EncoderConfig cfg, const Rng& block_rng, const Rng& own_rng)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.blocks.dim;
  const std::size_t hidden = cfg_.blocks.hidden();
  auto own = [&](const std::string& path) { return own_rng.split(path); };
  auto blk = [&](const std::string& path) { return block_rng.split(path); };
  auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

  if (cfg_.modality == Modality::Vision) {
    add("embed.patch.weight", PartTag::Embedding,
        gaussian({cfg_.input_dim, d}, inv_sqrt(cfg_.input_dim), own("embed.patch.weight")));
    add("embed.patch.bias", PartTag::Embedding, Tensor({d}));
  } else {
    add("embed.token", PartTag::Embedding,
        gaussian({cfg_.input_dim, d}, 1.0, own("embed.token")));
  }
  add("embed.pos", PartTag::Embedding, gaussian({cfg_.blocks.max_seq, d}, 0.1, own("embed.pos")));

  for (std::size_t b = 0; b < cfg_.blocks.depth; ++b) {
    const std::string p = block_prefix(b);
    auto norm = [&](const std::string& name) {
      add(p + name + ".gamma", PartTag::Norm, Tensor({d}, 1.0));
      add(p + name + ".beta", PartTag::Norm, Tensor({d}));
    };
    auto linear = [&](const std::string& name, PartTag tag, std::size_t in, std::size_t out) {
      const std::string w = p + name + ".weight";
      add(w, tag, gaussian({in, out}, inv_sqrt(in), blk(w)));
      add(p + name + ".bias", tag, Tensor({out}));
    };
    norm("norm1");
    for (const char* n : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
      linear(n, PartTag::Attention, d, d);
    }
    norm("norm2");
    linear("mlp.fc1", PartTag::Mlp, d, hidden);
    linear("mlp.fc2", PartTag::Mlp, hidden, d);
  }

  add("head.norm.gamma", PartTag::Head, Tensor({d}, 1.0));
  add("head.norm.beta", PartTag::Head, Tensor({d}));
  add("head.fc.weight", PartTag::Head, gaussian({d, cfg_.out_dim}, inv_sqrt(d), own("head.fc.weight")));
  add("head.fc.bias", PartTag::Head, Tensor({cfg_.out_dim}));
}

void ModalEncoder::add(std::string path, PartTag tag, Tensor init) {
  index_.emplace(path, params_.size());
  params_.emplace_back(std::move(path), tag, std::move(init));
}

nn::Param& ModalEncoder::param(std::string_view path) {
  auto it = index_.find(path);
  if (it == index_.end()) throw ContractError("encoder has no parameter '" + std::string(path) + "'");
  return params_[it->second];
}

const nn::Param& ModalEncoder::param(std::string_view path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw ContractError("encoder has no parameter '" + std::string(path) + "'");
  return params_[it->second];
}

std::vector<nn::Param*> ModalEncoder::param_ptrs() {
  std::vector<nn::Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t ModalEncoder::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

agg::NamedParamSet ModalEncoder::to_param_set(agg::Owner owner) const {
  agg::NamedParamSet s(owner);
  for (const auto& p : params_) s.add(p.path(), p.tag(), p.value);
  return s;
}

void ModalEncoder::load(const agg::NamedParamSet& set) {
  if (set.size() != params_.size()) {
    throw ContractError("encoder load: expected " + std::to_string(params_.size()) +
                        " tensors, got " + std::to_string(set.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& e = set.entries()[i];
    auto& p = params_[i];
    if (e.path != p.path() || e.tag != p.tag() || e.value.shape() != p.value.shape()) {
      throw ContractError("encoder load: mismatch at " + p.path() + " (got " + e.path + " " +
                          nn::shape_str(e.value.shape()) + ")");
    }
    p.value = e.value;
  }
}

namespace {

Var linear(nn::Graph& g, ModalEncoder& enc, GatedLayerSet* gated, const std::string& layer, Var x) {
  Var w = g.param(enc.param(layer + ".weight"));
  Var b = g.param(enc.param(layer + ".bias"));
  if (gated != nullptr) {
    if (auto i = gated->find(layer)) {
      return gated_linear(x, w, b, g.param(gated->gates[*i]), g.param(gated->out_weights[*i]));
    }
  }
  return nn::add(nn::matmul(x, w), b);
}

Var layer_norm(nn::Graph& g, ModalEncoder& enc, const std::string& prefix, Var x) {
  return nn::layer_norm(x, g.param(enc.param(prefix + ".gamma")), g.param(enc.param(prefix + ".beta")));
}

Var embed(nn::Graph& g, ModalEncoder& enc, const InputBatch& in) {
  const auto& cfg = enc.config();
  const std::size_t d = cfg.blocks.dim;
  if (in.modality != cfg.modality) {
    throw ContractError("encoder for " + std::string(to_string(cfg.modality)) + " fed a " +
                        std::string(to_string(in.modality)) + " batch");
  }
  if (in.seq > cfg.blocks.max_seq) {
    throw ContractError("sequence of " + std::to_string(in.seq) + " tokens exceeds max_seq " +
                        std::to_string(cfg.blocks.max_seq));
  }
  if (in.batch == 0 || in.seq == 0) throw ContractError("empty input batch");
  Var x;
  if (cfg.modality == Modality::Vision) {
    if (in.patch_dim != cfg.input_dim || in.patches.size() != in.batch * in.seq * in.patch_dim) {
      throw DimensionError("vision batch does not match patch_dim " + std::to_string(cfg.input_dim));
    }
    Var patches = g.constant(Tensor({in.batch, in.seq, in.patch_dim}, in.patches));
    x = nn::add(nn::matmul(patches, g.param(enc.param("embed.patch.weight"))),
                g.param(enc.param("embed.patch.bias")));
  } else {
    if (in.tokens.size() != in.batch * in.seq) {
      throw DimensionError("text batch holds " + std::to_string(in.tokens.size()) + " ids for " +
                           std::to_string(in.batch) + "x" + std::to_string(in.seq));
    }
    x = nn::reshape(nn::embedding(g.param(enc.param("embed.token")), in.tokens), {in.batch, in.seq, d});
  }
  Var pos = nn::slice(g.param(enc.param("embed.pos")), 0, 0, in.seq);
  return nn::add(x, pos);
}

Var attention(nn::Graph& g, ModalEncoder& enc, GatedLayerSet* gated, const std::string& p, Var h) {
  const std::size_t d = enc.config().blocks.dim;
  const std::size_t heads = enc.config().blocks.heads;
  const std::size_t dh = d / heads;
  Var q = linear(g, enc, gated, p + "attn.q", h);
  Var k = linear(g, enc, gated, p + "attn.k", h);
  Var v = linear(g, enc, gated, p + "attn.v", h);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    Var qh = nn::slice(q, 2, i * dh, dh);
    Var kh = nn::slice(k, 2, i * dh, dh);
    Var vh = nn::slice(v, 2, i * dh, dh);
    Var scores = nn::scale(nn::matmul(qh, nn::transpose(kh)), inv);
    outs.push_back(nn::matmul(nn::softmax(scores, 2), vh));
  }
  Var merged = heads == 1 ? outs[0] : nn::concat(outs, 2);
  return linear(g, enc, gated, p + "attn.o", merged);
}

}  // namespace

Var encode(nn::Graph& g, ModalEncoder& enc, const InputBatch& in, GatedLayerSet* gated) {
  Var x = embed(g, enc, in);
  for (std::size_t b = 0; b < enc.config().blocks.depth; ++b) {
    const std::string p = block_prefix(b);
    x = nn::add(x, attention(g, enc, gated, p, layer_norm(g, enc, p + "norm1", x)));
    Var h = layer_norm(g, enc, p + "norm2", x);
    h = linear(g, enc, gated, p + "mlp.fc2", nn::gelu(linear(g, enc, gated, p + "mlp.fc1", h)));
    x = nn::add(x, h);
  }
  return x;
}

Var forward_head(nn::Graph& g, ModalEncoder& enc, const InputBatch& in, GatedLayerSet* gated) {
  Var pooled = nn::mean(encode(g, enc, in, gated), 1);
  Var h = nn::layer_norm(pooled, g.param(enc.param("head.norm.gamma")),
                         g.param(enc.param("head.norm.beta")));
  return nn::add(nn::matmul(h, g.param(enc.param("head.fc.weight"))),
                 g.param(enc.param("head.fc.bias")));
}

Var forward_classify(nn::Graph& g, ModalEncoder& enc, const InputBatch& in, GatedLayerSet* gated) {
  if (enc.config().head != HeadKind::Classify) throw ContractError("encoder has no classification head");
  return forward_head(g, enc, in, gated);
}

Var forward_embed(nn::Graph& g, ModalEncoder& enc, const InputBatch& in, GatedLayerSet* gated) {
  if (enc.config().head != HeadKind::Retrieval) throw ContractError("encoder has no retrieval head");
  return nn::l2_normalize(forward_head(g, enc, in, gated));
}

std::pair<Var, Var> forward_retrieval(nn::Graph& g, MultiModalModel& m, const InputBatch& images,
                                      const InputBatch& texts) {
  if (images.batch != texts.batch) {
    throw ContractError("paired batch has " + std::to_string(images.batch) + " images and " +
                        std::to_string(texts.batch) + " texts");
  }
  return {forward_embed(g, m.vision, images), forward_embed(g, m.text, texts)};
}

Var contrastive_loss(Var image_embeds, Var text_embeds, double temperature) {
  const auto& si = image_embeds.shape();
  const auto& st = text_embeds.shape();
  if (si.size() != 2 || si != st) {
    throw DimensionError("contrastive_loss: embeddings " + nn::shape_str(si) + " and " +
                         nn::shape_str(st) + " must be equal 2-D shapes");
  }
  const std::size_t n = si[0];
  if (n < 2) throw ContractError("contrastive_loss needs at least 2 pairs for negatives");
  if (!(temperature > 0.0)) throw ContractError("contrastive_loss: temperature must be positive");
  std::vector<int> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = static_cast<int>(i);
  Var logits = nn::scale(nn::matmul(image_embeds, nn::transpose(text_embeds)), 1.0 / temperature);
  Var i2t = nn::cross_entropy(logits, diag);
  Var t2i = nn::cross_entropy(nn::transpose(logits), diag);
  return nn::scale(nn::add(i2t, t2i), 0.5);
}

}  // namespace fedsim::model
