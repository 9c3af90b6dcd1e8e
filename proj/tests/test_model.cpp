// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "fedsim/common/error.hpp"
#include "fedsim/model/encoder.hpp"
#include "fedsim/model/gated.hpp"
#include "fedsim/model/grad_suite.hpp"
#include "fedsim/nn/adamw.hpp"
#include "oracles.hpp"

using namespace fedsim;
using namespace fedsim::model;
using nn::Graph;
using nn::Tensor;

namespace {

TransformerConfig tiny_blocks() {
  TransformerConfig t;
  t.dim = 8;
  t.depth = 2;
  t.heads = 2;
  t.mlp_ratio = 2;
  t.max_seq = 6;
  return t;
}

EncoderConfig vision_cfg(HeadKind head = HeadKind::Classify, std::size_t out = 4) {
  return EncoderConfig{Modality::Vision, 5, head, out, tiny_blocks()};
}

EncoderConfig text_cfg(HeadKind head = HeadKind::Classify, std::size_t out = 4) {
  return EncoderConfig{Modality::Text, 9, head, out, tiny_blocks()};
}

ModalEncoder make(const EncoderConfig& cfg, std::uint64_t seed = 1) {
  return ModalEncoder(cfg, Rng(seed, "blocks"), Rng(seed, std::string(to_string(cfg.modality))));
}

InputBatch vision_batch(oracle::Gen& gen, std::size_t batch, std::size_t seq = 4) {
  InputBatch in{Modality::Vision, batch, seq, 5, {}, {}};
  for (std::size_t i = 0; i < batch * seq * 5; ++i) in.patches.push_back(gen.normal());
  return in;
}

InputBatch text_batch(oracle::Gen& gen, std::size_t batch, std::size_t seq = 4) {
  InputBatch in{Modality::Text, batch, seq, 0, {}, {}};
  for (std::size_t i = 0; i < batch * seq; ++i) in.tokens.push_back(static_cast<int>(gen.index(9)));
  return in;
}

Tensor logits_of(ModalEncoder& enc, const InputBatch& in) {
  Graph g;
  return forward_classify(g, enc, in).value();
}

Tensor logits_of(GatedEncoder& enc, const InputBatch& in) {
  Graph g;
  return forward_classify(g, enc, in).value();
}

double max_abs(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

agg::NamedParamSet block_set(const ModalEncoder& enc) {
  return enc.to_param_set(agg::Owner::L).filtered(
      [](const agg::ParamEntry& e) { return nn::is_block_tag(e.tag); });
}

void randomize(ModalEncoder& enc, oracle::Gen& gen, double scale = 0.3) {
  for (auto& p : enc.params()) {
    for (double& v : p.value.data()) v += scale * gen.normal();
  }
}

}  // namespace

TEST_CASE("config validation") {
  TransformerConfig t = tiny_blocks();
  CHECK_NOTHROW(t.validate());
  t.heads = 3;
  CHECK_THROWS_AS(t.validate(), ContractError);
  t = tiny_blocks();
  t.depth = 0;
  CHECK_THROWS_AS(t.validate(), ContractError);
  t = tiny_blocks();
  t.max_seq = 0;
  CHECK_THROWS_AS(t.validate(), ContractError);
}

TEST_CASE("zero weights except head bias give the bias as logits") {
  ModalEncoder enc = make(vision_cfg());
  for (auto& p : enc.params()) p.value.fill(0.0);
  enc.param("head.fc.bias").value = Tensor({4}, {0.5, -1.0, 2.0, 0.25});
  oracle::Gen gen(1);
  const Tensor logits = logits_of(enc, vision_batch(gen, 3));
  REQUIRE(logits.shape() == nn::Shape{3, 4});
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(logits.at(r, 0) == 0.5);
    CHECK(logits.at(r, 1) == -1.0);
    CHECK(logits.at(r, 2) == 2.0);
    CHECK(logits.at(r, 3) == 0.25);
  }
}

TEST_CASE("classify shape, finiteness and determinism") {
  oracle::Gen gen(2);
  const InputBatch vb = vision_batch(gen, 2);
  const InputBatch tb = text_batch(gen, 2);
  ModalEncoder v1 = make(vision_cfg());
  ModalEncoder v2 = make(vision_cfg());
  const Tensor a = logits_of(v1, vb);
  CHECK(a.shape() == nn::Shape{2, 4});
  CHECK(a.all_finite());
  CHECK(a == logits_of(v2, vb));
  CHECK(a == logits_of(v1, vb));

  ModalEncoder t1 = make(text_cfg());
  const Tensor b = logits_of(t1, tb);
  CHECK(b.shape() == nn::Shape{2, 4});
  CHECK(b.all_finite());
}

TEST_CASE("input contract errors") {
  oracle::Gen gen(3);
  ModalEncoder v = make(vision_cfg());
  Graph g;
  CHECK_THROWS_AS(forward_classify(g, v, vision_batch(gen, 2, 7)), ContractError);
  CHECK_THROWS_AS(forward_classify(g, v, text_batch(gen, 2)), ContractError);
  InputBatch bad = vision_batch(gen, 2);
  bad.patches.pop_back();
  CHECK_THROWS_AS(forward_classify(g, v, bad), ContractError);
  ModalEncoder t = make(text_cfg());
  InputBatch oov = text_batch(gen, 1);
  oov.tokens[0] = 9;
  CHECK_THROWS(forward_classify(g, t, oov));
}

TEST_CASE("part tags follow the parameter role") {
  ModalEncoder v = make(vision_cfg());
  for (const auto& p : v.params()) {
    const std::string& path = p.path();
    if (path.find(".attn.") != std::string::npos) {
      CHECK(p.tag() == nn::PartTag::Attention);
    } else if (path.find(".mlp.") != std::string::npos) {
      CHECK(p.tag() == nn::PartTag::Mlp);
    } else if (path.rfind("blocks.", 0) == 0) {
      CHECK(p.tag() == nn::PartTag::Norm);
    } else if (path.rfind("embed.", 0) == 0) {
      CHECK(p.tag() == nn::PartTag::Embedding);
    } else {
      CHECK(p.tag() == nn::PartTag::Head);
    }
  }
}

TEST_CASE("vision and text blocks are shape-identical") {
  const ModalEncoder v = make(vision_cfg(HeadKind::Retrieval, 6));
  const ModalEncoder t = make(text_cfg());
  std::string why;
  CHECK_MESSAGE(block_set(v).same_layout(block_set(t), &why), why);
  // Shared block stream: identical starting blocks.
  CHECK(max_abs_diff(block_set(v), block_set(t)) == 0.0);
}

TEST_CASE("retrieval embeddings") {
  oracle::Gen gen(4);
  MultiModalModel m{make(vision_cfg(HeadKind::Retrieval, 6)), make(text_cfg(HeadKind::Retrieval, 6))};
  SUBCASE("rows are unit norm") {
    Graph g;
    auto [img, txt] = forward_retrieval(g, m, vision_batch(gen, 5), text_batch(gen, 5));
    for (const Tensor* e : {&img.value(), &txt.value()}) {
      REQUIRE(e->shape() == nn::Shape{5, 6});
      for (std::size_t r = 0; r < 5; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 6; ++c) s += e->at(r, c) * e->at(r, c);
        CHECK(std::abs(std::sqrt(s) - 1.0) <= 1e-10);
      }
    }
  }
  SUBCASE("duplicated pairs give identical rows") {
    InputBatch vb = vision_batch(gen, 1);
    InputBatch tb = text_batch(gen, 1);
    InputBatch vb2 = vb, tb2 = tb;
    vb2.batch = tb2.batch = 2;
    vb2.patches.insert(vb2.patches.end(), vb.patches.begin(), vb.patches.end());
    tb2.tokens.insert(tb2.tokens.end(), tb.tokens.begin(), tb.tokens.end());
    Graph g;
    auto [img, txt] = forward_retrieval(g, m, vb2, tb2);
    for (std::size_t c = 0; c < 6; ++c) {
      CHECK(img.value().at(0, c) == img.value().at(1, c));
      CHECK(txt.value().at(0, c) == txt.value().at(1, c));
    }
  }
  SUBCASE("mismatched pair counts are rejected") {
    Graph g;
    CHECK_THROWS_AS(forward_retrieval(g, m, vision_batch(gen, 3), text_batch(gen, 2)), ContractError);
  }
}

namespace {

long double contrastive_oracle(const Tensor& a, const Tensor& b, double temp) {
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<std::vector<double>> s(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += static_cast<long double>(a.at(i, k)) * b.at(j, k);
      s[i][j] = static_cast<double>(dot / temp);
    }
  }
  long double i2t = 0, t2i = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> col(n);
    for (std::size_t j = 0; j < n; ++j) col[j] = s[j][i];
    i2t += oracle::row_xent(s[i], i);
    t2i += oracle::row_xent(col, i);
  }
  return (i2t + t2i) / (2.0L * n);
}

Tensor unit_rows(oracle::Gen& gen, std::size_t n, std::size_t d) {
  Tensor t = gen.tensor({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += t.at(r, c) * t.at(r, c);
    for (std::size_t c = 0; c < d; ++c) t.at(r, c) /= std::sqrt(s);
  }
  return t;
}

}  // namespace

TEST_CASE("contrastive loss") {
  oracle::Gen gen(5);
  Graph g;
  SUBCASE("identical embeddings give ln n") {
    for (std::size_t n : {2u, 3u, 7u}) {
      Tensor e({n, 3});
      for (std::size_t r = 0; r < n; ++r) e.at(r, 0) = 1.0;
      const double loss = contrastive_loss(g.constant(e), g.constant(e), 0.07).value().item();
      CHECK(std::abs(loss - std::log(static_cast<double>(n))) <= 1e-12);
    }
  }
  SUBCASE("dominant diagonal drives the loss to zero") {
    Tensor e({4, 4});
    for (std::size_t r = 0; r < 4; ++r) e.at(r, r) = 1.0;
    const double loss = contrastive_loss(g.constant(e), g.constant(e), 0.001).value().item();
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-100);
  }
  SUBCASE("random normalized pair matches the direct formula") {
    const Tensor a = unit_rows(gen, 4, 8);
    const Tensor b = unit_rows(gen, 4, 8);
    const double got = contrastive_loss(g.constant(a), g.constant(b), 0.07).value().item();
    CHECK(std::abs(got - static_cast<double>(contrastive_oracle(a, b, 0.07))) <= 1e-10);
    CHECK(got >= 0.0);
  }
  SUBCASE("fewer than two rows is an error") {
    const Tensor a = unit_rows(gen, 1, 4);
    CHECK_THROWS_AS(contrastive_loss(g.constant(a), g.constant(a), 0.07), ContractError);
    const Tensor b = unit_rows(gen, 3, 4);
    const Tensor c = unit_rows(gen, 2, 4);
    CHECK_THROWS_AS(contrastive_loss(g.constant(b), g.constant(c), 0.07), ContractError);
  }
}

TEST_CASE("trained toy retrieval model ranks matching pairs first more often than chance") {
  oracle::Gen gen(6);
  MultiModalModel m{make(vision_cfg(HeadKind::Retrieval, 6)), make(text_cfg(HeadKind::Retrieval, 6))};
  // Pairs: vision patches encode the class on coordinate c, text tokens repeat c.
  constexpr std::size_t n = 8;
  InputBatch vb{Modality::Vision, n, 4, 5, {}, {}};
  InputBatch tb{Modality::Text, n, 4, 0, {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t c = 0; c < 5; ++c) vb.patches.push_back((c == i % 5 ? 2.0 : 0.0) + (i >= 5 ? 1.0 : 0.0) * (c == s ? 1.0 : 0.0));
      tb.tokens.push_back(static_cast<int>(i));
    }
  }
  std::vector<nn::Param*> ps = m.vision.param_ptrs();
  for (auto* p : m.text.param_ptrs()) ps.push_back(p);
  nn::AdamWState st = nn::adamw_init(ps, {0.01, 0.9, 0.999, 1e-8, 0.0});
  for (int step = 0; step < 200; ++step) {
    for (auto* p : ps) p->zero_grad();
    Graph g;
    auto [img, txt] = forward_retrieval(g, m, vb, tb);
    g.backward(contrastive_loss(img, txt, 0.1));
    nn::adamw_step(ps, st);
  }
  Graph g;
  auto [img, txt] = forward_retrieval(g, m, vb, tb);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_sim = -2;
    for (std::size_t j = 0; j < n; ++j) {
      double sim = 0;
      for (std::size_t k = 0; k < 6; ++k) sim += img.value().at(i, k) * txt.value().at(j, k);
      if (sim > best_sim) best_sim = sim, best = j;
    }
    hits += best == i;
  }
  CHECK(hits > 1);  // chance is 1 of 8
  CHECK(hits >= 6);
}

TEST_CASE("gated_linear") {
  oracle::Gen gen(7);
  Graph g;
  const Tensor x = gen.tensor({3, 4});
  const Tensor w = gen.tensor({4, 5});
  const Tensor b = gen.tensor({5});
  const Tensor wo = gen.tensor({4, 5});
  SUBCASE("zero gate equals the ungated layer exactly") {
    const Tensor gated = gated_linear(g.constant(x), g.constant(w), g.constant(b),
                                      g.constant(Tensor::scalar(0.0)), g.constant(wo)).value();
    const Tensor plain = nn::add(nn::matmul(g.constant(x), g.constant(w)), g.constant(b)).value();
    CHECK(gated == plain);
  }
  SUBCASE("unit gate with zero local weight and bias gives x W_out") {
    const Tensor got = gated_linear(g.constant(x), g.constant(Tensor({4, 5})), g.constant(Tensor({5})),
                                    g.constant(Tensor::scalar(1.0)), g.constant(wo)).value();
    const auto ref = oracle::matmul(oracle::to_mat(x), oracle::to_mat(wo));
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(got.at(i, j) - ref[i][j]) <= 1e-12);
    }
  }
  SUBCASE("random gate matches two matmuls summed") {
    const double gate = gen.normal();
    const Tensor got = gated_linear(g.constant(x), g.constant(w), g.constant(b),
                                    g.constant(Tensor::scalar(gate)), g.constant(wo)).value();
    const auto xw = oracle::matmul(oracle::to_mat(x), oracle::to_mat(w));
    const auto xo = oracle::matmul(oracle::to_mat(x), oracle::to_mat(wo));
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        CHECK(std::abs(got.at(i, j) - (xw[i][j] + b[j] + gate * xo[i][j])) <= 1e-12);
      }
    }
  }
  SUBCASE("shape mismatch is a contract error") {
    CHECK_THROWS_AS(gated_linear(g.constant(x), g.constant(w), g.constant(b),
                                 g.constant(Tensor::scalar(0.0)), g.constant(Tensor({5, 4}))),
                    ContractError);
  }
}

TEST_CASE("attach_complementary wraps exactly the chosen layers") {
  const ModalEncoder v = make(vision_cfg());
  const ModalEncoder t = make(text_cfg(), 9);
  const auto out = block_set(t);
  const std::size_t depth = tiny_blocks().depth;

  CHECK(attach_complementary(v, out, CoLayer::Blocks, true).gated.gates.size() == depth * 6);
  CHECK(attach_complementary(v, out, CoLayer::Attention, true).gated.gates.size() == depth * 4);
  CHECK(attach_complementary(v, out, CoLayer::Mlp, true).gated.gates.size() == depth * 2);
  CHECK(attach_complementary(v, out, CoLayer::None, true).gated.gates.empty());

  const GatedEncoder ge = attach_complementary(v, out, CoLayer::Blocks, false);
  for (std::size_t i = 0; i < ge.gated.layers.size(); ++i) {
    CHECK(ge.gated.gates[i].value.item() == 0.0);
    CHECK(ge.gated.out_weights[i].path() == ge.gated.layers[i] + ".weight");
    CHECK(ge.gated.out_weights[i].value == out.at(ge.gated.layers[i] + ".weight").value);
    CHECK_FALSE(ge.gated.out_weights[i].trainable);
  }
  const auto attn = complementary_layers(CoLayer::Attention, 1);
  CHECK(attn == std::vector<std::string>{"blocks.0.attn.q", "blocks.0.attn.k", "blocks.0.attn.v", "blocks.0.attn.o"});
  CHECK(complementary_layers(CoLayer::Mlp, 1) == std::vector<std::string>{"blocks.0.mlp.fc1", "blocks.0.mlp.fc2"});

  SUBCASE("missing or mismatched out weights name the path") {
    agg::NamedParamSet partial = out.filtered([](const agg::ParamEntry& e) { return e.path != "blocks.1.mlp.fc2.weight"; });
    try {
      attach_complementary(v, partial, CoLayer::Blocks, true);
      FAIL("expected error");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("blocks.1.mlp.fc2.weight") != std::string::npos);
    }
    EncoderConfig wide = text_cfg();
    wide.blocks.dim = 10;
    const auto wrong = block_set(make(wide));
    CHECK_THROWS_AS(attach_complementary(v, wrong, CoLayer::Attention, true), ContractError);
  }
}

TEST_CASE("gate-zero identity and variant None identity") {
  oracle::Gen gen(8);
  ModalEncoder v = make(vision_cfg());
  randomize(v, gen);
  const auto out = block_set(make(text_cfg(), 4));
  for (int trial = 0; trial < 5; ++trial) {
    const InputBatch in = vision_batch(gen, 3);
    const Tensor base = logits_of(v, in);
    for (CoLayer variant : {CoLayer::None, CoLayer::Attention, CoLayer::Mlp, CoLayer::Blocks}) {
      GatedEncoder ge = attach_complementary(v, out, variant, true);
      CHECK(logits_of(ge, in) == base);
    }
  }
}

TEST_CASE("merge exactness and upload layout") {
  oracle::Gen gen(9);
  ModalEncoder v = make(vision_cfg());
  randomize(v, gen);
  ModalEncoder t = make(text_cfg(), 2);
  randomize(t, gen);
  GatedEncoder ge = attach_complementary(v, block_set(t), CoLayer::Blocks, true);

  SUBCASE("zero gates merge to the local weights bit for bit") {
    const ModalEncoder merged = merge_gated_weights(ge);
    CHECK(merged.to_param_set(agg::Owner::V) == v.to_param_set(agg::Owner::V));
  }
  SUBCASE("random gates: merged forward matches gated forward") {
    for (auto& gate : ge.gated.gates) gate.value = Tensor::scalar(gen.normal());
    ModalEncoder merged = merge_gated_weights(ge);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const InputBatch in = vision_batch(gen, 2);
      worst = std::max(worst, max_abs(logits_of(merged, in), logits_of(ge, in)));
    }
    CHECK(worst <= 1e-12);
    CHECK(merged.param_count() == v.param_count());
    std::string why;
    CHECK_MESSAGE(merged.to_param_set(agg::Owner::V).same_layout(v.to_param_set(agg::Owner::V), &why), why);
    for (const auto& p : merged.params()) {
      CHECK(p.tag() != nn::PartTag::Gate);
      if (p.path().find(".bias") != std::string::npos) CHECK(p.value == v.param(p.path()).value);
    }
  }
}

TEST_CASE("frozen out weights stay bit-identical through training") {
  oracle::Gen gen(10);
  ModalEncoder v = make(vision_cfg());
  GatedEncoder ge = attach_complementary(v, block_set(make(text_cfg(), 3)), CoLayer::Blocks, false);
  std::vector<Tensor> before;
  for (const auto& w : ge.gated.out_weights) before.push_back(w.value);
  std::vector<nn::Param*> ps = ge.local.param_ptrs();
  for (auto* p : ge.gated.param_ptrs()) ps.push_back(p);
  nn::AdamWState st = nn::adamw_init(ps, {0.01, 0.9, 0.999, 1e-8, 0.01});
  const std::vector<int> labels{0, 1, 2};
  for (int step = 0; step < 5; ++step) {
    for (auto* p : ps) p->zero_grad();
    Graph g;
    g.backward(nn::cross_entropy(forward_classify(g, ge, vision_batch(gen, 3)), labels));
    nn::adamw_step(ps, st);
  }
  bool gate_moved = false;
  for (const auto& gate : ge.gated.gates) gate_moved |= gate.value.item() != 0.0;
  CHECK(gate_moved);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(ge.gated.out_weights[i].value == before[i]);
}

TEST_CASE("load enforces identical layout") {
  ModalEncoder a = make(vision_cfg(), 1);
  ModalEncoder b = make(vision_cfg(), 2);
  b.load(a.to_param_set(agg::Owner::V));
  CHECK(b.to_param_set(agg::Owner::V) == a.to_param_set(agg::Owner::V));
  auto text = make(text_cfg()).to_param_set(agg::Owner::L);
  CHECK_THROWS_AS(b.load(text), ContractError);
}

TEST_CASE("whole-encoder gradient suite passes") {
  nn::GradCheckOptions opts;
  opts.coords_per_param = 4;
  for (const auto& c : transformer_grad_suite(tiny_blocks(), 11, opts)) {
    INFO(c.name, " max rel error ", c.report.max_rel_error);
    CHECK(c.report.passed);
    CHECK(c.report.checked > 0);
  }
}
