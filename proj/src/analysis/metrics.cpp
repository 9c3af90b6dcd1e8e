// SPDX-License-Identifier: Apache-2.0
#include "fedsim/analysis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <bit>
#include <map>

#include "fedsim/common/error.hpp"
#include "fedsim/common/rng.hpp"

namespace fedsim::analysis {

namespace {

void check_embeds(const nn::Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " must be 2-D, got " + nn::shape_str(t.shape()));
}

double dot_rows(const nn::Tensor& a, std::size_t i, const nn::Tensor& b, std::size_t j) {
  const std::size_t d = a.dim(1);
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += a.at(i, k) * b.at(j, k);
  return s;
}

// True candidate is ranked ahead of everything strictly better or tied with a
// lower index.
bool hit(std::span<const double> scores, std::size_t truth, std::size_t k) {
  std::size_t ahead = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > scores[truth] || (scores[j] == scores[truth] && j < truth)) ++ahead;
  }
  return ahead < k;
}

}  // namespace

Recall recall_at_k(const nn::Tensor& img, const nn::Tensor& txt, std::span<const std::size_t> pairing,
                   std::size_t k) {
  check_embeds(img, "image embeddings");
  check_embeds(txt, "text embeddings");
  const std::size_t n = img.dim(0);
  if (txt.dim(0) != n || txt.dim(1) != img.dim(1) || pairing.size() != n) {
    throw DimensionError("recall_at_k: " + nn::shape_str(img.shape()) + " vs " + nn::shape_str(txt.shape()) +
                         " with " + std::to_string(pairing.size()) + " pairs");
  }
  if (k < 1 || k > n) throw ContractError("recall_at_k: k must lie in [1, " + std::to_string(n) + "]");
  std::vector<std::size_t> inverse(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (pairing[i] >= n || inverse[pairing[i]] != n) throw ContractError("recall_at_k: pairing is not a bijection");
    inverse[pairing[i]] = i;
  }
  // Cosine: normalize once, then dot products.
  auto normalized = [](const nn::Tensor& t) {
    nn::Tensor out = t;
    for (std::size_t r = 0; r < t.dim(0); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < t.dim(1); ++c) s += t.at(r, c) * t.at(r, c);
      const double inv = s > 0.0 ? 1.0 / std::sqrt(s) : 0.0;
      for (std::size_t c = 0; c < t.dim(1); ++c) out.at(r, c) *= inv;
    }
    return out;
  };
  const nn::Tensor a = normalized(img);
  const nn::Tensor b = normalized(txt);
  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) sim[i * n + j] = dot_rows(a, i, b, j);
  }
  std::size_t i2t = 0;
  std::size_t t2i = 0;
  std::vector<double> col(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (hit(std::span<const double>(sim).subspan(i * n, n), pairing[i], k)) ++i2t;
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = sim[i * n + j];
    if (hit(col, inverse[j], k)) ++t2i;
  }
  return {static_cast<double>(i2t) / static_cast<double>(n), static_cast<double>(t2i) / static_cast<double>(n)};
}

double top1_accuracy(const nn::Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("top1_accuracy: logits " + nn::shape_str(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  const std::size_t c = logits.dim(1);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (logits.at(r, j) > logits.at(r, best)) best = j;
    }
    if (static_cast<int>(best) == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double classify_accuracy(model::ModalEncoder& enc, const data::LabeledSet& test) {
  if (test.num_classes != enc.config().out_dim) {
    throw ContractError("classify_accuracy: test set has " + std::to_string(test.num_classes) +
                        " classes, head has " + std::to_string(enc.config().out_dim));
  }
  nn::Graph g;
  nn::Var logits = model::forward_classify(g, enc, test.all());
  return top1_accuracy(logits.value(), test.labels);
}

std::vector<double> shapley(std::span<const std::string> players, std::span<const CoalitionValue> values) {
  const std::size_t p = players.size();
  if (p > 20) throw ContractError("shapley: too many players for exhaustive enumeration");
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < p; ++i) {
    if (!index.emplace(players[i], i).second) throw ContractError("shapley: duplicate player '" + players[i] + "'");
  }
  const std::size_t subsets = std::size_t{1} << p;
  std::vector<double> v(subsets);
  std::vector<bool> seen(subsets, false);
  for (const auto& cv : values) {
    std::size_t mask = 0;
    for (const auto& name : cv.coalition) {
      auto it = index.find(name);
      if (it == index.end()) throw ContractError("shapley: unknown player '" + name + "'");
      const std::size_t bit = std::size_t{1} << it->second;
      if (mask & bit) throw ContractError("shapley: player '" + name + "' repeated within a coalition");
      mask |= bit;
    }
    if (seen[mask]) throw ContractError("shapley: coalition listed twice");
    seen[mask] = true;
    v[mask] = cv.value;
  }
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    if (seen[mask]) continue;
    std::string names;
    for (std::size_t i = 0; i < p; ++i) {
      if (mask & (std::size_t{1} << i)) names += (names.empty() ? "" : ",") + players[i];
    }
    throw ContractError("shapley: missing coalition {" + names + "}");
  }
  // weight[s] = s! (p-s-1)! / p!
  std::vector<double> weight(p);
  for (std::size_t s = 0; s < p; ++s) {
    weight[s] = std::exp(std::lgamma(static_cast<double>(s) + 1) + std::lgamma(static_cast<double>(p - s)) -
                         std::lgamma(static_cast<double>(p) + 1));
  }
  std::vector<double> phi(p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    for (std::size_t mask = 0; mask < subsets; ++mask) {
      if (mask & bit) continue;
      phi[i] += weight[static_cast<std::size_t>(std::popcount(mask))] * (v[mask | bit] - v[mask]);
    }
  }
  return phi;
}

double domain_gap(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("domain_gap: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

CommCost comm_cost(const model::EncoderConfig& own, model::CoLayer variant) {
  const model::ModalEncoder enc(own, Rng(0, "shape_only"), Rng(0, "shape_only"));
  const std::size_t base = enc.param_count();
  std::size_t extra = 0;
  for (const auto& layer : model::complementary_layers(variant, own.blocks.depth)) {
    extra += enc.param(layer + ".weight").value.numel();
  }
  constexpr std::size_t kBytes = sizeof(double);
  return {(base + extra) * kBytes, base * kBytes};
}

}  // namespace fedsim::analysis
