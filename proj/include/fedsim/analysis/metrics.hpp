// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedsim/data/synthetic.hpp"
#include "fedsim/model/encoder.hpp"
#include "fedsim/model/gated.hpp"
#include "fedsim/nn/tensor.hpp"

namespace fedsim::analysis {

struct Recall {
  double i2t = 0.0;
  double t2i = 0.0;
};

/// Top-k retrieval by cosine similarity of [n, d] embedding rows. Image i's
/// true text is row pairing[i]. Equal scores rank the lower index first.
Recall recall_at_k(const nn::Tensor& image_embeds, const nn::Tensor& text_embeds,
                   std::span<const std::size_t> pairing, std::size_t k);

/// Fraction of rows whose argmax logit (first index on ties) is the label.
double top1_accuracy(const nn::Tensor& logits, std::span<const int> labels);
double classify_accuracy(model::ModalEncoder& enc, const data::LabeledSet& test);

struct CoalitionValue {
  std::vector<std::string> coalition;
  double value = 0.0;
};

/// Exact Shapley values by enumerating all coalitions. `values` must hold
/// each subset of `players` exactly once (member order is irrelevant).
std::vector<double> shapley(std::span<const std::string> players, std::span<const CoalitionValue> values);

/// Euclidean distance between two embedding vectors.
double domain_gap(std::span<const double> a, std::span<const double> b);

struct CommCost {
  std::size_t download_bytes = 0;
  std::size_t upload_bytes = 0;
};

/// Per-round traffic of one uni-modal client holding a model shaped by `own`.
/// Downloads add the complementary weight matrices selected by `variant`;
/// uploads are always the plain model.
CommCost comm_cost(const model::EncoderConfig& own, model::CoLayer variant);

struct MetricsRecord {
  std::size_t round = 0;
  double i2t_r1 = 0.0;  // x100
  double t2i_r1 = 0.0;  // x100
  double r1_sum = 0.0;
  double acc_v = 0.0;  // x100
  double acc_l = 0.0;  // x100
  double loss_v = 0.0;
  double loss_l = 0.0;
  double loss_vl = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

}  // namespace fedsim::analysis
