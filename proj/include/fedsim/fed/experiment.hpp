// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedsim/agg/aggregate.hpp"
#include "fedsim/data/synthetic.hpp"
#include "fedsim/model/config.hpp"
#include "fedsim/model/gated.hpp"

namespace fedsim::fed {

enum class AggregatorKind { FedAvg, FedProx, FedIoT, FedCola };

std::string_view to_string(AggregatorKind k);
AggregatorKind aggregator_kind_from_string(std::string_view name);

/// Clients per kind: vision-only, text-only, paired image-text.
struct ClientCounts {
  std::size_t vision = 3;
  std::size_t text = 3;
  std::size_t multimodal = 2;

  friend bool operator==(const ClientCounts&, const ClientCounts&) = default;
};

/// Fraction of each kind's clients trained per round.
struct SampleRates {
  double vision = 0.5;
  double text = 0.5;
  double multimodal = 0.5;

  friend bool operator==(const SampleRates&, const SampleRates&) = default;
};

struct ModelConfig {
  model::TransformerConfig blocks;
  /// Width of the shared retrieval space.
  std::size_t proj_dim = 8;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DatasetSplit {
  std::size_t per_class_train = 30;
  std::size_t per_class_test = 10;
  double shift = 0.0;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

struct DataConfig {
  data::LatentSpace space;
  double noise = 0.3;
  /// Dirichlet concentration for labeled uni-modal data.
  double alpha = 0.5;
  /// Dirichlet concentration of client sizes for paired data.
  double size_skew = 5.0;
  DatasetSplit vision{30, 10, 0.3};
  DatasetSplit text{30, 10, 0.3};
  DatasetSplit paired{20, 10, 0.0};

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct TrainerConfig {
  std::size_t local_epochs = 2;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double lr_epoch_decay = 0.99;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Proximal coefficient; 0 trains plain local SGD.
  double prox_mu = 0.0;
  double temperature = 0.07;
  /// Complementary layers for uni-modal clients. Filled from the aggregator
  /// section; not part of the trainer section of a config file.
  model::CoLayer co_layer = model::CoLayer::None;
  bool out_trainable = true;
  /// Lets ablations freeze the gates at zero.
  bool gate_trainable = true;

  friend bool operator==(const TrainerConfig&, const TrainerConfig&) = default;
};

struct AggregatorConfig {
  AggregatorKind kind = AggregatorKind::FedAvg;
  agg::OmegaMode omega = agg::OmegaMode::Identity;
  model::CoLayer co_layer = model::CoLayer::None;
  bool out_trainable = true;
  agg::NormPolicy norm_policy = agg::NormPolicy::Others;
  /// attn and others tables for OmegaMode::Custom.
  std::optional<std::pair<agg::Matrix4, agg::Matrix4>> custom;

  friend bool operator==(const AggregatorConfig&, const AggregatorConfig&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t rounds = 10;
  std::size_t eval_interval = 1;
  ClientCounts clients;
  SampleRates rates;
  ModelConfig model;
  DataConfig data;
  TrainerConfig trainer;
  AggregatorConfig aggregator;
  std::string label = "run";
  std::string output_dir = "runs/default";

  /// Every violated constraint, one message each; empty when valid.
  std::vector<std::string> validate() const;
  /// Trainer settings with the complementary fields taken from the aggregator.
  TrainerConfig effective_trainer() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

}  // namespace fedsim::fed
