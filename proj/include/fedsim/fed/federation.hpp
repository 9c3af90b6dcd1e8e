// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/agg/aggregate.hpp"
#include "fedsim/analysis/metrics.hpp"
#include "fedsim/data/partition.hpp"
#include "fedsim/data/synthetic.hpp"
#include "fedsim/fed/experiment.hpp"
#include "fedsim/model/encoder.hpp"

namespace fedsim::fed {

/// A client session failed; the message names the round and client.
class ClientFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ClientSpec {
  std::size_t client_id = 0;
  agg::ClientKind kind = agg::ClientKind::V;
  /// Rows of the kind's training set held by this client.
  std::vector<std::size_t> rows;

  std::size_t n() const { return rows.size(); }
};

struct Datasets {
  data::LabeledSet vision_train;
  data::LabeledSet vision_test;
  data::LabeledSet text_train;
  data::LabeledSet text_test;
  data::PairedSet paired_train;
  data::PairedSet paired_test;
};

Datasets make_datasets(const ExperimentConfig& cfg);

/// Partitions each training set over its clients. Ids run vision, text,
/// multimodal.
std::vector<ClientSpec> make_clients(const ExperimentConfig& cfg, const Datasets& ds);

struct RoundPlan {
  std::size_t round = 0;
  SampleRates rates;
  /// Selected client ids per kind (V, L, VL), ascending.
  std::array<std::vector<std::size_t>, 3> selected;

  std::vector<std::size_t> all() const;
};

/// round(rate * n) with halves rounded up, at least 1 when n >= 1.
std::size_t selected_count(std::size_t n, double rate);

RoundPlan sample_clients(std::span<const ClientSpec> clients, const SampleRates& rates, std::size_t round,
                         std::uint64_t seed);

struct GlobalState {
  std::size_t round = 0;
  std::uint64_t seed = 0;
  agg::OwnerSets models;
  std::vector<analysis::MetricsRecord> history;
};

/// Encoder shape of each owner's model.
model::EncoderConfig encoder_config(const ExperimentConfig& cfg, agg::Owner owner);

/// Round-0 models. Every owner's blocks come from one shared stream.
GlobalState init_state(const ExperimentConfig& cfg);

model::ModalEncoder load_encoder(const ExperimentConfig& cfg, const GlobalState& state, agg::Owner owner);

/// Trains one client from the current global models and returns its merged
/// delta.
agg::ClientUpdate local_train(const ExperimentConfig& cfg, const Datasets& ds, const ClientSpec& client,
                              const GlobalState& state, const TrainerConfig& trainer);

/// Test-set metrics of the current global models.
analysis::MetricsRecord evaluate(const ExperimentConfig& cfg, const Datasets& ds, const GlobalState& state);

/// Server side of one round: combines the updates and applies them.
agg::OwnerSets aggregate_round(const ExperimentConfig& cfg, std::span<const agg::ClientUpdate> updates,
                               const agg::OwnerSets& layout);

/// Trains the planned clients on up to `workers` threads, aggregates and
/// advances the state. Results do not depend on `workers`.
void run_round(const ExperimentConfig& cfg, const Datasets& ds, std::span<const ClientSpec> clients,
               GlobalState& state, const RoundPlan& plan, std::size_t workers);

using RoundCallback = std::function<void(const analysis::MetricsRecord&)>;

/// All rounds with evaluation at round 0, every eval_interval rounds and at the
/// last round. The returned state carries the metrics history.
GlobalState run_experiment(const ExperimentConfig& cfg, std::size_t workers = 1,
                         const RoundCallback& on_eval = nullptr);

}  // namespace fedsim::fed
