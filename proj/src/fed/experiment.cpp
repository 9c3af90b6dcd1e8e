// SPDX-License-Identifier: Apache-2.0
#include "fedsim/fed/experiment.hpp"

#include <cmath>

#include <fmt/format.h>

#include "fedsim/common/error.hpp"

namespace fedsim::fed {

std::string_view to_string(AggregatorKind k) {
  switch (k) {
    case AggregatorKind::FedAvg: return "fedavg";
    case AggregatorKind::FedProx: return "fedprox";
    case AggregatorKind::FedIoT: return "fediot";
    case AggregatorKind::FedCola: return "fedcola";
  }
  return "?";
}

AggregatorKind aggregator_kind_from_string(std::string_view name) {
  for (auto k : {AggregatorKind::FedAvg, AggregatorKind::FedProx, AggregatorKind::FedIoT, AggregatorKind::FedCola}) {
    if (name == to_string(k)) return k;
  }
  throw ContractError(fmt::format("unknown aggregator '{}' (expected fedavg, fedprox, fediot or fedcola)", name));
}

namespace {

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

}  // namespace

std::vector<std::string> ExperimentConfig::validate() const {
  std::vector<std::string> errs;
  auto fail = [&](std::string msg) { errs.push_back(std::move(msg)); };

  if (eval_interval < 1) fail("eval_interval must be >= 1");
  auto check_rate = [&](const char* name, double r) {
    if (!(r > 0.0 && r <= 1.0)) fail(fmt::format("rates.{} = {} is outside (0, 1]", name, r));
  };
  check_rate("vision", rates.vision);
  check_rate("text", rates.text);
  check_rate("multimodal", rates.multimodal);

  const auto& b = model.blocks;
  if (b.dim == 0 || b.heads == 0 || b.dim % b.heads != 0) {
    fail(fmt::format("model.dim {} must be a positive multiple of model.heads {}", b.dim, b.heads));
  }
  if (b.depth < 1) fail("model.depth must be >= 1");
  if (b.mlp_ratio < 1) fail("model.mlp_ratio must be >= 1");
  if (b.max_seq < 1) fail("model.max_seq must be >= 1");
  if (model.proj_dim < 1) fail("model.proj_dim must be >= 1");

  const auto& s = data.space;
  if (s.num_classes < 2) fail("data.num_classes must be >= 2");
  if (s.latent_dim < 1) fail("data.latent_dim must be >= 1");
  if (!finite_positive(s.class_scale)) fail("data.class_scale must be positive");
  if (s.patch_dim < 1) fail("data.patch_dim must be >= 1");
  if (s.vocab < 2) fail("data.vocab must be >= 2");
  if (s.vision_seq < 1 || s.vision_seq > b.max_seq) {
    fail(fmt::format("data.vision_seq {} must lie in [1, model.max_seq {}]", s.vision_seq, b.max_seq));
  }
  if (s.text_seq < 1 || s.text_seq > b.max_seq) {
    fail(fmt::format("data.text_seq {} must lie in [1, model.max_seq {}]", s.text_seq, b.max_seq));
  }
  if (!(std::isfinite(data.noise) && data.noise >= 0.0)) fail("data.noise must be >= 0");
  if (!finite_positive(data.alpha)) fail("data.alpha must be positive");
  if (!finite_positive(data.size_skew)) fail("data.size_skew must be positive");
  auto check_split = [&](const char* name, const DatasetSplit& d, std::size_t n_clients) {
    if (d.per_class_train < 1) fail(fmt::format("data.{}.per_class_train must be >= 1", name));
    if (d.per_class_test < 1) fail(fmt::format("data.{}.per_class_test must be >= 1", name));
    if (!(std::isfinite(d.shift) && d.shift >= 0.0)) fail(fmt::format("data.{}.shift must be >= 0", name));
    if (d.per_class_train * s.num_classes < n_clients) {
      fail(fmt::format("data.{}: {} training samples cannot cover {} clients", name,
                       d.per_class_train * s.num_classes, n_clients));
    }
  };
  check_split("vision", data.vision, clients.vision);
  check_split("text", data.text, clients.text);
  check_split("paired", data.paired, clients.multimodal);
  if (data.paired.per_class_test * s.num_classes < 2) fail("data.paired needs at least 2 test pairs");

  const auto& t = trainer;
  if (t.local_epochs < 1) fail("trainer.local_epochs must be >= 1");
  if (t.batch_size < 2) fail("trainer.batch_size must be >= 2 (contrastive batches need negatives)");
  if (!(std::isfinite(t.lr) && t.lr >= 0.0)) fail("trainer.lr must be >= 0");
  if (!(t.lr_epoch_decay > 0.0 && t.lr_epoch_decay <= 1.0)) fail("trainer.lr_epoch_decay must lie in (0, 1]");
  if (!(std::isfinite(t.weight_decay) && t.weight_decay >= 0.0)) fail("trainer.weight_decay must be >= 0");
  if (!(t.beta1 >= 0.0 && t.beta1 < 1.0) || !(t.beta2 >= 0.0 && t.beta2 < 1.0)) {
    fail("trainer.betas must lie in [0, 1)");
  }
  if (!finite_positive(t.eps)) fail("trainer.eps must be positive");
  if (!(std::isfinite(t.prox_mu) && t.prox_mu >= 0.0)) fail("trainer.prox_mu must be >= 0");
  if (!finite_positive(t.temperature)) fail("trainer.temperature must be positive");

  const auto& a = aggregator;
  if (t.prox_mu != 0.0 && a.kind != AggregatorKind::FedProx) {
    fail("trainer.prox_mu is only used with aggregator.kind = fedprox");
  }
  if (a.kind != AggregatorKind::FedCola) {
    if (a.omega != agg::OmegaMode::Identity) fail("aggregator.omega other than identity requires kind = fedcola");
    if (a.co_layer != model::CoLayer::None) fail("aggregator.co_layer other than none requires kind = fedcola");
  }
  if (a.omega == agg::OmegaMode::Custom && !a.custom) fail("aggregator.omega = custom requires aggregator.custom");
  if (a.omega != agg::OmegaMode::Custom && a.custom) fail("aggregator.custom is only used with omega = custom");
  if (a.custom) {
    for (const auto* m : {&a.custom->first, &a.custom->second}) {
      for (const auto& row : *m) {
        for (double v : row) {
          if (!(std::isfinite(v) && v >= 0.0)) fail("aggregator.custom entries must be finite and >= 0");
        }
      }
    }
  }
  return errs;
}

TrainerConfig ExperimentConfig::effective_trainer() const {
  TrainerConfig t = trainer;
  t.co_layer = aggregator.co_layer;
  t.out_trainable = aggregator.out_trainable;
  return t;
}

}  // namespace fedsim::fed
