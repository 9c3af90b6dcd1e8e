// SPDX-License-Identifier: Apache-2.0
#include "fedsim/fed/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <optional>
#include <thread>

#include <fmt/format.h>

#include "fedsim/common/error.hpp"
#include "fedsim/common/rng.hpp"
#include "fedsim/model/gated.hpp"
#include "fedsim/nn/adamw.hpp"

namespace fedsim::fed {

using agg::ClientKind;
using agg::Owner;
using model::Modality;

namespace {

std::size_t kind_index(ClientKind k) {
  switch (k) {
    case ClientKind::V: return 0;
    case ClientKind::L: return 1;
    case ClientKind::VL: return 2;
  }
  return 0;
}

data::SampleSpec sample_spec(const ExperimentConfig& cfg, const DatasetSplit& split, std::string_view name,
                             bool train) {
  data::SampleSpec s;
  s.per_class = train ? split.per_class_train : split.per_class_test;
  s.noise = cfg.data.noise;
  s.shift = split.shift;
  s.shift_seed = Rng(cfg.data.space.prototype_seed, "dataset_shift").split(name).key();
  s.seed = Rng(cfg.seed, "datasets").split(name).split(train ? "train" : "test").key();
  return s;
}

}  // namespace

Datasets make_datasets(const ExperimentConfig& cfg) {
  const auto& sp = cfg.data.space;
  return Datasets{
      data::gen_unimodal(sp, Modality::Vision, sample_spec(cfg, cfg.data.vision, "vision", true)),
      data::gen_unimodal(sp, Modality::Vision, sample_spec(cfg, cfg.data.vision, "vision", false)),
      data::gen_unimodal(sp, Modality::Text, sample_spec(cfg, cfg.data.text, "text", true)),
      data::gen_unimodal(sp, Modality::Text, sample_spec(cfg, cfg.data.text, "text", false)),
      data::gen_paired(sp, sample_spec(cfg, cfg.data.paired, "paired", true)),
      data::gen_paired(sp, sample_spec(cfg, cfg.data.paired, "paired", false)),
  };
}

std::vector<ClientSpec> make_clients(const ExperimentConfig& cfg, const Datasets& ds) {
  const Rng root(cfg.seed, "partition");
  std::vector<ClientSpec> out;
  auto append = [&](ClientKind kind, const data::Partition& p) {
    for (const auto& rows : p.assignment) out.push_back(ClientSpec{out.size(), kind, rows});
  };
  if (cfg.clients.vision > 0) {
    append(ClientKind::V, data::dirichlet_partition(ds.vision_train.labels, cfg.clients.vision, cfg.data.alpha,
                                                    root.split("vision").key()));
  }
  if (cfg.clients.text > 0) {
    append(ClientKind::L, data::dirichlet_partition(ds.text_train.labels, cfg.clients.text, cfg.data.alpha,
                                                    root.split("text").key()));
  }
  if (cfg.clients.multimodal > 0) {
    append(ClientKind::VL, data::size_partition(ds.paired_train.size(), cfg.clients.multimodal,
                                                cfg.data.size_skew, root.split("paired").key()));
  }
  return out;
}

std::vector<std::size_t> RoundPlan::all() const {
  std::vector<std::size_t> out;
  for (const auto& s : selected) out.insert(out.end(), s.begin(), s.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t selected_count(std::size_t n, double rate) {
  if (!(rate > 0.0 && rate <= 1.0)) throw ContractError(fmt::format("sample rate {} outside (0, 1]", rate));
  if (n == 0) return 0;
  const auto k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 0.5));
  return std::clamp<std::size_t>(k, 1, n);
}

RoundPlan sample_clients(std::span<const ClientSpec> clients, const SampleRates& rates, std::size_t round,
                         std::uint64_t seed) {
  RoundPlan plan;
  plan.round = round;
  plan.rates = rates;
  const std::array<double, 3> r{rates.vision, rates.text, rates.multimodal};
  const Rng root = Rng(seed, "sample_clients").split(round);
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<std::size_t> ids;
    for (const auto& c : clients) {
      if (kind_index(c.kind) == k) ids.push_back(c.client_id);
    }
    const std::size_t take = selected_count(ids.size(), r[k]);
    Rng rng = root.split(k);
    // Partial Fisher-Yates: the first `take` slots are a uniform draw.
    for (std::size_t i = 0; i < take; ++i) {
      std::swap(ids[i], ids[i + rng.below(ids.size() - i)]);
    }
    ids.resize(take);
    std::sort(ids.begin(), ids.end());
    plan.selected[k] = std::move(ids);
  }
  return plan;
}

model::EncoderConfig encoder_config(const ExperimentConfig& cfg, Owner owner) {
  const auto& sp = cfg.data.space;
  model::EncoderConfig e;
  e.blocks = cfg.model.blocks;
  const bool vision = owner == Owner::V || owner == Owner::VLv;
  e.modality = vision ? Modality::Vision : Modality::Text;
  e.input_dim = vision ? sp.patch_dim : sp.vocab;
  const bool multi = owner == Owner::VLv || owner == Owner::VLl;
  e.head = multi ? model::HeadKind::Retrieval : model::HeadKind::Classify;
  e.out_dim = multi ? cfg.model.proj_dim : sp.num_classes;
  if (owner == Owner::NonBlock) throw ContractError("encoder_config: NonBlock is not a model owner");
  return e;
}

GlobalState init_state(const ExperimentConfig& cfg) {
  GlobalState s;
  s.seed = cfg.seed;
  const Rng init(cfg.seed, "init");
  const Rng blocks = init.split("blocks");
  for (Owner o : agg::kOwners) {
    const model::ModalEncoder enc(encoder_config(cfg, o), blocks, init.split(agg::to_string(o)));
    s.models[agg::owner_index(o)] = enc.to_param_set(o);
  }
  return s;
}

model::ModalEncoder load_encoder(const ExperimentConfig& cfg, const GlobalState& state, Owner owner) {
  model::ModalEncoder enc(encoder_config(cfg, owner), Rng(0, "placeholder"), Rng(0, "placeholder"));
  enc.load(state.models[agg::owner_index(owner)]);
  return enc;
}

namespace {

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size,
                                                   bool need_pairs) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t at = 0; at < order.size(); at += batch_size) {
    const std::size_t end = std::min(order.size(), at + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // A lone trailing pair has no negatives: fold it into the previous batch.
  if (need_pairs && !out.empty() && out.back().size() < 2) {
    auto tail = std::move(out.back());
    out.pop_back();
    if (!out.empty()) out.back().insert(out.back().end(), tail.begin(), tail.end());
  }
  return out;
}

void add_prox(std::span<nn::Param* const> params, const agg::NamedParamSet& global, double mu) {
  if (mu == 0.0) return;
  for (nn::Param* p : params) {
    if (!p->trainable) continue;
    auto g = p->grad.data();
    auto w = p->value.data();
    auto w0 = global.at(p->path()).value.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += mu * (w[i] - w0[i]);
  }
}

// Epoch loop shared by both objectives. `step_loss` builds the loss of one
// batch on a fresh graph.
void train_loop(const ClientSpec& client, const TrainerConfig& t, Rng rng, std::span<nn::Param* const> trainable,
                std::span<nn::Param* const> local, const std::vector<const agg::NamedParamSet*>& globals,
                bool need_pairs, const std::function<nn::Var(nn::Graph&, std::span<const std::size_t>)>& step_loss) {
  nn::AdamWState opt = nn::adamw_init(trainable, {t.lr, t.beta1, t.beta2, t.eps, t.weight_decay});
  double lr = t.lr;
  for (std::size_t epoch = 0; epoch < t.local_epochs; ++epoch) {
    opt.lr = lr;
    std::vector<std::size_t> order(client.rows);
    Rng er = rng.split(epoch);
    er.shuffle(std::span<std::size_t>(order));
    for (const auto& batch : make_batches(order, t.batch_size, need_pairs)) {
      for (nn::Param* p : trainable) p->zero_grad();
      nn::Graph g;
      nn::Var loss = step_loss(g, batch);
      if (!std::isfinite(loss.value().item())) {
        throw NumericError(fmt::format("non-finite loss in epoch {}", epoch));
      }
      g.backward(loss);
      if (t.prox_mu != 0.0) {
        // Local params are laid out owner by owner, in global-set order.
        std::size_t at = 0;
        for (const auto* gset : globals) {
          add_prox(local.subspan(at, gset->size()), *gset, t.prox_mu);
          at += gset->size();
        }
      }
      nn::adamw_step(trainable, opt);
    }
    lr *= t.lr_epoch_decay;
  }
}

Rng client_rng(const GlobalState& state, const ClientSpec& client) {
  return Rng(state.seed, "local_train").split(state.round).split(client.client_id);
}

agg::ClientUpdate uni_train(const ExperimentConfig& cfg, const Datasets& ds, const ClientSpec& client,
                            const GlobalState& state, const TrainerConfig& t) {
  const bool vision = client.kind == ClientKind::V;
  const Owner owner = vision ? Owner::V : Owner::L;
  const Owner other = vision ? Owner::L : Owner::V;
  const data::LabeledSet& train = vision ? ds.vision_train : ds.text_train;
  const agg::NamedParamSet& global = state.models[agg::owner_index(owner)];

  model::GatedEncoder m = model::attach_complementary(
      load_encoder(cfg, state, owner), state.models[agg::owner_index(other)], t.co_layer, t.out_trainable);
  for (auto& gate : m.gated.gates) gate.trainable = t.gate_trainable;

  std::vector<nn::Param*> local = m.local.param_ptrs();
  std::vector<nn::Param*> trainable = local;
  for (nn::Param* p : m.gated.param_ptrs()) trainable.push_back(p);

  train_loop(client, t, client_rng(state, client), trainable, local, {&global}, false,
             [&](nn::Graph& g, std::span<const std::size_t> rows) {
               std::vector<int> labels;
               for (std::size_t r : rows) labels.push_back(train.labels[r]);
               return nn::cross_entropy(model::forward_classify(g, m, train.batch(rows)), labels);
             });

  agg::ClientUpdate u{client.client_id, client.kind, client.n(), state.round, {}};
  const model::ModalEncoder merged = model::merge_gated_weights(m);
  u.parts.push_back(agg::difference(merged.to_param_set(owner), global));
  return u;
}

agg::ClientUpdate multi_train(const ExperimentConfig& cfg, const Datasets& ds, const ClientSpec& client,
                              const GlobalState& state, const TrainerConfig& t) {
  model::MultiModalModel m{load_encoder(cfg, state, Owner::VLv), load_encoder(cfg, state, Owner::VLl)};
  const agg::NamedParamSet& gv = state.models[agg::owner_index(Owner::VLv)];
  const agg::NamedParamSet& gl = state.models[agg::owner_index(Owner::VLl)];
  std::vector<nn::Param*> params = m.vision.param_ptrs();
  for (nn::Param* p : m.text.param_ptrs()) params.push_back(p);

  const data::PairedSet& train = ds.paired_train;
  train_loop(client, t, client_rng(state, client), params, params, {&gv, &gl}, true,
             [&](nn::Graph& g, std::span<const std::size_t> rows) {
               auto [img, txt] = model::forward_retrieval(g, m, train.vision.batch(rows), train.text.batch(rows));
               return model::contrastive_loss(img, txt, t.temperature);
             });

  agg::ClientUpdate u{client.client_id, client.kind, client.n(), state.round, {}};
  u.parts.push_back(agg::difference(m.vision.to_param_set(Owner::VLv), gv));
  u.parts.push_back(agg::difference(m.text.to_param_set(Owner::VLl), gl));
  return u;
}

}  // namespace

agg::ClientUpdate local_train(const ExperimentConfig& cfg, const Datasets& ds, const ClientSpec& client,
                              const GlobalState& state, const TrainerConfig& trainer) {
  if (client.rows.empty()) throw ContractError(fmt::format("client {} holds no data", client.client_id));
  if (client.kind == ClientKind::VL) return multi_train(cfg, ds, client, state, trainer);
  return uni_train(cfg, ds, client, state, trainer);
}

analysis::MetricsRecord evaluate(const ExperimentConfig& cfg, const Datasets& ds, const GlobalState& state) {
  analysis::MetricsRecord r;
  r.round = state.round;
  auto classify = [&](Owner owner, const data::LabeledSet& test, double& acc, double& loss) {
    model::ModalEncoder enc = load_encoder(cfg, state, owner);
    nn::Graph g;
    nn::Var logits = model::forward_classify(g, enc, test.all());
    acc = 100.0 * analysis::top1_accuracy(logits.value(), test.labels);
    loss = nn::cross_entropy(logits, test.labels).value().item();
  };
  classify(Owner::V, ds.vision_test, r.acc_v, r.loss_v);
  classify(Owner::L, ds.text_test, r.acc_l, r.loss_l);

  model::MultiModalModel m{load_encoder(cfg, state, Owner::VLv), load_encoder(cfg, state, Owner::VLl)};
  nn::Graph g;
  auto [img, txt] = model::forward_retrieval(g, m, ds.paired_test.vision.all(), ds.paired_test.text.all());
  std::vector<std::size_t> pairing(ds.paired_test.size());
  std::iota(pairing.begin(), pairing.end(), 0);
  const analysis::Recall rec = analysis::recall_at_k(img.value(), txt.value(), pairing, 1);
  r.i2t_r1 = 100.0 * rec.i2t;
  r.t2i_r1 = 100.0 * rec.t2i;
  r.r1_sum = r.i2t_r1 + r.t2i_r1;
  r.loss_vl = model::contrastive_loss(img, txt, cfg.trainer.temperature).value().item();
  return r;
}

agg::OwnerSets aggregate_round(const ExperimentConfig& cfg, std::span<const agg::ClientUpdate> updates,
                               const agg::OwnerSets& layout) {
  const auto& a = cfg.aggregator;
  switch (a.kind) {
    case AggregatorKind::FedAvg:
    case AggregatorKind::FedProx:
      return agg::aggregate_by_owner(updates, layout);
    case AggregatorKind::FedIoT:
      return agg::fediot_aggregate(updates, layout);
    case AggregatorKind::FedCola: {
      const agg::OmegaSpec omega = a.omega == agg::OmegaMode::Custom
                                       ? agg::custom_omega(a.custom->first, a.custom->second)
                                       : agg::build_omega(agg::count_samples(updates), a.omega);
      return agg::apply_collaboration(agg::aggregate_by_owner(updates, layout), omega, a.norm_policy);
    }
  }
  throw ContractError("unknown aggregator kind");
}

void run_round(const ExperimentConfig& cfg, const Datasets& ds, std::span<const ClientSpec> clients,
               GlobalState& state, const RoundPlan& plan, std::size_t workers) {
  if (plan.round != state.round) {
    throw ContractError(fmt::format("round plan is for round {}, state is at round {}", plan.round, state.round));
  }
  const std::vector<std::size_t> ids = plan.all();
  if (ids.empty()) {
    ++state.round;
    return;
  }
  const TrainerConfig trainer = cfg.effective_trainer();
  std::vector<std::optional<agg::ClientUpdate>> results(ids.size());
  std::vector<std::exception_ptr> errors(ids.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < ids.size(); i = next++) {
      try {
        const ClientSpec& c = clients[ids[i]];
        if (c.client_id != ids[i]) throw ContractError("client table is not indexed by id");
        results[i] = local_train(cfg, ds, c, state, trainer);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(ids.size(), 1));
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw ClientFailure(fmt::format("round {} client {}: {}", state.round, ids[i], e.what()));
    }
  }
  std::vector<agg::ClientUpdate> updates;
  updates.reserve(results.size());
  for (auto& r : results) updates.push_back(std::move(*r));

  const agg::OwnerSets deltas = aggregate_round(cfg, updates, state.models);
  for (std::size_t i = 0; i < 4; ++i) state.models[i] = agg::global_update(state.models[i], deltas[i]);
  ++state.round;
}

GlobalState run_experiment(const ExperimentConfig& cfg, std::size_t workers, const RoundCallback& on_eval) {
  const auto errs = cfg.validate();
  if (!errs.empty()) {
    std::string msg = "invalid experiment config:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ContractError(msg);
  }
  const Datasets ds = make_datasets(cfg);
  const std::vector<ClientSpec> clients = make_clients(cfg, ds);
  GlobalState state = init_state(cfg);
  auto record = [&] {
    state.history.push_back(evaluate(cfg, ds, state));
    if (on_eval) on_eval(state.history.back());
  };
  record();
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    run_round(cfg, ds, clients, state, sample_clients(clients, cfg.rates, t, cfg.seed), workers);
    if (state.round % cfg.eval_interval == 0 || state.round == cfg.rounds) record();
  }
  return state;
}

}  // namespace fedsim::fed
