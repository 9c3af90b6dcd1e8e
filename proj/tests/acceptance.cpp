// SPDX-License-Identifier: Apache-2.0
// One PASS/FAIL line per acceptance criterion. Exit status is nonzero if any
// criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "fedsim/agg/aggregate.hpp"
#include "fedsim/analysis/metrics.hpp"
#include "fedsim/cli/commands.hpp"
#include "fedsim/data/partition.hpp"
#include "fedsim/fed/federation.hpp"
#include "fedsim/io/config_io.hpp"
#include "fedsim/model/gated.hpp"
#include "fedsim/model/grad_suite.hpp"
#include "oracles.hpp"

using namespace fedsim;
using agg::ClientKind;
using agg::Owner;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& check) {
  Outcome o{false, ""};
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  fmt::print("{} [{:>2}] {}: {}\n", o.pass ? "PASS" : "FAIL", id, name, o.detail);
  std::fflush(stdout);
}

fed::ExperimentConfig default_config() { return io::load_config(FEDSIM_SOURCE_DIR "/configs/default.json"); }

fed::ExperimentConfig as_fedcola(fed::ExperimentConfig c) {
  c.aggregator.kind = fed::AggregatorKind::FedCola;
  c.aggregator.omega = agg::OmegaMode::InModalCollabCompensated;
  c.aggregator.co_layer = model::CoLayer::Blocks;
  return c;
}

// ---- model helpers -------------------------------------------------------

model::TransformerConfig toy_blocks() { return {8, 2, 2, 2, 6}; }

model::ModalEncoder toy_encoder(model::Modality m, std::uint64_t seed, oracle::Gen& gen) {
  model::EncoderConfig cfg{m, m == model::Modality::Vision ? std::size_t{5} : std::size_t{9},
                           model::HeadKind::Classify, 4, toy_blocks()};
  model::ModalEncoder enc(cfg, Rng(seed, "blocks"), Rng(seed, "own"));
  for (auto& p : enc.params()) {
    for (double& v : p.value.data()) v += 0.3 * gen.normal();
  }
  return enc;
}

agg::NamedParamSet blocks_of(const model::ModalEncoder& e) {
  return e.to_param_set(Owner::L).filtered([](const agg::ParamEntry& x) { return nn::is_block_tag(x.tag); });
}

model::InputBatch random_vision(oracle::Gen& gen, std::size_t batch) {
  model::InputBatch in{model::Modality::Vision, batch, 4, 5, {}, {}};
  for (std::size_t i = 0; i < batch * 4 * 5; ++i) in.patches.push_back(gen.normal());
  return in;
}

nn::Tensor logits(model::ModalEncoder& e, const model::InputBatch& in) {
  nn::Graph g;
  return model::forward_classify(g, e, in).value();
}

nn::Tensor logits(model::GatedEncoder& e, const model::InputBatch& in) {
  nn::Graph g;
  return model::forward_classify(g, e, in).value();
}

// ---- aggregation helpers -------------------------------------------------

agg::NamedParamSet random_set(oracle::Gen& gen, Owner owner) {
  const bool vision = owner == Owner::V || owner == Owner::VLv;
  agg::NamedParamSet s(owner);
  s.add(vision ? "embed.patch.weight" : "embed.token", nn::PartTag::Embedding, gen.tensor({vision ? 5u : 7u, 3}));
  s.add("blocks.0.norm1.gamma", nn::PartTag::Norm, gen.tensor({3}));
  s.add("blocks.0.attn.q.weight", nn::PartTag::Attention, gen.tensor({3, 3}));
  s.add("blocks.0.mlp.fc1.weight", nn::PartTag::Mlp, gen.tensor({3, 4}));
  s.add("head.fc.weight", nn::PartTag::Head, gen.tensor({3, vision ? 2u : 4u}));
  return s;
}

agg::ClientUpdate random_update(oracle::Gen& gen, std::size_t id, ClientKind kind) {
  agg::ClientUpdate u{id, kind, 1 + gen.index(40), 0, {}};
  if (kind == ClientKind::V) u.parts.push_back(random_set(gen, Owner::V));
  if (kind == ClientKind::L) u.parts.push_back(random_set(gen, Owner::L));
  if (kind == ClientKind::VL) {
    u.parts.push_back(random_set(gen, Owner::VLv));
    u.parts.push_back(random_set(gen, Owner::VLl));
  }
  return u;
}

ClientKind random_kind(oracle::Gen& gen) {
  static constexpr ClientKind kinds[] = {ClientKind::V, ClientKind::L, ClientKind::VL};
  return kinds[gen.index(3)];
}

agg::OwnerSets zero_layout(oracle::Gen& gen) {
  agg::OwnerSets s;
  for (Owner o : agg::kOwners) s[agg::owner_index(o)] = agg::zeros_like(random_set(gen, o));
  return s;
}

// ---- criteria ------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  nn::GradCheckOptions opts;
  opts.h = 1e-5;
  opts.tol = 1e-4;
  double worst = 0;
  bool all = true;
  std::string names;
  for (const auto& c : model::transformer_grad_suite({16, 2, 2, 4, 16}, 0, opts)) {
    worst = std::max(worst, c.report.max_rel_error);
    all = all && c.report.passed && c.report.checked > 0;
    names += (names.empty() ? "" : ",") + c.name;
  }
  const double secs = seconds_since(t0);
  return {all && worst <= 1e-4 && secs < 120.0,
          fmt::format("max rel err {:.2e} (tol 1e-4) over {}; {:.1f} s (limit 120 s)", worst, names, secs)};
}

Outcome compression_exactness() {
  oracle::Gen gen(11);
  model::ModalEncoder local = toy_encoder(model::Modality::Vision, 1, gen);
  model::ModalEncoder other = toy_encoder(model::Modality::Text, 2, gen);
  model::GatedEncoder gated = model::attach_complementary(local, blocks_of(other), model::CoLayer::Blocks, true);
  for (auto& g : gated.gated.gates) g.value = nn::Tensor::scalar(gen.normal());
  model::ModalEncoder merged = model::merge_gated_weights(gated);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const auto in = random_vision(gen, 3);
    const nn::Tensor a = logits(merged, in), b = logits(gated, in);
    for (std::size_t k = 0; k < a.numel(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  }
  const bool layout = merged.to_param_set(Owner::V).same_layout(local.to_param_set(Owner::V));
  return {worst <= 1e-12 && layout,
          fmt::format("max abs diff {:.2e} over 100 inputs (tol 1e-12); upload layout identical: {}", worst, layout)};
}

Outcome gate_zero_identity() {
  oracle::Gen gen(12);
  model::ModalEncoder local = toy_encoder(model::Modality::Vision, 3, gen);
  model::ModalEncoder other = toy_encoder(model::Modality::Text, 4, gen);
  std::size_t mismatches = 0, checks = 0;
  for (model::CoLayer v : {model::CoLayer::None, model::CoLayer::Attention, model::CoLayer::Mlp, model::CoLayer::Blocks}) {
    model::GatedEncoder gated = model::attach_complementary(local, blocks_of(other), v, true);
    for (int i = 0; i < 25; ++i) {
      const auto in = random_vision(gen, 2);
      ++checks;
      if (!(logits(gated, in) == logits(local, in))) ++mismatches;
    }
  }
  return {mismatches == 0, fmt::format("{} of {} gated forwards bit-identical to the ungated model", checks - mismatches, checks)};
}

Outcome aggregation_oracle() {
  oracle::Gen gen(13);
  double worst_avg = 0, worst_iot = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const agg::OwnerSets layout = zero_layout(gen);
    agg::OwnerSets global;
    for (Owner o : agg::kOwners) global[agg::owner_index(o)] = random_set(gen, o);
    std::vector<agg::ClientUpdate> us;
    for (std::size_t i = 0; i < 5; ++i) us.push_back(random_update(gen, i, random_kind(gen)));

    // FedAvg: global + sum n_i d_i / sum n_i per owner.
    const agg::OwnerSets mixed = agg::apply_collaboration(agg::aggregate_by_owner(us, layout), agg::OmegaSpec{});
    for (Owner o : agg::kOwners) {
      const std::size_t oi = agg::owner_index(o);
      const agg::NamedParamSet next = agg::global_update(global[oi], mixed[oi]);
      for (const auto& e : next) {
        for (std::size_t k = 0; k < e.value.numel(); ++k) {
          long double num = 0, den = 0;
          for (const auto& u : us) {
            if (const auto* p = u.part(o)) {
              num += static_cast<long double>(u.n) * p->at(e.path).value[k];
              den += u.n;
            }
          }
          const double expect = global[oi].at(e.path).value[k] + (den > 0 ? static_cast<double>(num / den) : 0.0);
          worst_avg = std::max(worst_avg, std::abs(e.value[k] - expect));
        }
      }
    }

    // FedIoT: per modality, block entries pooled over the uni owner and the
    // matching multi-modal half, multi-modal clients weighted 100 n_i.
    const agg::OwnerSets iot = agg::fediot_aggregate(us, layout);
    for (Owner o : agg::kOwners) {
      const bool vision = o == Owner::V || o == Owner::VLv;
      const Owner uni = vision ? Owner::V : Owner::L;
      const Owner multi = vision ? Owner::VLv : Owner::VLl;
      for (const auto& e : iot[agg::owner_index(o)]) {
        for (std::size_t k = 0; k < e.value.numel(); ++k) {
          long double num = 0, den = 0;
          for (const auto& u : us) {
            if (nn::is_block_tag(e.tag)) {
              const bool is_multi = u.kind == ClientKind::VL;
              if (const auto* p = u.part(is_multi ? multi : uni)) {
                const long double w = (is_multi ? 100.0L : 1.0L) * u.n;
                num += w * p->at(e.path).value[k];
                den += w;
              }
            } else if (const auto* p = u.part(o)) {
              num += static_cast<long double>(u.n) * p->at(e.path).value[k];
              den += u.n;
            }
          }
          const double expect = den > 0 ? static_cast<double>(num / den) : 0.0;
          worst_iot = std::max(worst_iot, std::abs(e.value[k] - expect));
        }
      }
    }
  }
  return {worst_avg <= 1e-12 && worst_iot <= 1e-12,
          fmt::format("20 random 5-client instances: FedAvg max err {:.2e}, FedIoT max err {:.2e} (tol 1e-12)",
                      worst_avg, worst_iot)};
}

Outcome omega_construction() {
  oracle::Gen gen(14);
  double worst_row = 0;
  bool coherent = true, halves_equal = true;
  for (int i = 0; i < 1000; ++i) {
    const agg::SampleCounts c{.n_v = gen.uniform(0.5, 1000.0), .n_l = gen.uniform(0.5, 1000.0), .n_vl = gen.uniform(0.5, 1000.0)};
    const auto in = agg::build_omega(c, agg::OmegaMode::InModalCollab);
    for (const auto& row : in.attn) worst_row = std::max(worst_row, std::abs(row[0] + row[1] + row[2] + row[3] - 1.0));
    const auto comp = agg::build_omega(c, agg::OmegaMode::InModalCollabCompensated);
    for (std::size_t k = 0; k < 4; ++k) coherent = coherent && comp.others[k][k] == comp.attn[k][k];
    halves_equal = halves_equal && comp.attn[1][1] == comp.attn[2][2];
  }
  bool degenerate = true;
  for (auto mode : {agg::OmegaMode::Identity, agg::OmegaMode::InModalCollab, agg::OmegaMode::InModalCollabCompensated,
                    agg::OmegaMode::AllCollab}) {
    const auto o = agg::build_omega({.n_v = 7, .n_l = 5, .n_vl = 0}, mode);
    const std::array<double, 4> v_row{1, 0, 0, 0}, l_row{0, 0, 0, 1};
    degenerate = degenerate && o.attn[0] == v_row && o.attn[3] == l_row && o.others[0] == v_row && o.others[3] == l_row;
  }
  return {worst_row <= 1e-12 && coherent && halves_equal && degenerate,
          fmt::format("row-sum err {:.1e} over 1000 triples (tol 1e-12); compensation coherent: {}; "
                      "VLv/VLl self-coefficients equal: {}; n_vl=0 identity on uni rows: {}",
                      worst_row, coherent, halves_equal, degenerate)};
}

Outcome shapley_values() {
  const std::vector<std::string> two{"img", "txt"};
  double worst = 0;
  for (double x : {83.0, 85.0, 87.0}) {
    const std::vector<analysis::CoalitionValue> t{{{}, 81.08}, {{"img"}, x}, {{"txt"}, x + 1.40}, {{"img", "txt"}, 91.96}};
    const auto phi = analysis::shapley(two, t);
    worst = std::max({worst, std::abs(phi[0] - 4.74), std::abs(phi[1] - 6.14)});
  }
  oracle::Gen gen(15);
  const std::vector<std::string> six{"p0", "p1", "p2", "p3", "p4", "p5"};
  double worst_eff = 0;
  bool dummy = true;
  for (int g = 0; g < 20; ++g) {
    // Player p5 never changes the value: v depends on the other members only.
    std::map<std::size_t, double> base;
    std::vector<analysis::CoalitionValue> values;
    for (std::size_t mask = 0; mask < 64; ++mask) {
      analysis::CoalitionValue cv;
      for (std::size_t i = 0; i < 6; ++i) {
        if (mask & (std::size_t{1} << i)) cv.coalition.push_back(six[i]);
      }
      auto [it, fresh] = base.emplace(mask & 31u, 0.0);
      if (fresh) it->second = gen.uniform(-50.0, 100.0);
      cv.value = it->second;
      values.push_back(std::move(cv));
    }
    const auto phi = analysis::shapley(six, values);
    const double sum = std::accumulate(phi.begin(), phi.end(), 0.0);
    worst_eff = std::max(worst_eff, std::abs(sum - (values.back().value - values.front().value)));
    dummy = dummy && phi[5] == 0.0;
  }
  return {worst <= 1e-9 && worst_eff <= 1e-9 && dummy,
          fmt::format("reference table max err {:.1e} for x in {{83,85,87}} (tol 1e-9); "
                      "efficiency err {:.1e} on 20 random 6-player games; dummy exactly 0: {}",
                      worst, worst_eff, dummy)};
}

Outcome partitioning() {
  std::vector<int> labels;
  for (int c = 0; c < 4; ++c) labels.insert(labels.end(), 200, c);
  bool structural = true, uniform = true, skewed = true;
  double worst_rel = 0, min_top = 1;
  for (double alpha : {0.1, 0.5, 1000.0}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto p = data::dirichlet_partition(labels, 4, alpha, seed);
      std::vector<int> seen(labels.size(), 0);
      for (const auto& rows : p.assignment) {
        structural = structural && !rows.empty();
        for (std::size_t r : rows) ++seen[r];
      }
      structural = structural && std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });
      const auto hist = data::class_histogram(p, labels, 4);
      double top = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        const double size = static_cast<double>(p.assignment[k].size());
        for (std::size_t c = 0; c < 4; ++c) {
          const double share = static_cast<double>(hist[k][c]) / size;
          top = std::max(top, share);
          if (alpha == 1000.0) worst_rel = std::max(worst_rel, std::abs(share - 0.25) / 0.25);
        }
      }
      if (alpha == 0.1) {
        skewed = skewed && top > 0.6;
        min_top = std::min(min_top, top);
      }
    }
  }
  uniform = worst_rel <= 0.10;
  return {structural && uniform && skewed,
          fmt::format("disjoint/covering/nonempty: {}; alpha=1000 worst relative deviation {:.3f} (limit 0.10); "
                      "alpha=0.1 smallest top single-class share {:.3f} (limit > 0.60)",
                      structural, worst_rel, min_top)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / fmt::format("fedsim_acceptance_{}", std::random_device{}());
  const std::string cfg = FEDSIM_SOURCE_DIR "/configs/default.json";
  double secs[2];
  int codes[2];
  const char* workers[] = {"1", "4"};
  std::ostringstream sink;
  for (int i = 0; i < 2; ++i) {
    const std::string out = (root / workers[i]).string();
    const char* argv[] = {"fedsim", "run", "--config", cfg.c_str(), "--out", out.c_str(), "--workers", workers[i], "--quiet"};
    const auto t0 = Clock::now();
    codes[i] = cli::run_cli(9, argv, sink, sink);
    secs[i] = seconds_since(t0);
  }
  const std::string a = slurp(root / "1" / "metrics.csv");
  const std::string b = slurp(root / "4" / "metrics.csv");
  std::error_code ec;
  fs::remove_all(root, ec);
  const bool same = !a.empty() && a == b;
  return {codes[0] == 0 && codes[1] == 0 && same && secs[0] < 600 && secs[1] < 600,
          fmt::format("metrics.csv byte-identical with 1 and 4 workers: {} ({} bytes); {:.1f} s / {:.1f} s (limit 600 s)",
                      same, a.size(), secs[0], secs[1])};
}

Outcome comm_ordering() {
  const auto cfg = default_config();
  bool ordered = true, upload = true;
  std::string detail;
  for (Owner o : {Owner::V, Owner::L}) {
    const auto enc = fed::encoder_config(cfg, o);
    const auto none = analysis::comm_cost(enc, model::CoLayer::None);
    const auto attn = analysis::comm_cost(enc, model::CoLayer::Attention);
    const auto mlp = analysis::comm_cost(enc, model::CoLayer::Mlp);
    const auto blocks = analysis::comm_cost(enc, model::CoLayer::Blocks);
    ordered = ordered && none.download_bytes < attn.download_bytes && attn.download_bytes < mlp.download_bytes &&
              mlp.download_bytes < blocks.download_bytes;
    for (const auto& c : {attn, mlp, blocks}) upload = upload && c.upload_bytes == none.upload_bytes;
    detail += fmt::format("{}{} client download {} < {} < {} < {} B, upload {} B", detail.empty() ? "" : "; ",
                          o == Owner::V ? "vision" : "text", none.download_bytes, attn.download_bytes,
                          mlp.download_bytes, blocks.download_bytes, none.upload_bytes);
  }
  return {ordered && upload, detail};
}

Outcome directional_smoke() {
  const auto base = default_config();
  std::size_t wins = 0;
  double sum_avg = 0, sum_cola = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto avg = base;
    avg.seed = seed;
    const auto cola = as_fedcola(avg);
    const double ra = fed::run_experiment(avg).history.back().r1_sum;
    const double rc = fed::run_experiment(cola).history.back().r1_sum;
    wins += rc >= ra;
    sum_avg += ra;
    sum_cola += rc;
    per_seed += fmt::format("{}{:.2f}/{:.2f}", seed ? " " : "", rc, ra);
  }
  const bool pass = wins >= 3 && sum_cola >= sum_avg;
  return {pass, fmt::format("FedCola >= FedAvg in {}/5 seeds (need 3); mean r1_sum {:.2f} vs {:.2f}; per seed cola/avg: {}",
                            wins, sum_cola / 5, sum_avg / 5, per_seed)};
}

Outcome reductions() {
  const auto cfg = default_config();
  // FedProx mu = 0 against plain local training, client by client.
  const auto ds = fed::make_datasets(cfg);
  const auto clients = fed::make_clients(cfg, ds);
  const auto state = fed::init_state(cfg);
  auto prox_cfg = cfg;
  prox_cfg.aggregator.kind = fed::AggregatorKind::FedProx;
  prox_cfg.trainer.prox_mu = 0.0;
  bool local_same = true;
  for (const auto& c : clients) {
    const auto a = fed::local_train(cfg, ds, c, state, cfg.effective_trainer());
    const auto b = fed::local_train(prox_cfg, ds, c, state, prox_cfg.effective_trainer());
    local_same = local_same && a.parts == b.parts;
  }
  // FedCola with no co-layer and identity omega, end to end.
  auto cola = cfg;
  cola.aggregator.kind = fed::AggregatorKind::FedCola;
  cola.aggregator.omega = agg::OmegaMode::Identity;
  cola.aggregator.co_layer = model::CoLayer::None;
  const auto ra = fed::run_experiment(cfg);
  const auto rc = fed::run_experiment(cola);
  const bool e2e = ra.history == rc.history && ra.models == rc.models;
  return {local_same && e2e, fmt::format("FedProx mu=0 local updates bit-identical on {} clients: {}; "
                                         "FedCola None+Identity metrics and models bit-identical: {}",
                                         clients.size(), local_same, e2e)};
}

}  // namespace

int main() {
  report(1, "gradient correctness", gradient_correctness);
  report(2, "compression exactness", compression_exactness);
  report(3, "gate-zero identity", gate_zero_identity);
  report(4, "aggregation oracle", aggregation_oracle);
  report(5, "omega construction", omega_construction);
  report(6, "shapley", shapley_values);
  report(7, "partitioning", partitioning);
  report(8, "determinism", determinism);
  report(9, "communication ordering", comm_ordering);
  report(10, "directional smoke (soft)", directional_smoke);
  report(11, "reduction identities", reductions);
  fmt::print("{} of 11 criteria passed\n", 11 - failures);
  return failures == 0 ? 0 : 1;
}
