// SPDX-License-Identifier: Apache-2.0
#include "fedsim/agg/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "fedsim/common/error.hpp"

namespace fedsim::agg {

using nn::PartTag;
using nn::Tensor;

std::string_view to_string(ClientKind k) {
  switch (k) {
    case ClientKind::V: return "V";
    case ClientKind::L: return "L";
    case ClientKind::VL: return "VL";
  }
  return "?";
}

const NamedParamSet* ClientUpdate::part(Owner owner) const {
  for (const auto& p : parts) {
    if (p.owner() == owner) return &p;
  }
  return nullptr;
}

namespace {

// acc += c * x, or acc = c * x when acc has not been written yet. Starting from
// the first term instead of zero keeps c == 1 bit-exact (including -0.0).
void axpy(Tensor& acc, bool& started, double c, const Tensor& x) {
  auto a = acc.data();
  auto b = x.data();
  if (!started) {
    if (c == 1.0) {
      acc = x;
    } else {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = c * b[i];
    }
    started = true;
    return;
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += c * b[i];
}

struct Weighted {
  const NamedParamSet* set;
  double weight;
};

NamedParamSet weighted_sum(const std::vector<Weighted>& terms, const std::function<bool(const ParamEntry&)>& keep) {
  const NamedParamSet& first = *terms.front().set;
  NamedParamSet out(first.owner());
  for (const auto& e : first) {
    if (!keep(e)) continue;
    Tensor acc(e.value.shape());
    bool started = false;
    for (const auto& t : terms) {
      axpy(acc, started, t.weight, t.set->at(e.path).value);
    }
    out.add(e.path, e.tag, std::move(acc));
  }
  return out;
}

std::vector<const ClientUpdate*> sorted_by_id(std::span<const ClientUpdate> updates) {
  std::vector<const ClientUpdate*> out;
  for (const auto& u : updates) out.push_back(&u);
  std::stable_sort(out.begin(), out.end(),
                   [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });
  return out;
}

void check_layout(const NamedParamSet& ref, const NamedParamSet& other, std::size_t client) {
  std::string why;
  if (!ref.same_layout(other, &why)) {
    throw ContractError("client " + std::to_string(client) + " update does not match: " + why);
  }
}

bool keep_all(const ParamEntry&) { return true; }

}  // namespace

NamedParamSet uni_aggregate(std::span<const ClientUpdate> updates, Owner owner) {
  std::vector<Weighted> terms;
  double total = 0.0;
  for (const ClientUpdate* u : sorted_by_id(updates)) {
    const NamedParamSet* part = u->part(owner);
    if (part == nullptr) continue;
    if (u->n < 1) throw ContractError("client " + std::to_string(u->client_id) + " reports n = 0");
    if (!terms.empty()) check_layout(*terms.front().set, *part, u->client_id);
    terms.push_back({part, static_cast<double>(u->n)});
    total += static_cast<double>(u->n);
  }
  if (terms.empty()) {
    throw ContractError("uni_aggregate: no updates for owner " + std::string(to_string(owner)));
  }
  for (auto& t : terms) t.weight /= total;
  return weighted_sum(terms, keep_all);
}

OwnerSets aggregate_by_owner(std::span<const ClientUpdate> updates, const OwnerSets& layout) {
  OwnerSets out;
  for (Owner o : kOwners) {
    const bool present = std::any_of(updates.begin(), updates.end(),
                                     [&](const ClientUpdate& u) { return u.part(o) != nullptr; });
    const std::size_t i = owner_index(o);
    out[i] = present ? uni_aggregate(updates, o) : zeros_like(layout[i]);
    out[i].set_owner(o);
  }
  return out;
}

SampleCounts count_samples(std::span<const ClientUpdate> updates) {
  SampleCounts c;
  for (const auto& u : updates) {
    const double n = static_cast<double>(u.n);
    switch (u.kind) {
      case ClientKind::V: c.n_v += n; break;
      case ClientKind::L: c.n_l += n; break;
      case ClientKind::VL: c.n_vl += n; break;
    }
  }
  return c;
}

std::string_view to_string(OmegaMode m) {
  switch (m) {
    case OmegaMode::Identity: return "identity";
    case OmegaMode::InModalCollab: return "in_modal";
    case OmegaMode::InModalCollabCompensated: return "compensated";
    case OmegaMode::AllCollab: return "all";
    case OmegaMode::Custom: return "custom";
  }
  return "?";
}

OmegaMode omega_mode_from_string(std::string_view name) {
  for (auto m : {OmegaMode::Identity, OmegaMode::InModalCollab, OmegaMode::InModalCollabCompensated,
                 OmegaMode::AllCollab, OmegaMode::Custom}) {
    if (name == to_string(m)) return m;
  }
  throw ContractError("unknown omega mode '" + std::string(name) +
                      "' (expected identity, in_modal, compensated, all or custom)");
}

Matrix4 identity4() {
  Matrix4 m{};
  for (std::size_t i = 0; i < 4; ++i) m[i][i] = 1.0;
  return m;
}

namespace {

// Row `i` = weights / denom, or the identity row when nobody contributes.
std::array<double, 4> mix_row(std::size_t i, std::array<double, 4> weights, double denom) {
  std::array<double, 4> row{};
  if (denom == 0.0) {
    row[i] = 1.0;
    return row;
  }
  for (std::size_t j = 0; j < 4; ++j) row[j] = weights[j] / denom;
  return row;
}

}  // namespace

OmegaSpec build_omega(const SampleCounts& c, OmegaMode mode) {
  for (double n : {c.n_v, c.n_l, c.n_vl}) {
    if (!(n >= 0.0) || !std::isfinite(n)) throw ContractError("sample counts must be finite and >= 0");
  }
  if (c.n_v + c.n_l + c.n_vl == 0.0) throw ContractError("build_omega: all sample counts are zero");
  OmegaSpec s;
  s.mode = mode;
  const std::array<double, 4> vis{c.n_v, c.n_vl, 0, 0};
  const std::array<double, 4> txt{0, 0, c.n_vl, c.n_l};
  const double n_vis = c.n_v + c.n_vl;
  const double n_txt = c.n_vl + c.n_l;
  switch (mode) {
    case OmegaMode::Identity:
      break;
    case OmegaMode::InModalCollab:
      s.attn = {mix_row(0, vis, n_vis), mix_row(1, vis, n_vis), mix_row(2, txt, n_txt), mix_row(3, txt, n_txt)};
      break;
    case OmegaMode::InModalCollabCompensated: {
      const double all = c.n_v + c.n_vl + c.n_l;
      s.attn = {mix_row(0, vis, n_vis), mix_row(1, vis, all), mix_row(2, txt, all), mix_row(3, txt, n_txt)};
      s.others = Matrix4{};
      for (std::size_t i = 0; i < 4; ++i) s.others[i][i] = s.attn[i][i];
      break;
    }
    case OmegaMode::AllCollab: {
      // No multi-modal model to bridge the modalities: plain FedAvg.
      if (c.n_vl == 0.0) break;
      const std::array<double, 4> w{c.n_v, c.n_vl, c.n_vl, c.n_l};
      const double denom = c.n_v + 2.0 * c.n_vl + c.n_l;
      for (std::size_t i = 0; i < 4; ++i) s.attn[i] = mix_row(i, w, denom);
      break;
    }
    case OmegaMode::Custom:
      throw ContractError("custom omega needs explicit tables; use custom_omega()");
  }
  // Owners without selected clients this round take no collaborative share.
  const std::array<double, 4> owner_n{c.n_v, c.n_vl, c.n_vl, c.n_l};
  for (std::size_t i = 0; i < 4; ++i) {
    if (owner_n[i] != 0.0) continue;
    s.attn[i] = mix_row(i, {}, 0.0);
    s.others[i] = mix_row(i, {}, 0.0);
  }
  return s;
}

OmegaSpec custom_omega(const Matrix4& attn, const Matrix4& others) {
  for (const auto* m : {&attn, &others}) {
    for (const auto& row : *m) {
      for (double v : row) {
        if (!std::isfinite(v) || v < 0.0) throw ContractError("custom omega entries must be finite and >= 0");
      }
    }
  }
  return OmegaSpec{OmegaMode::Custom, attn, others};
}

std::string_view to_string(NormPolicy p) { return p == NormPolicy::Others ? "others" : "identity"; }

NormPolicy norm_policy_from_string(std::string_view name) {
  if (name == "others") return NormPolicy::Others;
  if (name == "identity") return NormPolicy::Identity;
  throw ContractError("unknown norm policy '" + std::string(name) + "' (expected others or identity)");
}

OwnerSets apply_collaboration(const OwnerSets& uni, const OmegaSpec& omega, NormPolicy norms) {
  for (Owner o : kOwners) {
    if (uni[owner_index(o)].owner() != o) {
      throw ContractError("apply_collaboration: slot " + std::string(to_string(o)) + " holds owner " +
                          std::string(to_string(uni[owner_index(o)].owner())));
    }
  }
  const Matrix4 ident = identity4();
  OwnerSets out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = NamedParamSet(uni[i].owner());
    for (const auto& e : uni[i]) {
      const Matrix4* table = nullptr;
      if (e.tag == PartTag::Attention) {
        table = &omega.attn;
      } else if (e.tag == PartTag::Mlp) {
        table = &omega.others;
      } else if (e.tag == PartTag::Norm) {
        table = norms == NormPolicy::Others ? &omega.others : &ident;
      }
      if (table == nullptr) {
        out[i].add(e.path, e.tag, e.value);
        continue;
      }
      Tensor acc(e.value.shape());
      bool started = false;
      for (std::size_t j = 0; j < 4; ++j) {
        const double c = (*table)[i][j];
        if (c == 0.0) continue;
        const ParamEntry* src = uni[j].find(e.path);
        if (src == nullptr || src->value.shape() != e.value.shape() || src->tag != e.tag) {
          throw ContractError("apply_collaboration: owner " + std::string(to_string(uni[j].owner())) +
                              " has no compatible " + e.path);
        }
        axpy(acc, started, c, src->value);
      }
      out[i].add(e.path, e.tag, std::move(acc));
    }
  }
  return out;
}

OwnerSets fediot_aggregate(std::span<const ClientUpdate> updates, const OwnerSets& layout) {
  if (updates.empty()) throw ContractError("fediot_aggregate: no updates");
  OwnerSets out = aggregate_by_owner(updates, layout);

  struct Side {
    Owner uni;
    Owner multi;
  };
  for (Side side : {Side{Owner::V, Owner::VLv}, Side{Owner::L, Owner::VLl}}) {
    std::vector<Weighted> terms;
    double total = 0.0;
    for (const ClientUpdate* u : sorted_by_id(updates)) {
      const bool multi = u->kind == ClientKind::VL;
      const NamedParamSet* part = u->part(multi ? side.multi : side.uni);
      if (part == nullptr) continue;
      const double w = (multi ? kFedIoTFactor : 1.0) * static_cast<double>(u->n);
      terms.push_back({part, w});
      total += w;
    }
    if (terms.empty()) continue;
    for (auto& t : terms) t.weight /= total;
    const NamedParamSet blocks =
        weighted_sum(terms, [](const ParamEntry& e) { return nn::is_block_tag(e.tag); });
    for (Owner o : {side.uni, side.multi}) {
      for (auto& e : out[owner_index(o)]) {
        if (!nn::is_block_tag(e.tag)) continue;
        const ParamEntry& b = blocks.at(e.path);
        if (b.value.shape() != e.value.shape()) {
          throw ContractError("fediot_aggregate: block shape mismatch at " + e.path);
        }
        e.value = b.value;
      }
    }
  }
  return out;
}

NamedParamSet global_update(const NamedParamSet& model, const NamedParamSet& delta) {
  std::string why;
  if (!model.same_layout(delta, &why)) throw ContractError("global_update: " + why);
  NamedParamSet out(model.owner());
  auto it = delta.begin();
  for (const auto& e : model) {
    Tensor v = e.value;
    auto a = v.data();
    auto b = it->value.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    out.add(e.path, e.tag, std::move(v));
    ++it;
  }
  return out;
}

OmegaReport validate_omega(const OmegaSpec& omega) {
  OmegaReport r;
  for (const auto* m : {&omega.attn, &omega.others}) {
    for (const auto& row : *m) {
      for (double v : row) {
        if (!(v >= 0.0)) r.nonnegative = false;
      }
    }
  }
  if (!r.nonnegative) r.notes.emplace_back("negative or NaN coefficient");

  const bool convex_rows = omega.mode == OmegaMode::Identity || omega.mode == OmegaMode::InModalCollab ||
                           omega.mode == OmegaMode::AllCollab;
  if (convex_rows) {
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (double v : omega.attn[i]) s += v;
      if (std::abs(s - 1.0) > 1e-12) {
        r.rows_sum_to_one = false;
        r.notes.push_back("attn row " + std::to_string(i) + " sums to " + std::to_string(s));
      }
    }
  }
  if (omega.mode == OmegaMode::InModalCollabCompensated) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (omega.others[i][i] != omega.attn[i][i]) {
        r.compensation_coherent = false;
        r.notes.push_back("others diagonal differs from attn self-coefficient for owner " + std::to_string(i));
      }
    }
  }

  r.attn_symmetric = true;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) {
      if (omega.attn[i][j] != omega.attn[j][i]) r.attn_symmetric = false;
    }
  }
  if (r.attn_symmetric) {
    Eigen::Matrix4d m;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) m(i, j) = omega.attn[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> solver(m, Eigen::EigenvaluesOnly);
    r.min_eigenvalue = solver.eigenvalues().minCoeff();
    r.eigen_nonnegative = r.min_eigenvalue >= -1e-12;
    if (!r.eigen_nonnegative) r.notes.push_back("attn matrix has a negative eigenvalue");
  } else {
    r.notes.emplace_back("attn matrix is not symmetric; eigenvalue check skipped");
  }
  return r;
}

}  // namespace fedsim::agg
