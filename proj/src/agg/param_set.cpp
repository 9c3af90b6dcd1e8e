// SPDX-License-Identifier: Apache-2.0
#include "fedsim/agg/param_set.hpp"

#include <cmath>

#include "fedsim/common/error.hpp"

namespace fedsim::agg {

std::size_t owner_index(Owner o) {
  switch (o) {
    case Owner::V: return 0;
    case Owner::VLv: return 1;
    case Owner::VLl: return 2;
    case Owner::L: return 3;
    case Owner::NonBlock: break;
  }
  throw ContractError("owner NonBlock has no collaboration index");
}

std::string_view to_string(Owner o) {
  switch (o) {
    case Owner::V: return "V";
    case Owner::VLv: return "VLv";
    case Owner::VLl: return "VLl";
    case Owner::L: return "L";
    case Owner::NonBlock: return "NonBlock";
  }
  return "?";
}

Owner owner_from_string(std::string_view name) {
  for (Owner o : {Owner::V, Owner::VLv, Owner::VLl, Owner::L, Owner::NonBlock}) {
    if (to_string(o) == name) return o;
  }
  throw ContractError("unknown owner '" + std::string(name) + "'");
}

void NamedParamSet::add(std::string path, nn::PartTag tag, nn::Tensor value) {
  if (index_.contains(path)) throw ContractError("duplicate parameter path '" + path + "'");
  index_.emplace(path, entries_.size());
  entries_.push_back(ParamEntry{std::move(path), tag, std::move(value)});
}

std::size_t NamedParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

const ParamEntry* NamedParamSet::find(std::string_view path) const {
  auto it = index_.find(path);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

ParamEntry* NamedParamSet::find(std::string_view path) {
  auto it = index_.find(path);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const ParamEntry& NamedParamSet::at(std::string_view path) const {
  if (const ParamEntry* e = find(path)) return *e;
  throw ContractError("no parameter '" + std::string(path) + "'");
}

ParamEntry& NamedParamSet::at(std::string_view path) {
  if (ParamEntry* e = find(path)) return *e;
  throw ContractError("no parameter '" + std::string(path) + "'");
}

bool NamedParamSet::same_layout(const NamedParamSet& other, std::string* why) const {
  const std::size_t n = std::min(entries_.size(), other.entries_.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.path != b.path || a.tag != b.tag || a.value.shape() != b.value.shape()) {
      if (why) *why = a.path == b.path ? a.path : a.path + " vs " + b.path;
      return false;
    }
  }
  if (entries_.size() != other.entries_.size()) {
    if (why) {
      const auto& longer = entries_.size() > n ? entries_ : other.entries_;
      *why = longer[n].path + " (entry count " + std::to_string(entries_.size()) + " vs " +
             std::to_string(other.entries_.size()) + ")";
    }
    return false;
  }
  return true;
}

NamedParamSet NamedParamSet::filtered(const std::function<bool(const ParamEntry&)>& keep) const {
  NamedParamSet out(owner_);
  for (const auto& e : entries_) {
    if (keep(e)) out.add(e.path, e.tag, e.value);
  }
  return out;
}

NamedParamSet zeros_like(const NamedParamSet& s) {
  NamedParamSet out(s.owner());
  for (const auto& e : s) out.add(e.path, e.tag, nn::Tensor::zeros_like(e.value));
  return out;
}

namespace {
void require_layout(const NamedParamSet& a, const NamedParamSet& b, const char* op) {
  std::string why;
  if (!a.same_layout(b, &why)) {
    throw ContractError(std::string(op) + ": parameter layout mismatch at " + why);
  }
}
}  // namespace

NamedParamSet difference(const NamedParamSet& a, const NamedParamSet& b) {
  require_layout(a, b, "difference");
  NamedParamSet out(a.owner());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ea = a.entries()[i];
    nn::Tensor t = ea.value;
    auto tv = t.data();
    auto bv = b.entries()[i].value.data();
    for (std::size_t k = 0; k < tv.size(); ++k) tv[k] -= bv[k];
    out.add(ea.path, ea.tag, std::move(t));
  }
  return out;
}

double max_abs_diff(const NamedParamSet& a, const NamedParamSet& b) {
  require_layout(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto av = a.entries()[i].value.data();
    auto bv = b.entries()[i].value.data();
    for (std::size_t k = 0; k < av.size(); ++k) worst = std::max(worst, std::abs(av[k] - bv[k]));
  }
  return worst;
}

double l2_norm(const NamedParamSet& s) {
  double sq = 0.0;
  for (const auto& e : s) {
    for (double v : e.value.data()) sq += v * v;
  }
  return std::sqrt(sq);
}

}  // namespace fedsim::agg
