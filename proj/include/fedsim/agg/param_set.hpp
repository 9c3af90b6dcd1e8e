// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/nn/param.hpp"
#include "fedsim/nn/tensor.hpp"

namespace fedsim::agg {

/// Model owner on the server: the vision-only model, the two halves of the
/// multi-modal model, and the text-only model. The first four are the rows
/// and columns of the collaboration matrix, in this order.
enum class Owner { V, VLv, VLl, L, NonBlock };

inline constexpr std::array<Owner, 4> kOwners{Owner::V, Owner::VLv, Owner::VLl, Owner::L};

std::size_t owner_index(Owner o);
std::string_view to_string(Owner o);
Owner owner_from_string(std::string_view name);

struct ParamEntry {
  std::string path;
  nn::PartTag tag;
  nn::Tensor value;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

/// Ordered path -> tensor map. Order is insertion order and is the canonical
/// serialization order.
class NamedParamSet {
 public:
  NamedParamSet() = default;
  explicit NamedParamSet(Owner owner) : owner_(owner) {}

  Owner owner() const { return owner_; }
  void set_owner(Owner o) { owner_ = o; }

  void add(std::string path, nn::PartTag tag, nn::Tensor value);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t numel() const;

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>::iterator begin() { return entries_.begin(); }
  std::vector<ParamEntry>::iterator end() { return entries_.end(); }
  std::vector<ParamEntry>::const_iterator begin() const { return entries_.begin(); }
  std::vector<ParamEntry>::const_iterator end() const { return entries_.end(); }

  const ParamEntry* find(std::string_view path) const;
  ParamEntry* find(std::string_view path);
  const ParamEntry& at(std::string_view path) const;
  ParamEntry& at(std::string_view path);

  /// Same paths, tags and shapes in the same order. On mismatch the first
  /// offending path (or a description) is written to `why`.
  bool same_layout(const NamedParamSet& other, std::string* why = nullptr) const;

  /// Entries satisfying `keep`, in order.
  NamedParamSet filtered(const std::function<bool(const ParamEntry&)>& keep) const;

  friend bool operator==(const NamedParamSet& a, const NamedParamSet& b) {
    return a.owner_ == b.owner_ && a.entries_ == b.entries_;
  }

 private:
  Owner owner_ = Owner::NonBlock;
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

NamedParamSet zeros_like(const NamedParamSet& s);
/// a - b, entry by entry. Layouts must match.
NamedParamSet difference(const NamedParamSet& a, const NamedParamSet& b);
/// Maximum absolute elementwise difference; layouts must match.
double max_abs_diff(const NamedParamSet& a, const NamedParamSet& b);
double l2_norm(const NamedParamSet& s);

}  // namespace fedsim::agg
