// SPDX-License-Identifier: Apache-2.0
#include "fedsim/data/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedsim/common/error.hpp"
#include "fedsim/common/rng.hpp"

namespace fedsim::data {

std::size_t Partition::total() const {
  std::size_t n = 0;
  for (const auto& a : assignment) n += a.size();
  return n;
}

std::vector<std::size_t> Partition::sizes() const {
  std::vector<std::size_t> out;
  for (const auto& a : assignment) out.push_back(a.size());
  return out;
}

namespace {

// Floors of total*share, then the leftover units go to the largest fractional
// parts; equal fractions favour the lower client id.
std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& shares) {
  const std::size_t k = shares.size();
  std::vector<std::size_t> counts(k);
  std::vector<double> frac(k);
  std::size_t used = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = static_cast<double>(total) * shares[i];
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - std::floor(exact);
    used += counts[i];
  }
  // Rounding of the shares can overshoot by a unit in pathological cases.
  while (used > total) {
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --used;
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; used < total; i = (i + 1) % k, ++used) ++counts[order[i]];
  return counts;
}

void check_clients(std::size_t n_clients, std::size_t n_samples) {
  if (n_clients < 1) throw ContractError("partition needs at least one client");
  if (n_clients > n_samples) {
    throw ContractError("cannot split " + std::to_string(n_samples) + " samples over " +
                        std::to_string(n_clients) + " clients");
  }
}

}  // namespace

Partition dirichlet_partition(std::span<const int> labels, std::size_t n_clients, double alpha,
                              std::uint64_t seed) {
  check_clients(n_clients, labels.size());
  if (!(alpha > 0.0)) throw ContractError("Dirichlet alpha must be positive");
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw ContractError("negative class label");
    max_label = std::max(max_label, l);
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  Rng root(seed, "dirichlet_partition");
  Partition p;
  p.alpha = alpha;
  p.assignment.resize(n_clients);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    Rng rng = root.split(c);
    rng.shuffle(std::span<std::size_t>(idx));
    const auto counts = largest_remainder(idx.size(), rng.dirichlet(n_clients, alpha));
    std::size_t at = 0;
    for (std::size_t k = 0; k < n_clients; ++k) {
      p.assignment[k].insert(p.assignment[k].end(), idx.begin() + static_cast<std::ptrdiff_t>(at),
                             idx.begin() + static_cast<std::ptrdiff_t>(at + counts[k]));
      at += counts[k];
    }
  }
  for (auto& a : p.assignment) std::sort(a.begin(), a.end());

  for (std::size_t k = 0; k < n_clients; ++k) {
    if (!p.assignment[k].empty()) continue;
    std::size_t donor = 0;
    for (std::size_t j = 1; j < n_clients; ++j) {
      if (p.assignment[j].size() > p.assignment[donor].size()) donor = j;
    }
    p.assignment[k].push_back(p.assignment[donor].back());
    p.assignment[donor].pop_back();
  }
  return p;
}

Partition size_partition(std::size_t n_samples, std::size_t n_clients, double skew, std::uint64_t seed) {
  check_clients(n_clients, n_samples);
  if (!(skew > 0.0)) throw ContractError("size skew must be positive");
  Rng root(seed, "size_partition");
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = root.split("shuffle");
  shuffle_rng.shuffle(std::span<std::size_t>(order));

  Rng share_rng = root.split("shares");
  auto sizes = largest_remainder(n_samples - n_clients, share_rng.dirichlet(n_clients, skew));
  Partition p;
  p.alpha = skew;
  p.assignment.resize(n_clients);
  std::size_t at = 0;
  for (std::size_t k = 0; k < n_clients; ++k) {
    const std::size_t n = sizes[k] + 1;
    p.assignment[k].assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                           order.begin() + static_cast<std::ptrdiff_t>(at + n));
    std::sort(p.assignment[k].begin(), p.assignment[k].end());
    at += n;
  }
  return p;
}

std::vector<std::vector<std::size_t>> class_histogram(const Partition& p, std::span<const int> labels,
                                                      std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> out(p.clients(), std::vector<std::size_t>(num_classes));
  for (std::size_t k = 0; k < p.clients(); ++k) {
    for (std::size_t i : p.assignment[k]) {
      const int l = labels[i];
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw ContractError("label out of range");
      ++out[k][static_cast<std::size_t>(l)];
    }
  }
  return out;
}

}  // namespace fedsim::data
