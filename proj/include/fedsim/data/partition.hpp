// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fedsim::data {

struct Partition {
  /// assignment[k] = sample indices held by client k, ascending.
  std::vector<std::vector<std::size_t>> assignment;
  /// Dirichlet concentration (label mode) or size skew (size mode).
  double alpha = 0.0;

  std::size_t clients() const { return assignment.size(); }
  std::size_t total() const;
  std::vector<std::size_t> sizes() const;
};

/// Per class, client shares ~ Dirichlet(alpha), converted to counts by
/// largest-remainder rounding (ties to the lowest client id). Clients left
/// empty take one sample from the currently largest client.
Partition dirichlet_partition(std::span<const int> labels, std::size_t n_clients, double alpha,
                              std::uint64_t seed);

/// Client sizes ~ Dirichlet(skew) over the total, each at least 1, filled with
/// contiguous blocks of a shuffled index order.
Partition size_partition(std::size_t n_samples, std::size_t n_clients, double skew,
                         std::uint64_t seed);

/// counts[k][c] = samples of class c on client k.
std::vector<std::vector<std::size_t>> class_histogram(const Partition& p, std::span<const int> labels,
                                                      std::size_t num_classes);

}  // namespace fedsim::data
