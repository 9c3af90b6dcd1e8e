// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace fedsim {

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t mix64(std::uint64_t x);

/// Counter-based random stream.
///
/// Every draw is a pure function of (key, counter), and keys are derived by
/// hashing a purpose label into the parent key. Two streams built from the same
/// labels and seed produce identical sequences no matter which thread or in
/// which order they are consumed, which is what makes parallel client sessions
/// reproducible.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view label);

  [[nodiscard]] Rng split(std::string_view label) const;
  [[nodiscard]] Rng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in (0, 1], safe for log().
  double uniform_open();
  double normal();
  /// Gamma(shape, 1); returns log of the draw so tiny shapes do not underflow.
  double log_gamma_draw(double shape);
  std::size_t below(std::size_t n);
  std::vector<double> dirichlet(std::size_t k, double alpha);
  std::size_t categorical(std::span<const double> probs);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t key() const { return key_; }

 private:
  explicit Rng(std::uint64_t key) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace fedsim
