// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedsim/model/config.hpp"
#include "fedsim/model/input.hpp"

namespace fedsim::data {

/// Class structure shared by every dataset built from the same
/// `prototype_seed`: class latents, per-position patch decoders and the token
/// decoder.
struct LatentSpace {
  std::uint64_t prototype_seed = 7;
  std::size_t num_classes = 8;
  std::size_t latent_dim = 8;
  /// Norm scale of the class latents; larger separates classes further.
  double class_scale = 1.0;
  std::size_t patch_dim = 12;
  std::size_t vision_seq = 6;
  std::size_t vocab = 40;
  std::size_t text_seq = 10;

  void validate() const;

  friend bool operator==(const LatentSpace&, const LatentSpace&) = default;
};

struct SampleSpec {
  std::size_t per_class = 10;
  /// Std-dev of latent and observation noise.
  double noise = 0.1;
  /// Strength of a dataset-specific perturbation of the decoders.
  double shift = 0.0;
  /// Picks the shift direction; train and test splits of one dataset share it.
  std::uint64_t shift_seed = 0;
  std::uint64_t seed = 0;
};

/// Labeled sequences of one modality. Vision rows are [seq, patch_dim] patch
/// vectors, text rows are [seq] token ids.
struct LabeledSet {
  model::Modality modality = model::Modality::Vision;
  std::size_t num_classes = 0;
  std::size_t seq = 0;
  std::size_t patch_dim = 0;
  std::vector<double> patches;
  std::vector<int> tokens;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  model::InputBatch batch(std::span<const std::size_t> rows) const;
  model::InputBatch all() const;
};

/// Image-text pairs; pair i is (vision row i, text row i), both generated from
/// the same latent draw of class latent_class[i].
struct PairedSet {
  LabeledSet vision;
  LabeledSet text;

  std::size_t size() const { return vision.size(); }
  const std::vector<int>& latent_class() const { return vision.labels; }
};

LabeledSet gen_unimodal(const LatentSpace& space, model::Modality modality, const SampleSpec& spec);
PairedSet gen_paired(const LatentSpace& space, const SampleSpec& spec);

/// Noise-free vision sequence of class `c` for the unshifted decoder,
/// flattened [seq * patch_dim].
std::vector<double> vision_class_mean(const LatentSpace& space, std::size_t c);

}  // namespace fedsim::data
