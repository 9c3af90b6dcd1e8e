// SPDX-License-Identifier: Apache-2.0
#include "fedsim/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedsim/common/error.hpp"
#include "fedsim/common/rng.hpp"

namespace fedsim::data {

using model::Modality;

void LatentSpace::validate() const {
  if (num_classes < 1) throw ContractError("num_classes must be >= 1");
  if (latent_dim < 1) throw ContractError("latent_dim must be >= 1");
  if (patch_dim < 1 || vision_seq < 1) throw ContractError("vision patch_dim and seq must be >= 1");
  if (vocab < 2 || text_seq < 1) throw ContractError("text vocab must be >= 2 and seq >= 1");
  if (!(class_scale > 0.0)) throw ContractError("class_scale must be positive");
}

namespace {

using Matrix = std::vector<double>;  // row-major

Matrix gaussian(std::size_t n, double scale, Rng rng) {
  Matrix m(n);
  for (double& v : m) v = scale * rng.normal();
  return m;
}

// Decoders for one dataset: the shared prototypes, optionally perturbed by a
// dataset-specific direction.
struct Decoders {
  Matrix class_latents;  // [classes, latent]
  Matrix patch;          // [seq, patch_dim, latent]
  Matrix token;          // [vocab, latent]
};

Decoders make_decoders(const LatentSpace& s, double shift, std::uint64_t shift_seed) {
  s.validate();
  Rng proto(s.prototype_seed, "prototypes");
  const double inv = 1.0 / std::sqrt(static_cast<double>(s.latent_dim));
  Decoders d{
      gaussian(s.num_classes * s.latent_dim, s.class_scale, proto.split("class_latents")),
      gaussian(s.vision_seq * s.patch_dim * s.latent_dim, inv, proto.split("patch_decoder")),
      gaussian(s.vocab * s.latent_dim, 2.0 * inv, proto.split("token_decoder")),
  };
  if (shift != 0.0) {
    Rng perturb(shift_seed, "decoder_shift");
    Rng rp = perturb.split("patch");
    for (double& v : d.patch) v += shift * inv * rp.normal();
    Rng rt = perturb.split("token");
    for (double& v : d.token) v += shift * 2.0 * inv * rt.normal();
  }
  return d;
}

std::vector<double> draw_latent(const LatentSpace& s, const Decoders& d, std::size_t c, double noise,
                                Rng& rng) {
  std::vector<double> u(s.latent_dim);
  for (std::size_t j = 0; j < s.latent_dim; ++j) {
    u[j] = d.class_latents[c * s.latent_dim + j];
    if (noise != 0.0) u[j] += noise * rng.normal();
  }
  return u;
}

void emit_vision(const LatentSpace& s, const Decoders& d, std::span<const double> u, double noise,
                 Rng& rng, std::vector<double>& out) {
  for (std::size_t p = 0; p < s.vision_seq; ++p) {
    for (std::size_t i = 0; i < s.patch_dim; ++i) {
      const double* row = &d.patch[(p * s.patch_dim + i) * s.latent_dim];
      double acc = 0.0;
      for (std::size_t j = 0; j < s.latent_dim; ++j) acc += row[j] * u[j];
      if (noise != 0.0) acc += noise * rng.normal();
      out.push_back(acc);
    }
  }
}

void emit_text(const LatentSpace& s, const Decoders& d, std::span<const double> u, Rng& rng,
               std::vector<int>& out) {
  std::vector<double> probs(s.vocab);
  double mx = -INFINITY;
  for (std::size_t v = 0; v < s.vocab; ++v) {
    double acc = 0.0;
    for (std::size_t j = 0; j < s.latent_dim; ++j) acc += d.token[v * s.latent_dim + j] * u[j];
    probs[v] = acc;
    mx = std::max(mx, acc);
  }
  double total = 0.0;
  for (double& p : probs) total += (p = std::exp(p - mx));
  for (double& p : probs) p /= total;
  for (std::size_t t = 0; t < s.text_seq; ++t) out.push_back(static_cast<int>(rng.categorical(probs)));
}

LabeledSet empty_set(const LatentSpace& s, Modality m) {
  LabeledSet set;
  set.modality = m;
  set.num_classes = s.num_classes;
  set.seq = m == Modality::Vision ? s.vision_seq : s.text_seq;
  set.patch_dim = m == Modality::Vision ? s.patch_dim : 0;
  return set;
}

void check_spec(const SampleSpec& spec) {
  if (spec.per_class < 1) throw ContractError("per_class must be >= 1");
  if (!(spec.noise >= 0.0)) throw ContractError("noise must be >= 0");
  if (!(spec.shift >= 0.0)) throw ContractError("shift must be >= 0");
}

}  // namespace

model::InputBatch LabeledSet::batch(std::span<const std::size_t> rows) const {
  model::InputBatch b;
  b.modality = modality;
  b.batch = rows.size();
  b.seq = seq;
  b.patch_dim = patch_dim;
  if (modality == Modality::Vision) {
    const std::size_t width = seq * patch_dim;
    b.patches.reserve(rows.size() * width);
    for (std::size_t r : rows) {
      if (r >= size()) throw ContractError("row " + std::to_string(r) + " out of range");
      b.patches.insert(b.patches.end(), patches.begin() + static_cast<std::ptrdiff_t>(r * width),
                       patches.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
    }
  } else {
    b.tokens.reserve(rows.size() * seq);
    for (std::size_t r : rows) {
      if (r >= size()) throw ContractError("row " + std::to_string(r) + " out of range");
      b.tokens.insert(b.tokens.end(), tokens.begin() + static_cast<std::ptrdiff_t>(r * seq),
                      tokens.begin() + static_cast<std::ptrdiff_t>((r + 1) * seq));
    }
  }
  return b;
}

model::InputBatch LabeledSet::all() const {
  std::vector<std::size_t> rows(size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return batch(rows);
}

LabeledSet gen_unimodal(const LatentSpace& space, Modality modality, const SampleSpec& spec) {
  check_spec(spec);
  const Decoders d = make_decoders(space, spec.shift, spec.shift_seed);
  LabeledSet set = empty_set(space, modality);
  Rng root(spec.seed, modality == Modality::Vision ? "vision_samples" : "text_samples");
  for (std::size_t c = 0; c < space.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      Rng rng = root.split(c * spec.per_class + i);
      const auto u = draw_latent(space, d, c, spec.noise, rng);
      if (modality == Modality::Vision) {
        emit_vision(space, d, u, spec.noise, rng, set.patches);
      } else {
        emit_text(space, d, u, rng, set.tokens);
      }
      set.labels.push_back(static_cast<int>(c));
    }
  }
  return set;
}

PairedSet gen_paired(const LatentSpace& space, const SampleSpec& spec) {
  check_spec(spec);
  const Decoders d = make_decoders(space, spec.shift, spec.shift_seed);
  PairedSet set{empty_set(space, Modality::Vision), empty_set(space, Modality::Text)};
  Rng root(spec.seed, "paired_samples");
  for (std::size_t c = 0; c < space.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      Rng rng = root.split(c * spec.per_class + i);
      const auto u = draw_latent(space, d, c, spec.noise, rng);
      Rng vr = rng.split("vision");
      Rng tr = rng.split("text");
      emit_vision(space, d, u, spec.noise, vr, set.vision.patches);
      emit_text(space, d, u, tr, set.text.tokens);
      set.vision.labels.push_back(static_cast<int>(c));
      set.text.labels.push_back(static_cast<int>(c));
    }
  }
  return set;
}

std::vector<double> vision_class_mean(const LatentSpace& space, std::size_t c) {
  if (c >= space.num_classes) throw ContractError("class id out of range");
  const Decoders d = make_decoders(space, 0.0, 0);
  Rng unused(0, "unused");
  const auto u = draw_latent(space, d, c, 0.0, unused);
  std::vector<double> out;
  emit_vision(space, d, u, 0.0, unused, out);
  return out;
}

}  // namespace fedsim::data
