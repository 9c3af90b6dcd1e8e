// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/agg/param_set.hpp"

namespace fedsim::agg {

enum class ClientKind { V, L, VL };

std::string_view to_string(ClientKind k);

/// One client's upload: the delta of every model it trained. Uni-modal clients
/// carry one part (owner V or L), multi-modal clients two (VLv and VLl).
struct ClientUpdate {
  std::size_t client_id = 0;
  ClientKind kind = ClientKind::V;
  std::size_t n = 0;
  std::size_t round = 0;
  std::vector<NamedParamSet> parts;

  const NamedParamSet* part(Owner owner) const;
};

/// Indexed by owner_index(): V, VLv, VLl, L.
using OwnerSets = std::array<NamedParamSet, 4>;

/// Sum_i (n_i / n_M) * delta_i over the updates carrying a part for `owner`.
/// Updates are combined in ascending client_id order, so the result does not
/// depend on the order of `updates`.
NamedParamSet uni_aggregate(std::span<const ClientUpdate> updates, Owner owner);

/// Per-owner uni-aggregation; owners without updates get zeros shaped like
/// `layout`.
OwnerSets aggregate_by_owner(std::span<const ClientUpdate> updates, const OwnerSets& layout);

struct SampleCounts {
  double n_v = 0;
  double n_l = 0;
  double n_vl = 0;
};

SampleCounts count_samples(std::span<const ClientUpdate> updates);

enum class OmegaMode { Identity, InModalCollab, InModalCollabCompensated, AllCollab, Custom };

std::string_view to_string(OmegaMode m);
OmegaMode omega_mode_from_string(std::string_view name);

using Matrix4 = std::array<std::array<double, 4>, 4>;

Matrix4 identity4();

/// Row i gives the coefficients owner i applies to every owner's aggregated
/// delta. Attention parameters use `attn`, other block parameters `others`.
struct OmegaSpec {
  OmegaMode mode = OmegaMode::Identity;
  Matrix4 attn = identity4();
  Matrix4 others = identity4();
};

OmegaSpec build_omega(const SampleCounts& counts, OmegaMode mode);
/// Custom tables; entries must be finite and nonnegative.
OmegaSpec custom_omega(const Matrix4& attn, const Matrix4& others);

/// How layer-norm parameters inside blocks are mixed.
enum class NormPolicy { Others, Identity };

std::string_view to_string(NormPolicy p);
NormPolicy norm_policy_from_string(std::string_view name);

/// Mixes block parameters across owners. Embedding and head parameters pass
/// through. Zero coefficients are skipped, so identity rows return their
/// input bit-for-bit.
OwnerSets apply_collaboration(const OwnerSets& uni, const OmegaSpec& omega,
                              NormPolicy norms = NormPolicy::Others);

/// Block weight given to multi-modal clients relative to their sample count.
inline constexpr double kFedIoTFactor = 100.0;

/// Block parameters are averaged per modality over uni-modal and multi-modal
/// clients together, the latter weighted kFedIoTFactor * n_i, and the result
/// goes to both owners of that modality. Other parameters are uni-aggregated.
OwnerSets fediot_aggregate(std::span<const ClientUpdate> updates, const OwnerSets& layout);

/// model + delta.
NamedParamSet global_update(const NamedParamSet& model, const NamedParamSet& delta);

struct OmegaReport {
  bool nonnegative = true;
  /// Every attention row with a nonzero entry sums to 1 (checked for the
  /// modes that promise it).
  bool rows_sum_to_one = true;
  /// others[i][i] == attn[i][i] for every owner (compensated mode).
  bool compensation_coherent = true;
  bool attn_symmetric = false;
  /// Only meaningful when attn_symmetric.
  bool eigen_nonnegative = true;
  double min_eigenvalue = 0.0;
  std::vector<std::string> notes;

  bool ok() const { return nonnegative && rows_sum_to_one && compensation_coherent && eigen_nonnegative; }
};

OmegaReport validate_omega(const OmegaSpec& omega);

}  // namespace fedsim::agg
