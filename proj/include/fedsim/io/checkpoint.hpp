// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/agg/param_set.hpp"

namespace fedsim::io {

inline constexpr char kCheckpointMagic[4] = {'F', 'M', 'F', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: magic "FMFC", u32 version, u64 manifest length, manifest JSON
/// (ordered tensor descriptors: path, part_tag, owner, shape, offset), then the
/// little-endian f64 payloads in descriptor order. Offsets are relative to the
/// payload start.
std::string encode_checkpoint(const std::vector<agg::NamedParamSet>& sets);
std::vector<agg::NamedParamSet> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const std::vector<agg::NamedParamSet>& sets);
std::vector<agg::NamedParamSet> load_checkpoint(const std::string& path);

}  // namespace fedsim::io
