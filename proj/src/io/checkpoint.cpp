// SPDX-License-Identifier: Apache-2.0
#include "fedsim/io/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fedsim/common/error.hpp"
#include "json.hpp"

namespace fedsim::io {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& at) {
  if (at + sizeof(T) > in.size()) throw ContractError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

}  // namespace

std::string encode_checkpoint(const std::vector<agg::NamedParamSet>& sets) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const auto& set = sets[k];
    for (const auto& e : set) {
      tensors.push_back({{"set", k},
                         {"path", e.path},
                         {"part_tag", nn::to_string(e.tag)},
                         {"owner", agg::to_string(set.owner())},
                         {"shape", e.value.shape()},
                         {"offset", offset}});
      offset += e.value.numel() * sizeof(double);
    }
  }
  const std::string manifest = json{{"tensors", tensors}}.dump();
  std::string out(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, manifest.size());
  out += manifest;
  for (const auto& set : sets) {
    for (const auto& e : set) {
      for (double v : e.value.data()) put<double>(out, v);
    }
  }
  return out;
}

std::vector<agg::NamedParamSet> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw ContractError("not a checkpoint (bad magic)");
  }
  std::size_t at = 4;
  const auto version = take<std::uint32_t>(bytes, at);
  if (version != kCheckpointVersion) {
    throw ContractError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = take<std::uint64_t>(bytes, at);
  if (len > bytes.size() - at) throw ContractError("checkpoint manifest truncated");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(at, len));
  } catch (const json::exception& e) {
    throw ContractError(std::string("checkpoint manifest is not JSON: ") + e.what());
  }
  const std::size_t payload = at + len;

  std::vector<agg::NamedParamSet> sets;
  try {
    for (const auto& d : manifest.at("tensors")) {
      const agg::Owner owner = agg::owner_from_string(d.at("owner").get<std::string>());
      const auto set = d.at("set").get<std::size_t>();
      if (set == sets.size()) {
        sets.emplace_back(owner);
      } else if (set + 1 != sets.size() || sets.back().owner() != owner) {
        throw ContractError("checkpoint tensor sets are out of order");
      }
      const nn::Shape shape = d.at("shape").get<nn::Shape>();
      const std::size_t n = nn::numel_of(shape);
      std::size_t pos = payload + d.at("offset").get<std::size_t>();
      if (pos > bytes.size() || n > (bytes.size() - pos) / sizeof(double)) {
        throw ContractError("checkpoint payload truncated at " + d.at("path").get<std::string>());
      }
      std::vector<double> values(n);
      for (double& v : values) v = take<double>(bytes, pos);
      sets.back().add(d.at("path").get<std::string>(), nn::part_tag_from_string(d.at("part_tag").get<std::string>()),
                      nn::Tensor(shape, std::move(values)));
    }
  } catch (const json::exception& e) {
    throw ContractError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return sets;
}

void save_checkpoint(const std::string& path, const std::vector<agg::NamedParamSet>& sets) {
  const std::string bytes = encode_checkpoint(sets);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to checkpoint '" + path + "'");
}

std::vector<agg::NamedParamSet> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace fedsim::io
