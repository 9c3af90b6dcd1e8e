// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace fedsim::cli {

inline constexpr const char* kToolVersion = "0.3.0";

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct CommonOptions {
  std::string config;
  std::string out;
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

/// Runs one experiment and writes metrics.csv, summary.json, manifest.json,
/// config.json and final.fmfc into the output directory.
int cmd_run(const CommonOptions& opts, std::ostream& out, std::ostream& err);

/// One row per run directory: label, final r1_sum, accuracies and traffic.
/// Writes compare.csv to `csv_path` when non-empty.
int cmd_compare(const std::vector<std::string>& run_dirs, const std::string& csv_path, std::ostream& out,
                std::ostream& err);

/// One run per coalition of `players`; writes shapley.json and coalitions.csv.
int cmd_shapley(const CommonOptions& opts, const std::vector<std::string>& players, std::ostream& out,
                std::ostream& err);

/// Client x class count matrices for every training partition.
int cmd_partition_report(const CommonOptions& opts, std::ostream& out, std::ostream& err);

int cmd_validate(const CommonOptions& opts, std::ostream& out, std::ostream& err);

int cmd_grad_check(std::uint64_t seed, std::ostream& out, std::ostream& err);

/// Full command line: `fedsim <verb> [flags]`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fedsim::cli
