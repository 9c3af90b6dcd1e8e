// SPDX-License-Identifier: Apache-2.0
#include "fedsim/cli/commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "CLI11.hpp"
#include "fedsim/analysis/metrics.hpp"
#include "fedsim/common/error.hpp"
#include "fedsim/fed/federation.hpp"
#include "fedsim/io/checkpoint.hpp"
#include "fedsim/io/config_io.hpp"
#include "fedsim/model/grad_suite.hpp"
#include "json.hpp"

namespace fedsim::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("short write to " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

// Loads the config and applies command-line overrides; returns nullopt after
// reporting problems.
std::optional<fed::ExperimentConfig> load(const CommonOptions& opts, std::ostream& err) {
  if (opts.config.empty()) {
    err << "error: --config is required\n";
    return std::nullopt;
  }
  try {
    fed::ExperimentConfig cfg = io::load_config(opts.config);
    if (opts.seed) cfg.seed = *opts.seed;
    if (!opts.out.empty()) cfg.output_dir = opts.out;
    return cfg;
  } catch (const io::ConfigError& e) {
    err << e.what() << "\n";
    return std::nullopt;
  }
}

const char* kMetricsHeader = "round,i2t_r1,t2i_r1,r1_sum,acc_v,acc_l,loss_v,loss_l,loss_vl\n";

std::string metrics_row(const analysis::MetricsRecord& r) {
  return fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.round, r.i2t_r1, r.t2i_r1,
                     r.r1_sum, r.acc_v, r.acc_l, r.loss_v, r.loss_l, r.loss_vl);
}

json metrics_json(const analysis::MetricsRecord& r) {
  return {{"round", r.round},   {"i2t_r1", r.i2t_r1}, {"t2i_r1", r.t2i_r1}, {"r1_sum", r.r1_sum},
          {"acc_v", r.acc_v},   {"acc_l", r.acc_l},   {"loss_v", r.loss_v}, {"loss_l", r.loss_l},
          {"loss_vl", r.loss_vl}};
}

json cost_json(const analysis::CommCost& c) {
  return {{"download_bytes", c.download_bytes}, {"upload_bytes", c.upload_bytes}};
}

json comm_json(const fed::ExperimentConfig& cfg) {
  json table = json::object();
  for (auto v : {model::CoLayer::None, model::CoLayer::Attention, model::CoLayer::Mlp, model::CoLayer::Blocks}) {
    table[std::string(model::to_string(v))] = {
        {"vision_client", cost_json(analysis::comm_cost(fed::encoder_config(cfg, agg::Owner::V), v))},
        {"text_client", cost_json(analysis::comm_cost(fed::encoder_config(cfg, agg::Owner::L), v))}};
  }
  const auto used = cfg.aggregator.co_layer;
  return {{"variant", model::to_string(used)},
          {"vision_client", cost_json(analysis::comm_cost(fed::encoder_config(cfg, agg::Owner::V), used))},
          {"text_client", cost_json(analysis::comm_cost(fed::encoder_config(cfg, agg::Owner::L), used))},
          {"by_variant", table}};
}

enum class PlayerKind { Vision, Text, Multimodal };

std::optional<PlayerKind> player_kind(const std::string& label) {
  if (label == "img" || label == "image" || label == "vision") return PlayerKind::Vision;
  if (label == "txt" || label == "text") return PlayerKind::Text;
  if (label == "vl" || label == "multimodal" || label == "paired") return PlayerKind::Multimodal;
  return std::nullopt;
}

}  // namespace

int cmd_run(const CommonOptions& opts, std::ostream& out, std::ostream& err) {
  auto cfg_opt = load(opts, err);
  if (!cfg_opt) return kExitUsage;
  const fed::ExperimentConfig& cfg = *cfg_opt;
  const fs::path dir = cfg.output_dir;
  const std::string hash = io::config_hash(cfg);
  const std::string started = utc_now();
  try {
    fs::create_directories(dir);
    write_file(dir / "config.json", io::to_canonical_json(cfg));
    std::ofstream metrics(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
    metrics << kMetricsHeader;
    const fed::GlobalState state = fed::run_experiment(cfg, opts.workers, [&](const analysis::MetricsRecord& r) {
      metrics << metrics_row(r);
      metrics.flush();
      if (!opts.quiet) {
        fmt::print(out, "round {:>3}  r1_sum {:7.2f}  acc_v {:6.2f}  acc_l {:6.2f}  loss_vl {:.4f}\n", r.round,
                   r.r1_sum, r.acc_v, r.acc_l, r.loss_vl);
      }
    });
    metrics.close();
    io::save_checkpoint((dir / "final.fmfc").string(),
                        std::vector<agg::NamedParamSet>(state.models.begin(), state.models.end()));
    json summary = {{"label", cfg.label},
                    {"aggregator",
                     {{"kind", fed::to_string(cfg.aggregator.kind)},
                      {"omega", agg::to_string(cfg.aggregator.omega)},
                      {"co_layer", model::to_string(cfg.aggregator.co_layer)}}},
                    {"config_hash", hash},
                    {"seed", cfg.seed},
                    {"rounds", cfg.rounds},
                    {"final", metrics_json(state.history.back())},
                    {"comm_cost", comm_json(cfg)}};
    write_file(dir / "summary.json", summary.dump(2) + "\n");
    json manifest = {{"config_hash", hash},
                     {"tool_version", kToolVersion},
                     {"started_at", started},
                     {"finished_at", utc_now()},
                     {"config", "config.json"},
                     {"metrics", "metrics.csv"},
                     {"summary", "summary.json"},
                     {"checkpoint", "final.fmfc"}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    if (!opts.quiet) fmt::print(out, "wrote {}\n", dir.string());
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_compare(const std::vector<std::string>& run_dirs, const std::string& csv_path, std::ostream& out,
                std::ostream& err) {
  if (run_dirs.size() < 2) {
    err << "usage: fedsim compare <run-dir> <run-dir> [...]\n";
    return kExitUsage;
  }
  struct Row {
    std::string label, kind;
    double r1_sum, acc_v, acc_l;
    std::size_t download, upload;
  };
  std::vector<Row> rows;
  for (const auto& d : run_dirs) {
    const fs::path path = fs::path(d) / "summary.json";
    if (!fs::exists(path)) {
      err << "error: run directory '" << d << "' has no summary.json\n";
      return kExitFailure;
    }
    try {
      const json s = read_json(path);
      const json& f = s.at("final");
      const json& c = s.at("comm_cost");
      rows.push_back({s.at("label").get<std::string>(), s.at("aggregator").at("kind").get<std::string>(),
                      f.at("r1_sum").get<double>(), f.at("acc_v").get<double>(), f.at("acc_l").get<double>(),
                      c.at("vision_client").at("download_bytes").get<std::size_t>() +
                          c.at("text_client").at("download_bytes").get<std::size_t>(),
                      c.at("vision_client").at("upload_bytes").get<std::size_t>() +
                          c.at("text_client").at("upload_bytes").get<std::size_t>()});
    } catch (const std::exception& e) {
      err << "error: cannot read summary in '" << d << "': " << e.what() << "\n";
      return kExitFailure;
    }
  }
  std::string csv = "label,method,r1_sum,acc_v,acc_l,download_bytes,upload_bytes\n";
  fmt::print(out, "{:<24} {:<8} {:>8} {:>8} {:>8} {:>12} {:>12}\n", "label", "method", "r1_sum", "acc_v", "acc_l",
             "download_B", "upload_B");
  for (const auto& r : rows) {
    csv += fmt::format("{},{},{:.6f},{:.6f},{:.6f},{},{}\n", r.label, r.kind, r.r1_sum, r.acc_v, r.acc_l, r.download,
                       r.upload);
    fmt::print(out, "{:<24} {:<8} {:>8.2f} {:>8.2f} {:>8.2f} {:>12} {:>12}\n", r.label, r.kind, r.r1_sum, r.acc_v,
               r.acc_l, r.download, r.upload);
  }
  if (!csv_path.empty()) {
    try {
      write_file(csv_path, csv);
    } catch (const std::exception& e) {
      err << e.what() << "\n";
      return kExitFailure;
    }
  }
  return kExitOk;
}

int cmd_shapley(const CommonOptions& opts, const std::vector<std::string>& players, std::ostream& out,
                std::ostream& err) {
  std::vector<PlayerKind> kinds;
  {
    std::vector<std::string> problems;
    std::map<PlayerKind, std::string> taken;
    for (const auto& p : players) {
      const auto k = player_kind(p);
      if (!k) {
        problems.push_back("unknown player '" + p + "' (expected img, txt or vl)");
        continue;
      }
      if (auto [it, fresh] = taken.emplace(*k, p); !fresh) {
        problems.push_back("duplicate player '" + p + "' (same client kind as '" + it->second + "')");
      }
      kinds.push_back(*k);
    }
    if (!problems.empty()) {
      for (const auto& p : problems) err << "error: " << p << "\n";
      return kExitUsage;
    }
  }
  auto base_opt = load(opts, err);
  if (!base_opt) return kExitUsage;
  const fed::ExperimentConfig& base = *base_opt;
  const fs::path dir = opts.out.empty() ? fs::path(base.output_dir) / "shapley" : fs::path(opts.out);

  std::vector<analysis::CoalitionValue> values;
  const std::size_t n = players.size();
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    fed::ExperimentConfig cfg = base;
    analysis::CoalitionValue cv;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (std::size_t{1} << i)) {
        cv.coalition.push_back(players[i]);
        continue;
      }
      switch (kinds[i]) {
        case PlayerKind::Vision: cfg.clients.vision = 0; break;
        case PlayerKind::Text: cfg.clients.text = 0; break;
        case PlayerKind::Multimodal: cfg.clients.multimodal = 0; break;
      }
    }
    std::string name = "{";
    for (std::size_t i = 0; i < cv.coalition.size(); ++i) name += (i ? "," : "") + cv.coalition[i];
    name += "}";
    try {
      cv.value = fed::run_experiment(cfg, opts.workers).history.back().r1_sum;
    } catch (const std::exception& e) {
      err << "coalition " << name << " failed: " << e.what() << "\n";
      return kExitFailure;
    }
    if (!opts.quiet) fmt::print(out, "v({}) = {:.4f}\n", name, cv.value);
    values.push_back(std::move(cv));
  }
  const std::vector<double> phi = analysis::shapley(players, values);
  json report;
  report["metric"] = "r1_sum";
  report["players"] = players;
  report["coalitions"] = json::array();
  std::string csv = "coalition,value\n";
  for (const auto& cv : values) {
    report["coalitions"].push_back({{"members", cv.coalition}, {"value", cv.value}});
    std::string members;
    for (std::size_t i = 0; i < cv.coalition.size(); ++i) members += (i ? "+" : "") + cv.coalition[i];
    csv += fmt::format("{},{:.6f}\n", members.empty() ? "-" : members, cv.value);
  }
  double sum_phi = 0.0;
  report["phi"] = json::object();
  for (std::size_t i = 0; i < n; ++i) {
    report["phi"][players[i]] = phi[i];
    sum_phi += phi[i];
    fmt::print(out, "phi[{}] = {:.4f}\n", players[i], phi[i]);
  }
  report["efficiency"] = {{"sum_phi", sum_phi}, {"full_minus_empty", values.back().value - values.front().value}};
  try {
    fs::create_directories(dir);
    write_file(dir / "shapley.json", report.dump(2) + "\n");
    write_file(dir / "coalitions.csv", csv);
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_partition_report(const CommonOptions& opts, std::ostream& out, std::ostream& err) {
  auto cfg_opt = load(opts, err);
  if (!cfg_opt) return kExitUsage;
  const fed::ExperimentConfig& cfg = *cfg_opt;
  try {
    const fed::Datasets ds = fed::make_datasets(cfg);
    const auto clients = fed::make_clients(cfg, ds);
    const std::size_t classes = cfg.data.space.num_classes;
    struct Table {
      const char* name;
      agg::ClientKind kind;
      const std::vector<int>* labels;
    };
    for (const Table& t : {Table{"vision", agg::ClientKind::V, &ds.vision_train.labels},
                           Table{"text", agg::ClientKind::L, &ds.text_train.labels},
                           Table{"paired", agg::ClientKind::VL, &ds.paired_train.vision.labels}}) {
      std::string csv = "client";
      for (std::size_t c = 0; c < classes; ++c) csv += fmt::format(",class_{}", c);
      csv += ",total\n";
      for (const auto& client : clients) {
        if (client.kind != t.kind) continue;
        std::vector<std::size_t> counts(classes);
        for (std::size_t r : client.rows) ++counts[static_cast<std::size_t>((*t.labels)[r])];
        csv += std::to_string(client.client_id);
        for (std::size_t c : counts) csv += "," + std::to_string(c);
        csv += "," + std::to_string(client.n()) + "\n";
      }
      if (opts.out.empty()) {
        fmt::print(out, "# {}\n{}", t.name, csv);
      } else {
        fs::create_directories(opts.out);
        write_file(fs::path(opts.out) / fmt::format("partition_{}.csv", t.name), csv);
      }
    }
  } catch (const std::exception& e) {
    err << "partition report failed: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_validate(const CommonOptions& opts, std::ostream& out, std::ostream& err) {
  auto cfg = load(opts, err);
  if (!cfg) return kExitUsage;
  fmt::print(out, "ok {}\n", io::config_hash(*cfg));
  return kExitOk;
}

int cmd_grad_check(std::uint64_t seed, std::ostream& out, std::ostream& err) {
  nn::GradCheckOptions opts;
  opts.seed = seed;
  const model::TransformerConfig blocks{16, 2, 2, 4, 16};
  bool ok = true;
  try {
    for (const auto& c : model::transformer_grad_suite(blocks, seed, opts)) {
      ok = ok && c.report.passed;
      fmt::print(out, "{:<18} {}  checked {:>5}  max_rel_err {:.3e}\n", c.name, c.report.passed ? "PASS" : "FAIL",
                 c.report.checked, c.report.max_rel_error);
      if (!c.report.passed) {
        for (const auto& w : c.report.worst) {
          fmt::print(out, "    {}[{}] analytic {:.10g} numeric {:.10g} rel {:.3e}\n", w.path, w.index, w.analytic,
                     w.numeric, w.rel_error);
        }
      }
    }
  } catch (const std::exception& e) {
    err << "grad-check failed: " << e.what() << "\n";
    return kExitFailure;
  }
  return ok ? kExitOk : kExitFailure;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transfer multi-modal federated learning simulator", "fedsim"};
  app.require_subcommand(1);
  CommonOptions opts;
  std::uint64_t seed = 0;
  std::vector<std::string> dirs;
  std::vector<std::string> players;
  std::string csv;

  auto common = [&](CLI::App* sub, bool with_workers) {
    sub->add_option("--config", opts.config, "Experiment config (JSON)")->required();
    sub->add_option("--out", opts.out, "Output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_flag("--quiet", opts.quiet, "No progress output");
    if (with_workers) {
      sub->add_option("--workers", opts.workers, "Parallel client sessions")
          ->envname("FEDSIM_WORKERS")
          ->check(CLI::PositiveNumber);
    }
  };
  auto* run = app.add_subcommand("run", "Run one experiment");
  common(run, true);
  auto* compare = app.add_subcommand("compare", "Tabulate finished runs");
  compare->add_option("dirs", dirs, "Run directories");
  compare->add_option("--csv", csv, "Also write the table as CSV");
  auto* shap = app.add_subcommand("shapley", "Shapley values of client kinds");
  common(shap, true);
  shap->add_option("--players", players, "Player labels: img, txt, vl")->delimiter(',');
  auto* part = app.add_subcommand("partition-report", "Per-client class histograms");
  common(part, false);
  auto* val = app.add_subcommand("validate", "Check a config");
  common(val, false);
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the transformer");
  grad->add_option("--seed", seed, "Sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  for (auto* sub : {run, shap, part, val}) {
    if (sub->parsed() && sub->count("--seed") > 0) opts.seed = seed;
  }
  if (run->parsed()) return cmd_run(opts, out, err);
  if (compare->parsed()) return cmd_compare(dirs, csv, out, err);
  if (shap->parsed()) return cmd_shapley(opts, players, out, err);
  if (part->parsed()) return cmd_partition_report(opts, out, err);
  if (val->parsed()) return cmd_validate(opts, out, err);
  if (grad->parsed()) return cmd_grad_check(seed, out, err);
  return kExitUsage;
}

}  // namespace fedsim::cli
