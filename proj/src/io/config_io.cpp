// SPDX-License-Identifier: Apache-2.0
#include "fedsim/io/config_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "fedsim/common/error.hpp"
#include "fedsim/common/rng.hpp"
#include "json.hpp"

namespace fedsim::io {

using nlohmann::json;

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = "invalid config";
  for (const auto& p : problems) out += "\n  " + p;
  return out;
}

// Walks one JSON object, collecting problems instead of stopping at the first.
class Reader {
 public:
  Reader(const json& obj, std::string path, std::vector<std::string>& problems)
      : obj_(obj), path_(std::move(path)), problems_(problems) {
    if (!obj_.is_object()) {
      problem("", "must be an object");
      ok_ = false;
    }
  }

  ~Reader() {
    if (!ok_) return;
    for (const auto& [key, _] : obj_.items()) {
      if (!seen_.count(key)) problem(key, "unknown key");
    }
  }

  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  template <typename Fn>
  void field(const char* key, Fn&& read) {
    seen_.insert(key);
    if (!ok_ || !obj_.contains(key)) return;
    read(obj_.at(key), key_path(key));
  }

  void size(const char* key, std::size_t& out) {
    field(key, [&](const json& v, const std::string& p) {
      if (v.is_number_unsigned()) {
        out = v.get<std::size_t>();
      } else {
        problems_.push_back(p + ": expected a nonnegative integer");
      }
    });
  }

  void u64(const char* key, std::uint64_t& out) {
    field(key, [&](const json& v, const std::string& p) {
      if (v.is_number_unsigned()) {
        out = v.get<std::uint64_t>();
      } else {
        problems_.push_back(p + ": expected a nonnegative integer");
      }
    });
  }

  void number(const char* key, double& out) {
    field(key, [&](const json& v, const std::string& p) {
      if (v.is_number()) {
        out = v.get<double>();
      } else {
        problems_.push_back(p + ": expected a number");
      }
    });
  }

  void boolean(const char* key, bool& out) {
    field(key, [&](const json& v, const std::string& p) {
      if (v.is_boolean()) {
        out = v.get<bool>();
      } else {
        problems_.push_back(p + ": expected true or false");
      }
    });
  }

  void string(const char* key, std::string& out) {
    field(key, [&](const json& v, const std::string& p) {
      if (v.is_string()) {
        out = v.get<std::string>();
      } else {
        problems_.push_back(p + ": expected a string");
      }
    });
  }

  // String field mapped through `parse`, which throws on unknown names.
  template <typename T, typename Parse>
  void choice(const char* key, T& out, Parse&& parse) {
    field(key, [&](const json& v, const std::string& p) {
      if (!v.is_string()) {
        problems_.push_back(p + ": expected a string");
        return;
      }
      try {
        out = parse(v.get<std::string>());
      } catch (const ContractError& e) {
        problems_.push_back(p + ": " + e.what());
      }
    });
  }

  template <typename Fn>
  void object(const char* key, Fn&& read) {
    field(key, [&](const json& v, const std::string& p) {
      Reader sub(v, p, problems_);
      if (sub.ok_) read(sub);
    });
  }

  std::string key_path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  void problem(const std::string& key, const char* what) {
    const std::string p = key.empty() ? (path_.empty() ? "<root>" : path_) : key_path(key.c_str());
    problems_.push_back(p + ": " + what);
  }

  const json& obj_;
  std::string path_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
  bool ok_ = true;
};

bool read_matrix(const json& v, const std::string& p, agg::Matrix4& out, std::vector<std::string>& problems) {
  if (!v.is_array() || v.size() != 4) {
    problems.push_back(p + ": expected a 4x4 array of numbers");
    return false;
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (!v[i].is_array() || v[i].size() != 4) {
      problems.push_back(p + ": expected a 4x4 array of numbers");
      return false;
    }
    for (std::size_t j = 0; j < 4; ++j) {
      if (!v[i][j].is_number()) {
        problems.push_back(fmt::format("{}[{}][{}]: expected a number", p, i, j));
        return false;
      }
      out[i][j] = v[i][j].get<double>();
    }
  }
  return true;
}

void read_split(Reader& r, fed::DatasetSplit& s) {
  r.size("per_class_train", s.per_class_train);
  r.size("per_class_test", s.per_class_test);
  r.number("shift", s.shift);
}

json matrix_json(const agg::Matrix4& m) {
  json out = json::array();
  for (const auto& row : m) out.push_back(json(row));
  return out;
}

json split_json(const fed::DatasetSplit& s) {
  return {{"per_class_train", s.per_class_train}, {"per_class_test", s.per_class_test}, {"shift", s.shift}};
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

fed::ExperimentConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("malformed JSON: ") + e.what()});
  }
  fed::ExperimentConfig cfg;
  std::vector<std::string> problems;
  {
    Reader r(root, "", problems);
    r.u64("seed", cfg.seed);
    r.size("rounds", cfg.rounds);
    r.size("eval_interval", cfg.eval_interval);
    r.string("label", cfg.label);
    r.string("output_dir", cfg.output_dir);
    r.object("clients", [&](Reader& c) {
      c.size("vision", cfg.clients.vision);
      c.size("text", cfg.clients.text);
      c.size("multimodal", cfg.clients.multimodal);
    });
    r.object("rates", [&](Reader& c) {
      c.number("vision", cfg.rates.vision);
      c.number("text", cfg.rates.text);
      c.number("multimodal", cfg.rates.multimodal);
    });
    r.object("model", [&](Reader& m) {
      m.size("dim", cfg.model.blocks.dim);
      m.size("depth", cfg.model.blocks.depth);
      m.size("heads", cfg.model.blocks.heads);
      m.size("mlp_ratio", cfg.model.blocks.mlp_ratio);
      m.size("max_seq", cfg.model.blocks.max_seq);
      m.size("proj_dim", cfg.model.proj_dim);
    });
    r.object("data", [&](Reader& d) {
      auto& s = cfg.data.space;
      d.u64("prototype_seed", s.prototype_seed);
      d.size("latent_dim", s.latent_dim);
      d.size("num_classes", s.num_classes);
      d.number("class_scale", s.class_scale);
      d.size("patch_dim", s.patch_dim);
      d.size("vision_seq", s.vision_seq);
      d.size("vocab", s.vocab);
      d.size("text_seq", s.text_seq);
      d.number("noise", cfg.data.noise);
      d.number("alpha", cfg.data.alpha);
      d.number("size_skew", cfg.data.size_skew);
      d.object("vision", [&](Reader& x) { read_split(x, cfg.data.vision); });
      d.object("text", [&](Reader& x) { read_split(x, cfg.data.text); });
      d.object("paired", [&](Reader& x) { read_split(x, cfg.data.paired); });
    });
    r.object("trainer", [&](Reader& t) {
      auto& tr = cfg.trainer;
      t.size("local_epochs", tr.local_epochs);
      t.size("batch_size", tr.batch_size);
      t.number("lr", tr.lr);
      t.number("lr_epoch_decay", tr.lr_epoch_decay);
      t.number("weight_decay", tr.weight_decay);
      t.field("betas", [&](const json& v, const std::string& p) {
        if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) {
          tr.beta1 = v[0].get<double>();
          tr.beta2 = v[1].get<double>();
        } else {
          problems.push_back(p + ": expected [beta1, beta2]");
        }
      });
      t.number("eps", tr.eps);
      t.number("prox_mu", tr.prox_mu);
      t.number("temperature", tr.temperature);
      t.boolean("gate_trainable", tr.gate_trainable);
    });
    r.object("aggregator", [&](Reader& a) {
      auto& ag = cfg.aggregator;
      a.choice("kind", ag.kind, fed::aggregator_kind_from_string);
      a.choice("omega", ag.omega, agg::omega_mode_from_string);
      a.choice("co_layer", ag.co_layer, model::co_layer_from_string);
      a.boolean("out_trainable", ag.out_trainable);
      a.choice("norm_policy", ag.norm_policy, agg::norm_policy_from_string);
      a.object("custom", [&](Reader& c) {
        agg::Matrix4 attn{};
        agg::Matrix4 others{};
        bool have_attn = false;
        bool have_others = false;
        c.field("attn", [&](const json& v, const std::string& p) { have_attn = read_matrix(v, p, attn, problems); });
        c.field("others",
                [&](const json& v, const std::string& p) { have_others = read_matrix(v, p, others, problems); });
        if (have_attn && have_others) {
          ag.custom.emplace(attn, others);
        } else if (!have_attn && !have_others) {
          problems.push_back(c.key_path("attn") + ": custom omega needs both attn and others tables");
        }
      });
    });
  }
  for (auto& e : cfg.validate()) problems.push_back(std::move(e));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

fed::ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError({"cannot read config file '" + path + "'"});
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_canonical_json(const fed::ExperimentConfig& cfg) {
  const auto& b = cfg.model.blocks;
  const auto& s = cfg.data.space;
  const auto& t = cfg.trainer;
  const auto& a = cfg.aggregator;
  json j;
  j["seed"] = cfg.seed;
  j["rounds"] = cfg.rounds;
  j["eval_interval"] = cfg.eval_interval;
  j["label"] = cfg.label;
  j["output_dir"] = cfg.output_dir;
  j["clients"] = {{"vision", cfg.clients.vision}, {"text", cfg.clients.text}, {"multimodal", cfg.clients.multimodal}};
  j["rates"] = {{"vision", cfg.rates.vision}, {"text", cfg.rates.text}, {"multimodal", cfg.rates.multimodal}};
  j["model"] = {{"dim", b.dim},         {"depth", b.depth},     {"heads", b.heads},
                {"mlp_ratio", b.mlp_ratio}, {"max_seq", b.max_seq}, {"proj_dim", cfg.model.proj_dim}};
  j["data"] = {{"prototype_seed", s.prototype_seed},
               {"latent_dim", s.latent_dim},
               {"num_classes", s.num_classes},
               {"class_scale", s.class_scale},
               {"patch_dim", s.patch_dim},
               {"vision_seq", s.vision_seq},
               {"vocab", s.vocab},
               {"text_seq", s.text_seq},
               {"noise", cfg.data.noise},
               {"alpha", cfg.data.alpha},
               {"size_skew", cfg.data.size_skew},
               {"vision", split_json(cfg.data.vision)},
               {"text", split_json(cfg.data.text)},
               {"paired", split_json(cfg.data.paired)}};
  j["trainer"] = {{"local_epochs", t.local_epochs}, {"batch_size", t.batch_size},
                  {"lr", t.lr},                     {"lr_epoch_decay", t.lr_epoch_decay},
                  {"weight_decay", t.weight_decay}, {"betas", {t.beta1, t.beta2}},
                  {"eps", t.eps},                   {"prox_mu", t.prox_mu},
                  {"temperature", t.temperature},   {"gate_trainable", t.gate_trainable}};
  j["aggregator"] = {{"kind", fed::to_string(a.kind)},
                     {"omega", agg::to_string(a.omega)},
                     {"co_layer", model::to_string(a.co_layer)},
                     {"out_trainable", a.out_trainable},
                     {"norm_policy", agg::to_string(a.norm_policy)}};
  if (a.custom) {
    j["aggregator"]["custom"] = {{"attn", matrix_json(a.custom->first)}, {"others", matrix_json(a.custom->second)}};
  }
  return j.dump(2) + "\n";
}

std::string config_hash(const fed::ExperimentConfig& cfg) {
  // Where a run is written does not change what it computes.
  fed::ExperimentConfig keyed = cfg;
  keyed.output_dir.clear();
  return fmt::format("{:016x}", fnv1a64(to_canonical_json(keyed)));
}

}  // namespace fedsim::io
