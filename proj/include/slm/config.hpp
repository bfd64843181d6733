#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "slm/common.hpp"
#include "slm/data.hpp"
#include "slm/label.hpp"
#include "slm/mix.hpp"
#include "slm/models.hpp"
#include "slm/objective.hpp"
#include "slm/select.hpp"

// Flat `key = value` configuration. Every key has a default, so an empty
// config runs; unknown keys are rejected by name. The echoed form of a config
// is itself a loadable config that reproduces the run.

namespace slm {

struct TrainKnobs {
  int steps = 900;
  int batch_size = 64;
  double lr_selector = 5e-3;
  double lr_classifier = 5e-3;
  double lr_extractor = 5e-4;
  double lr_discriminator = 5e-4;
  double lr_min = 0.0;
  double momentum = 0.9;
  double weight_decay_selector = 1e-3;
  double weight_decay_other = 5e-4;
  double tau_min = 0.1;
  double alpha_min = 0.02;
  double schedule_floor_frac = 0.8;  // tau/alpha reach their floors at this training fraction
  int eval_every = 100;
};

struct Config {
  std::uint64_t seed = 1;
  TaskSpec task;
  std::string task_csv;  // when set, load this dataset instead of generating
  ModelConfig model;
  bool select_enabled = true;
  SelectConfig select;
  bool label_enabled = true;
  SharpenConfig sharpen;
  bool mix_enabled = true;
  MixConfig mix;
  SmoothingConfig smoothing;
  bool adv_entropy_weighting = true;
  TermWeights weights;
  TrainKnobs train;
  int eval_projections = 128;
  int ablate_seeds = 5;
};

namespace cfgdetail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

inline std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (cfgdetail::trim(v).empty()) return out;
  std::size_t start = 0;
  for (;;) {
    std::size_t comma = v.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(trim(v.substr(start)));
      return out;
    }
    out.push_back(trim(v.substr(start, comma - start)));
    start = comma + 1;
  }
}

struct KeyDef {
  std::string name;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

inline const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = [] {
    std::vector<KeyDef> t;
    auto add = [&](std::string name, std::function<std::string(const Config&)> get,
                   std::function<void(Config&, const std::string&)> set) {
      t.push_back({std::move(name), std::move(get), std::move(set)});
    };

#define SLM_KEY_DOUBLE(NAME, FIELD)                                                        \
  add(NAME, [](const Config& c) { return fmt_double(c.FIELD); },                           \
      [](Config& c, const std::string& v) { c.FIELD = to_double(NAME, v); })
#define SLM_KEY_INT(NAME, FIELD)                                                           \
  add(NAME, [](const Config& c) { return std::to_string(c.FIELD); },                       \
      [](Config& c, const std::string& v) { c.FIELD = static_cast<int>(to_int(NAME, v)); })
#define SLM_KEY_BOOL(NAME, FIELD)                                                          \
  add(NAME, [](const Config& c) { return c.FIELD ? "true" : "false"; },                    \
      [](Config& c, const std::string& v) { c.FIELD = to_bool(NAME, v); })
#define SLM_KEY_INT_LIST(NAME, FIELD)                                                      \
  add(NAME,                                                                                \
      [](const Config& c) {                                                                \
        std::string s;                                                                     \
        for (std::size_t i = 0; i < c.FIELD.size(); ++i) {                                 \
          if (i) s += ",";                                                                 \
          s += std::to_string(c.FIELD[i]);                                                 \
        }                                                                                  \
        return s;                                                                          \
      },                                                                                   \
      [](Config& c, const std::string& v) {                                                \
        c.FIELD.clear();                                                                   \
        for (const auto& tok : split_list(v)) c.FIELD.push_back(static_cast<int>(to_int(NAME, tok))); \
      })

    add("seed", [](const Config& c) { return std::to_string(c.seed); },
        [](Config& c, const std::string& v) {
          c.seed = static_cast<std::uint64_t>(to_int("seed", v));
        });

    SLM_KEY_INT("task.dim", task.dim);
    SLM_KEY_INT("task.classes", task.classes);
    SLM_KEY_INT_LIST("task.shared_classes", task.shared);
    SLM_KEY_INT("task.source_per_class", task.source_per_class);
    SLM_KEY_INT("task.target_per_class", task.target_per_class);
    SLM_KEY_DOUBLE("task.rotation_deg", task.rotation_deg);
    add("task.translation",
        [](const Config& c) {
          std::string s;
          for (std::size_t i = 0; i < c.task.translation.size(); ++i) {
            if (i) s += ",";
            s += fmt_double(c.task.translation[i]);
          }
          return s;
        },
        [](Config& c, const std::string& v) {
          c.task.translation.clear();
          for (const auto& tok : split_list(v)) c.task.translation.push_back(to_double("task.translation", tok));
        });
    SLM_KEY_DOUBLE("task.scale", task.scale_factor);
    SLM_KEY_DOUBLE("task.noise_sigma", task.noise_sigma);
    add("task.csv", [](const Config& c) { return c.task_csv; },
        [](Config& c, const std::string& v) { c.task_csv = v; });

    SLM_KEY_INT_LIST("model.hidden_g", model.hidden_g);
    SLM_KEY_INT("model.feature_dim", model.feature_dim);
    SLM_KEY_INT_LIST("model.hidden_f", model.hidden_f);
    SLM_KEY_INT_LIST("model.hidden_d", model.hidden_d);
    SLM_KEY_INT_LIST("model.hidden_h", model.hidden_h);
    SLM_KEY_BOOL("model.per_domain_standardize", model.per_domain_standardize);

    SLM_KEY_BOOL("select.enabled", select_enabled);
    SLM_KEY_DOUBLE("select.tau0", select.tau);
    SLM_KEY_DOUBLE("select.margin", select.margin);
    SLM_KEY_DOUBLE("select.lambda_s", select.lambda_s);
    SLM_KEY_DOUBLE("select.lambda_reg1", select.lambda_reg1);
    SLM_KEY_DOUBLE("select.lambda_reg2", select.lambda_reg2);
    add("select.reg1_form",
        [](const Config& c) {
          switch (c.select.reg1_form) {
            case Reg1Form::batch_rate: return std::string("batch_rate");
            case Reg1Form::per_sample: return std::string("per_sample");
            case Reg1Form::literal: return std::string("literal");
          }
          return std::string("batch_rate");
        },
        [](Config& c, const std::string& v) {
          if (v == "batch_rate") {
            c.select.reg1_form = Reg1Form::batch_rate;
          } else if (v == "per_sample") {
            c.select.reg1_form = Reg1Form::per_sample;
          } else if (v == "literal") {
            c.select.reg1_form = Reg1Form::literal;
          } else {
            throw ConfigError("select.reg1_form: expected batch_rate|per_sample|literal, got '" + v + "'");
          }
        });
    SLM_KEY_BOOL("select.use_hausdorff", select.use_hausdorff);
    SLM_KEY_DOUBLE("select.warmup_frac", select.warmup_frac);

    SLM_KEY_BOOL("label.enabled", label_enabled);
    SLM_KEY_DOUBLE("label.alpha0", sharpen.alpha);
    SLM_KEY_DOUBLE("label.threshold", sharpen.threshold);
    SLM_KEY_BOOL("label.hard", sharpen.hard);
    SLM_KEY_DOUBLE("label.warmup_frac", sharpen.warmup_frac);

    SLM_KEY_BOOL("mix.enabled", mix_enabled);
    SLM_KEY_DOUBLE("mix.beta_alpha", mix.beta_alpha);
    SLM_KEY_BOOL("mix.use_cls", mix.use_cls);
    SLM_KEY_BOOL("mix.use_dom", mix.use_dom);
    SLM_KEY_DOUBLE("mix.warmup_frac", mix.warmup_frac);

    SLM_KEY_DOUBLE("smoothing.epsilon", smoothing.epsilon);
    SLM_KEY_BOOL("adv.entropy_weighting", adv_entropy_weighting);

    SLM_KEY_DOUBLE("weights.sup", weights.sup);
    SLM_KEY_DOUBLE("weights.adv", weights.adv);
    SLM_KEY_DOUBLE("weights.select", weights.select);
    SLM_KEY_DOUBLE("weights.label", weights.label);
    SLM_KEY_DOUBLE("weights.mix_cls", weights.mix_cls);
    SLM_KEY_DOUBLE("weights.mix_dom", weights.mix_dom);

    SLM_KEY_INT("train.steps", train.steps);
    SLM_KEY_INT("train.batch_size", train.batch_size);
    SLM_KEY_DOUBLE("train.lr_selector", train.lr_selector);
    SLM_KEY_DOUBLE("train.lr_classifier", train.lr_classifier);
    SLM_KEY_DOUBLE("train.lr_extractor", train.lr_extractor);
    SLM_KEY_DOUBLE("train.lr_discriminator", train.lr_discriminator);
    SLM_KEY_DOUBLE("train.lr_min", train.lr_min);
    SLM_KEY_DOUBLE("train.momentum", train.momentum);
    SLM_KEY_DOUBLE("train.weight_decay_selector", train.weight_decay_selector);
    SLM_KEY_DOUBLE("train.weight_decay_other", train.weight_decay_other);
    SLM_KEY_DOUBLE("train.tau_min", train.tau_min);
    SLM_KEY_DOUBLE("train.alpha_min", train.alpha_min);
    SLM_KEY_DOUBLE("train.schedule_floor_frac", train.schedule_floor_frac);
    SLM_KEY_INT("train.eval_every", train.eval_every);

    SLM_KEY_INT("eval.projections", eval_projections);
    SLM_KEY_INT("ablate.seeds", ablate_seeds);

#undef SLM_KEY_DOUBLE
#undef SLM_KEY_INT
#undef SLM_KEY_BOOL
#undef SLM_KEY_INT_LIST
    return t;
  }();
  return table;
}

inline const KeyDef* find_key(const std::string& name) {
  for (const auto& k : key_table()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

}  // namespace cfgdetail

inline void apply_kv(Config& cfg, const std::string& key, const std::string& value) {
  const auto* def = cfgdetail::find_key(key);
  if (!def) throw ConfigError("unknown config key '" + key + "'");
  def->set(cfg, value);
}

// `key = value` per line; blank lines and '#' comments allowed.
inline void apply_config_text(Config& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = cfgdetail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ": line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    apply_kv(cfg, cfgdetail::trim(t.substr(0, eq)), cfgdetail::trim(t.substr(eq + 1)));
  }
}

inline std::string echo_config(const Config& cfg) {
  std::string out;
  for (const auto& k : cfgdetail::key_table()) {
    out += k.name;
    out += " = ";
    out += k.get(cfg);
    out += "\n";
  }
  return out;
}

// Cross-field checks; single-key range checks name the offending key.
inline void validate(const Config& cfg) {
  if (cfg.task_csv.empty()) validate_task_spec(cfg.task);
  if (cfg.model.feature_dim < 1) throw ConfigError("model.feature_dim: must be >= 1");
  for (int w : cfg.model.hidden_g) {
    if (w < 1) throw ConfigError("model.hidden_g: widths must be >= 1");
  }
  for (int w : cfg.model.hidden_f) {
    if (w < 1) throw ConfigError("model.hidden_f: widths must be >= 1");
  }
  for (int w : cfg.model.hidden_d) {
    if (w < 1) throw ConfigError("model.hidden_d: widths must be >= 1");
  }
  for (int w : cfg.model.hidden_h) {
    if (w < 1) throw ConfigError("model.hidden_h: widths must be >= 1");
  }
  if (!(cfg.select.tau > 0.0)) throw ConfigError("select.tau0: must be positive");
  if (cfg.select.margin < 0.0) throw ConfigError("select.margin: must be nonnegative");
  if (cfg.select.lambda_s < 0.0) throw ConfigError("select.lambda_s: must be nonnegative");
  if (cfg.select.lambda_reg1 < 0.0) throw ConfigError("select.lambda_reg1: must be nonnegative");
  if (cfg.select.lambda_reg2 < 0.0) throw ConfigError("select.lambda_reg2: must be nonnegative");
  if (cfg.select.warmup_frac < 0.0 || cfg.select.warmup_frac > 1.0) throw ConfigError("select.warmup_frac: must lie in [0, 1]");
  if (!(cfg.sharpen.alpha > 0.0) || cfg.sharpen.alpha > 1.0) throw ConfigError("label.alpha0: must lie in (0, 1]");
  if (cfg.sharpen.threshold < 0.0 || cfg.sharpen.threshold >= 1.0) throw ConfigError("label.threshold: must lie in [0, 1)");
  if (cfg.sharpen.warmup_frac < 0.0 || cfg.sharpen.warmup_frac > 1.0) throw ConfigError("label.warmup_frac: must lie in [0, 1]");
  if (!(cfg.mix.beta_alpha > 0.0)) throw ConfigError("mix.beta_alpha: must be positive");
  if (cfg.mix.warmup_frac < 0.0 || cfg.mix.warmup_frac > 1.0) throw ConfigError("mix.warmup_frac: must lie in [0, 1]");
  if (cfg.smoothing.epsilon < 0.0 || cfg.smoothing.epsilon >= 1.0) throw ConfigError("smoothing.epsilon: must lie in [0, 1)");
  if (cfg.train.steps < 0) throw ConfigError("train.steps: must be nonnegative");
  if (cfg.train.batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (!(cfg.train.momentum >= 0.0) || cfg.train.momentum >= 1.0) throw ConfigError("train.momentum: must lie in [0, 1)");
  if (cfg.train.lr_selector < 0.0 || cfg.train.lr_classifier < 0.0 || cfg.train.lr_extractor < 0.0 ||
      cfg.train.lr_discriminator < 0.0 || cfg.train.lr_min < 0.0) {
    throw ConfigError("train.lr_*: learning rates must be nonnegative");
  }
  if (cfg.train.weight_decay_selector < 0.0 || cfg.train.weight_decay_other < 0.0) {
    throw ConfigError("train.weight_decay_*: must be nonnegative");
  }
  if (!(cfg.train.tau_min > 0.0)) throw ConfigError("train.tau_min: must be positive");
  if (!(cfg.train.alpha_min > 0.0)) throw ConfigError("train.alpha_min: must be positive");
  if (!(cfg.train.schedule_floor_frac > 0.0) || cfg.train.schedule_floor_frac > 1.0) {
    throw ConfigError("train.schedule_floor_frac: must lie in (0, 1]");
  }
  if (cfg.train.eval_every < 0) throw ConfigError("train.eval_every: must be nonnegative");
  if (cfg.eval_projections < 1) throw ConfigError("eval.projections: must be >= 1");
  if (cfg.ablate_seeds < 2) throw ConfigError("ablate.seeds: need at least two seeds");
  if (cfg.train.tau_min > cfg.select.tau) throw ConfigError("train.tau_min: floor above select.tau0");
  if (cfg.train.alpha_min > cfg.sharpen.alpha) throw ConfigError("train.alpha_min: floor above label.alpha0");
}

}  // namespace slm
