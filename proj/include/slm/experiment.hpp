#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slm/config.hpp"
#include "slm/data.hpp"
#include "slm/eval.hpp"
#include "slm/trainer.hpp"

// Run orchestration: build the task a config describes, train into an output
// directory (metrics.jsonl, checkpoint.bin, report.json, the effective
// config), evaluate a checkpoint, and drive ablation sweeps. The CLI is a
// thin shell over these calls; tests drive them directly.

namespace slm {

inline PdaTask build_task(const Config& cfg) {
  if (!cfg.task_csv.empty()) return load_csv_dataset(cfg.task_csv);
  TaskSpec spec = cfg.task;
  spec.seed = cfg.seed;
  return generate_synthetic_pda(spec);
}

namespace expdetail {

inline nlohmann::json selector_json(const SelectorMetrics& m) {
  nlohmann::json j{{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"tn", m.tn}};
  j["precision"] = m.precision ? nlohmann::json(*m.precision) : nlohmann::json();
  j["recall"] = m.recall ? nlohmann::json(*m.recall) : nlohmann::json();
  return j;
}

inline nlohmann::json distance_json(const DistanceReport& r) {
  nlohmann::json j;
  j["d_all_t"] = r.d_all_t;
  j["d_sel_t"] = r.d_sel_t ? nlohmann::json(*r.d_sel_t) : nlohmann::json();
  j["d_dis_t"] = r.d_dis_t ? nlohmann::json(*r.d_dis_t) : nlohmann::json();
  j["norm_sel"] = r.norm_sel ? nlohmann::json(*r.norm_sel) : nlohmann::json();
  j["norm_dis"] = r.norm_dis ? nlohmann::json(*r.norm_dis) : nlohmann::json();
  return j;
}

}  // namespace expdetail

// Accuracy (plus selector precision/recall when the oracle exists) on frozen
// parameters. This closure owns the evaluation-only data; the trainer never
// sees it.
inline EvalHook make_eval_hook(const PdaTask& task, const Config& cfg, const DomainStats* stats) {
  const bool has_labels =
      std::any_of(task.eval.target_labels.begin(), task.eval.target_labels.end(), [](int l) { return l >= 0; });
  return [&task, &cfg, stats, has_labels](const ModelBundle& bundle, int) {
    nlohmann::json j;
    if (has_labels) {
      const Tensor tgt_view = stats && stats->active
                                  ? standardize(task.target_x, stats->tgt_mean, stats->tgt_std)
                                  : task.target_x.detached();
      j["target_accuracy"] = evaluate_accuracy(bundle, tgt_view, task.eval.target_labels);
    }
    if (cfg.select_enabled && !task.eval.source_shared.empty()) {
      const auto decisions = eval_selection(bundle, task.source_x);
      const auto m = selector_metrics(decisions, task.eval.source_shared);
      j["selector_precision"] = m.precision ? nlohmann::json(*m.precision) : nlohmann::json();
      j["selector_recall"] = m.recall ? nlohmann::json(*m.recall) : nlohmann::json();
    }
    return j;
  };
}

struct RunResult {
  TrainOutput train_out;
  nlohmann::json report;
  double final_accuracy = -1.0;
};

// Train per the config against `task`, streaming metrics into `metrics_out`
// when given. Pure compute; no filesystem access.
inline RunResult run_training(const Config& cfg, const PdaTask& task, std::ostream* metrics_out) {
  validate(cfg);
  const TrainView view = train_view(task);
  // stats must exist before the hook closes over them; recomputed identically inside train()
  DomainStats stats = compute_domain_stats(view.source_x, view.target_x, cfg.model.per_domain_standardize);
  EvalHook hook = make_eval_hook(task, cfg, &stats);
  MetricsSink sink;
  if (metrics_out) {
    sink = [metrics_out](const nlohmann::json& j) { (*metrics_out) << j.dump() << "\n"; };
  }
  RunResult result;
  result.train_out = train(cfg, view, sink, hook);

  nlohmann::json trajectory = nlohmann::json::array();
  for (const auto& [step, j] : result.train_out.report.eval_trajectory) {
    nlohmann::json entry = j;
    entry["step"] = step;
    trajectory.push_back(entry);
    if (j.contains("target_accuracy")) result.final_accuracy = j["target_accuracy"].get<double>();
  }
  const auto& fl = result.train_out.report.final_losses;
  result.report = nlohmann::json{
      {"steps", result.train_out.report.steps_run},
      {"trajectory", trajectory},
      {"final_losses",
       {{"sup", fl.sup},
        {"adv", fl.adv},
        {"select", fl.select},
        {"label", fl.label},
        {"mix_cls", fl.mix_cls},
        {"mix_dom", fl.mix_dom},
        {"total", fl.total},
        {"selected_count", fl.selected_count},
        {"discarded_count", fl.discarded_count},
        {"accepted_count", fl.accepted_count}}},
      {"params",
       {{"g", result.train_out.report.params_g},
        {"f", result.train_out.report.params_f},
        {"d", result.train_out.report.params_d},
        {"h", result.train_out.report.params_h}}}};
  if (result.final_accuracy >= 0.0) result.report["target_accuracy"] = result.final_accuracy;
  return result;
}

// Full train command: outputs land in `out_dir`.
inline RunResult run_train_command(const Config& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream cfg_out(fs::path(out_dir) / "config.txt", std::ios::binary);
    if (!cfg_out) throw IoError("cannot write effective config in " + out_dir);
    cfg_out << echo_config(cfg);
  }
  const PdaTask task = build_task(cfg);
  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw IoError("cannot write metrics in " + out_dir);

  RunResult result;
  try {
    result = run_training(cfg, task, &metrics);
  } catch (const NumericFault& e) {
    metrics.flush();
    nlohmann::json fault_report{{"fault", e.what()}};
    std::ofstream rep(fs::path(out_dir) / "report.json", std::ios::binary);
    rep << fault_report.dump(2) << "\n";
    throw;
  }
  result.report["fault"] = nlohmann::json();

  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.bundle = result.train_out.bundle;
  ckpt.opt = result.train_out.opt;
  ckpt.step = result.train_out.report.steps_run;
  save_checkpoint(ckpt, (fs::path(out_dir) / "checkpoint.bin").string());

  std::ofstream rep(fs::path(out_dir) / "report.json", std::ios::binary);
  if (!rep) throw IoError("cannot write report in " + out_dir);
  rep << result.report.dump(2) << "\n";
  return result;
}

// Evaluate a checkpoint against the task its stored config describes.
inline nlohmann::json run_eval_command(const Checkpoint& ckpt, const Config& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const PdaTask task = build_task(cfg);
  const DomainStats stats =
      compute_domain_stats(task.source_x, task.target_x, cfg.model.per_domain_standardize);
  const Tensor tgt_view =
      stats.active ? standardize(task.target_x, stats.tgt_mean, stats.tgt_std) : task.target_x.detached();
  const Tensor src_view =
      stats.active ? standardize(task.source_x, stats.src_mean, stats.src_std) : task.source_x.detached();

  nlohmann::json report;
  report["step"] = ckpt.step;
  const bool has_labels =
      std::any_of(task.eval.target_labels.begin(), task.eval.target_labels.end(), [](int l) { return l >= 0; });
  if (has_labels) {
    report["target_accuracy"] = evaluate_accuracy(ckpt.bundle, tgt_view, task.eval.target_labels);
  }
  const auto decisions = eval_selection(ckpt.bundle, task.source_x);
  if (!task.eval.source_shared.empty()) {
    report["selector"] = expdetail::selector_json(selector_metrics(decisions, task.eval.source_shared));
  }
  report["distance"] = expdetail::distance_json(
      distance_report(ckpt.bundle, src_view, decisions, tgt_view, cfg.eval_projections, cfg.seed));
  int selected = 0;
  for (auto s : decisions) selected += s;
  report["selected_count"] = selected;
  report["source_count"] = static_cast<int>(decisions.size());

  std::ofstream out(fs::path(out_dir) / "report.json", std::ios::binary);
  if (!out) throw IoError("cannot write report in " + out_dir);
  out << report.dump(2) << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// ablation sweep

struct AblationRow {
  std::string name;
  bool select = false, label = false, mix = false;
  Config overrides;  // full config for the row
};

inline Config row_config(const Config& base, const std::string& row_name) {
  Config c = base;
  c.select_enabled = true;
  c.label_enabled = true;
  c.mix_enabled = true;
  if (row_name == "vanilla") {
    c.select_enabled = false;
    c.label_enabled = false;
    c.mix_enabled = false;
  } else if (row_name == "select") {
    c.label_enabled = false;
    c.mix_enabled = false;
  } else if (row_name == "select_label") {
    c.mix_enabled = false;
  } else if (row_name == "slm") {
    // all modules on
  } else if (row_name == "hard-pl") {
    c.sharpen.hard = true;
  } else if (row_name == "no-mix-dom") {
    c.mix.use_dom = false;
  } else if (row_name == "no-mix-cls") {
    c.mix.use_cls = false;
  } else if (row_name == "no-hausdorff") {
    c.select.use_hausdorff = false;
  } else {
    throw ConfigError("unknown ablation row '" + row_name + "'");
  }
  return c;
}

inline const std::vector<std::string>& canonical_rows() {
  static const std::vector<std::string> rows{"vanilla", "select", "select_label", "slm"};
  return rows;
}

// Rows share the seed list, and per-stream rng separation inside the trainer
// keeps the batch sequences identical across rows.
inline nlohmann::json run_ablation(const Config& base, const std::vector<std::string>& extra_rows,
                                   std::ostream* progress) {
  if (base.ablate_seeds < 2) throw ConfigError("ablate.seeds: need at least two seeds");
  std::vector<std::string> rows = canonical_rows();
  rows.insert(rows.end(), extra_rows.begin(), extra_rows.end());

  nlohmann::json out = nlohmann::json::array();
  for (const auto& row_name : rows) {
    Config row_cfg = row_config(base, row_name);
    std::vector<double> accs;
    nlohmann::json per_seed = nlohmann::json::array();
    for (int k = 0; k < base.ablate_seeds; ++k) {
      Config cfg = row_cfg;
      cfg.seed = base.seed + static_cast<std::uint64_t>(k);
      const PdaTask task = build_task(cfg);
      RunResult res = run_training(cfg, task, nullptr);
      if (res.final_accuracy < 0.0) throw ContractViolation("ablation requires labeled target data");
      accs.push_back(res.final_accuracy);
      per_seed.push_back({{"seed", cfg.seed}, {"target_accuracy", res.final_accuracy}});
      if (progress) {
        (*progress) << row_name << " seed " << cfg.seed << ": accuracy " << res.final_accuracy << "\n";
      }
    }
    double mean = 0.0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(accs.size()));
    out.push_back({{"row", row_name},
                   {"select", row_cfg.select_enabled},
                   {"label", row_cfg.label_enabled},
                   {"mix", row_cfg.mix_enabled},
                   {"runs", per_seed},
                   {"mean_accuracy", mean},
                   {"std_accuracy", sd}});
  }
  return out;
}

}  // namespace slm
