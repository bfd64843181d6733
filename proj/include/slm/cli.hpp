#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "slm/config.hpp"
#include "slm/experiment.hpp"
#include "slm/gradsuite.hpp"

// Exit codes: 0 success, 1 usage or configuration error (nothing written),
// 2 runtime numeric fault (partial outputs flushed and flagged).

namespace slm {

namespace clidetail {

struct Args {
  std::string subcommand;
  std::optional<std::string> config_path;
  std::optional<std::string> out_dir;
  std::optional<std::string> checkpoint_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::pair<std::string, std::string>> sets;  // applied in order, last wins
  std::vector<std::string> rows;
};

inline void print_usage(std::ostream& os) {
  os << "usage: slm <subcommand> [options]\n"
        "\n"
        "subcommands:\n"
        "  gen-data         generate a synthetic dataset csv\n"
        "  train            train a model, writing metrics/checkpoint/report\n"
        "  eval             evaluate a checkpoint (accuracy, selector, distances)\n"
        "  ablate           run the module ablation sweep over shared seeds\n"
        "  export-features  write extractor features for every sample as csv\n"
        "  grad-check       verify gradients of all primitives and losses\n"
        "\n"
        "options:\n"
        "  --config PATH      load a key = value config file\n"
        "  --out DIR          output directory (required where files are written)\n"
        "  --seed N           override the seed\n"
        "  --set KEY=VALUE    override one config key (repeatable, last wins)\n"
        "  --checkpoint PATH  checkpoint to evaluate / export from\n"
        "  --rows A,B,...     extra ablation rows: hard-pl, no-mix-dom,\n"
        "                     no-mix-cls, no-hausdorff\n";
}

inline Args parse_args(int argc, const char* const* argv) {
  Args args;
  if (argc < 2) throw ConfigError("missing subcommand");
  args.subcommand = argv[1];
  for (int i = 2; i < argc; ++i) {
    const std::string a = argv[i];
    auto need_value = [&](const char* flag) -> std::string {
      if (i + 1 >= argc) throw ConfigError(std::string(flag) + " requires a value");
      return argv[++i];
    };
    if (a == "--config") {
      args.config_path = need_value("--config");
    } else if (a == "--out") {
      args.out_dir = need_value("--out");
    } else if (a == "--checkpoint") {
      args.checkpoint_path = need_value("--checkpoint");
    } else if (a == "--seed") {
      const std::string v = need_value("--seed");
      args.seed = static_cast<std::uint64_t>(cfgdetail::to_int("--seed", v));
    } else if (a == "--set") {
      const std::string v = need_value("--set");
      const auto eq = v.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + v + "'");
      args.sets.emplace_back(cfgdetail::trim(v.substr(0, eq)), cfgdetail::trim(v.substr(eq + 1)));
    } else if (a == "--rows") {
      for (const auto& tok : cfgdetail::split_list(need_value("--rows"))) args.rows.push_back(tok);
    } else if (a == "--help" || a == "-h") {
      args.subcommand = "help";
    } else {
      throw ConfigError("unknown option '" + a + "'");
    }
  }
  return args;
}

inline Config assemble_config(const Args& args) {
  Config cfg;
  if (args.config_path) {
    std::ifstream in(*args.config_path);
    if (!in) throw ConfigError("cannot open config file: " + *args.config_path);
    std::stringstream buf;
    buf << in.rdbuf();
    apply_config_text(cfg, buf.str(), *args.config_path);
  }
  if (args.seed) cfg.seed = *args.seed;
  for (const auto& [k, v] : args.sets) apply_kv(cfg, k, v);
  validate(cfg);
  return cfg;
}

inline std::string require_out(const Args& args) {
  if (!args.out_dir) throw ConfigError(args.subcommand + " requires --out DIR");
  return *args.out_dir;
}

}  // namespace clidetail

inline int cli_main(int argc, const char* const* argv) {
  using namespace clidetail;
  Args args;
  try {
    args = parse_args(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    print_usage(std::cerr);
    return 1;
  }
  if (args.subcommand == "help") {
    print_usage(std::cout);
    return 0;
  }

  try {
    if (args.subcommand == "gen-data") {
      const Config cfg = assemble_config(args);
      const std::string out = require_out(args);
      std::filesystem::create_directories(out);
      const PdaTask task = build_task(cfg);
      write_csv_dataset(task, (std::filesystem::path(out) / "dataset.csv").string());
      std::ofstream cfg_out(std::filesystem::path(out) / "config.txt", std::ios::binary);
      cfg_out << echo_config(cfg);
      std::cout << "wrote " << task.source_x.rows() << " source and " << task.target_x.rows()
                << " target rows to " << out << "/dataset.csv\n";
      return 0;
    }
    if (args.subcommand == "train") {
      const Config cfg = assemble_config(args);
      const std::string out = require_out(args);
      RunResult res = run_train_command(cfg, out);
      std::cout << "trained " << res.train_out.report.steps_run << " steps";
      if (res.final_accuracy >= 0.0) std::cout << ", target accuracy " << res.final_accuracy;
      std::cout << "\n";
      return 0;
    }
    if (args.subcommand == "eval") {
      if (!args.checkpoint_path) throw ConfigError("eval requires --checkpoint PATH");
      const std::string out = require_out(args);
      Checkpoint ckpt = load_checkpoint(*args.checkpoint_path);
      Config cfg = ckpt.config;
      if (args.seed) cfg.seed = *args.seed;
      for (const auto& [k, v] : args.sets) apply_kv(cfg, k, v);
      validate(cfg);
      nlohmann::json report = run_eval_command(ckpt, cfg, out);
      std::cout << report.dump(2) << "\n";
      return 0;
    }
    if (args.subcommand == "ablate") {
      const Config cfg = assemble_config(args);
      for (const auto& row : args.rows) (void)row_config(cfg, row);  // reject unknown rows up front
      const std::string out = require_out(args);
      std::filesystem::create_directories(out);
      nlohmann::json rows = run_ablation(cfg, args.rows, &std::cout);
      std::ofstream ab(std::filesystem::path(out) / "ablation.json", std::ios::binary);
      if (!ab) throw IoError("cannot write ablation results in " + out);
      ab << rows.dump(2) << "\n";
      std::ofstream cfg_out(std::filesystem::path(out) / "config.txt", std::ios::binary);
      cfg_out << echo_config(cfg);
      return 0;
    }
    if (args.subcommand == "export-features") {
      if (!args.checkpoint_path) throw ConfigError("export-features requires --checkpoint PATH");
      const std::string out = require_out(args);
      Checkpoint ckpt = load_checkpoint(*args.checkpoint_path);
      Config cfg = ckpt.config;
      for (const auto& [k, v] : args.sets) apply_kv(cfg, k, v);
      validate(cfg);
      std::filesystem::create_directories(out);
      const PdaTask task = build_task(cfg);
      const DomainStats stats =
          compute_domain_stats(task.source_x, task.target_x, cfg.model.per_domain_standardize);
      export_features(ckpt.bundle, task, stats, (std::filesystem::path(out) / "features.csv").string());
      std::cout << "wrote features for " << (task.source_x.rows() + task.target_x.rows()) << " samples\n";
      return 0;
    }
    if (args.subcommand == "grad-check") {
      const auto rows = run_grad_suite();
      std::size_t width = 0;
      for (const auto& r : rows) width = std::max(width, r.name.size());
      bool ok = true;
      for (const auto& r : rows) {
        std::cout << r.name << std::string(width - r.name.size() + 2, ' ') << r.max_err
                  << (r.max_err < 1e-4 ? "  ok" : "  FAIL") << "\n";
        ok = ok && r.max_err < 1e-4;
      }
      if (!ok) {
        std::cerr << "error: gradient checks exceeded the 1e-4 tolerance\n";
        return 2;
      }
      return 0;
    }
    throw ConfigError("unknown subcommand '" + args.subcommand + "'");
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return 2;
  } catch (const ContractViolation& e) {
    std::cerr << "internal contract violation: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace slm
