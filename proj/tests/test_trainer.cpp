#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "slm/experiment.hpp"
#include "slm/trainer.hpp"

using namespace slm;

TEST_CASE("schedules") {
  Schedules s;
  s.total_steps = 1000;

  SUBCASE("documented endpoints") {
    CHECK(s.tau(0) == doctest::Approx(1.0));
    CHECK(s.alpha(0) == doctest::Approx(0.1));
    CHECK(s.grl_lambda(0) == 0.0);
    CHECK(s.grl_lambda(1000) == doctest::Approx(0.9999092042625952).epsilon(1e-10));
    CHECK(s.lr(0.01, 1000) == doctest::Approx(0.0));  // cosine endpoint with lr_min 0
    CHECK(s.lr(0.01, 0) == doctest::Approx(0.01));
  }
  SUBCASE("floors are reached at the configured fraction and respected") {
    CHECK(s.tau(800) == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(s.alpha(800) == doctest::Approx(0.02).epsilon(1e-9));
    CHECK(s.tau(1000) == doctest::Approx(0.1));
    CHECK(s.alpha(1000) == doctest::Approx(0.02));
  }
  SUBCASE("monotonicity over every step") {
    for (int t = 1; t <= 1000; ++t) {
      CHECK(s.tau(t) <= s.tau(t - 1) + 1e-15);
      CHECK(s.alpha(t) <= s.alpha(t - 1) + 1e-15);
      CHECK(s.grl_lambda(t) >= s.grl_lambda(t - 1) - 1e-15);
      CHECK(s.lr(0.005, t) <= s.lr(0.005, t - 1) + 1e-15);
      CHECK(s.grl_lambda(t) < 1.0);
      CHECK(s.grl_lambda(t) >= 0.0);
    }
  }
  SUBCASE("out-of-range step is rejected") {
    CHECK_THROWS_AS(s.tau(-1), ContractViolation);
    CHECK_THROWS_AS(schedule_value(s, ScheduleKind::grl_lambda, 1001), ContractViolation);
  }
}

TEST_CASE("sgd_step follows the stated update") {
  MlpParams p;
  p.weights.push_back(Tensor({1, 1}, {1.0}));
  p.biases.push_back(Tensor::zeros({1}));
  OptState st;
  init_opt_state(p, st);

  SUBCASE("hand oracle: one step") {
    std::vector<Tensor> grads{Tensor({1, 1}, {0.5}), Tensor::zeros({1})};
    sgd_step(p, grads, 0.1, 0.9, 0.0, st);
    CHECK(st.momentum[0][0] == doctest::Approx(0.5));
    CHECK(p.weights[0][0] == doctest::Approx(0.95));
  }
  SUBCASE("momentum carries with zero gradient") {
    std::vector<Tensor> grads{Tensor({1, 1}, {0.5}), Tensor::zeros({1})};
    sgd_step(p, grads, 0.1, 0.9, 0.0, st);
    std::vector<Tensor> zero{Tensor::zeros({1, 1}), Tensor::zeros({1})};
    sgd_step(p, zero, 0.1, 0.9, 0.0, st);
    CHECK(st.momentum[0][0] == doctest::Approx(0.45));
    CHECK(p.weights[0][0] == doctest::Approx(0.95 - 0.045));
  }
  SUBCASE("no gradient, no decay, no motion") {
    std::vector<Tensor> zero{Tensor::zeros({1, 1}), Tensor::zeros({1})};
    sgd_step(p, zero, 0.1, 0.9, 0.0, st);
    CHECK(p.weights[0][0] == 1.0);
  }
  SUBCASE("weight decay enters the velocity") {
    std::vector<Tensor> zero{Tensor::zeros({1, 1}), Tensor::zeros({1})};
    sgd_step(p, zero, 0.1, 0.9, 0.5, st);
    // v = 0.5 * 1.0, w = 1 - 0.1 * 0.5
    CHECK(p.weights[0][0] == doctest::Approx(0.95));
  }
  SUBCASE("shape mismatch is rejected") {
    std::vector<Tensor> bad{Tensor::zeros({2, 1}), Tensor::zeros({1})};
    CHECK_THROWS_AS(sgd_step(p, bad, 0.1, 0.9, 0.0, st), ContractViolation);
  }
}

namespace {

Config small_config() {
  Config cfg;
  cfg.task.source_per_class = 8;
  cfg.task.target_per_class = 8;
  cfg.model.hidden_g = {16};
  cfg.model.feature_dim = 8;
  cfg.model.hidden_d = {8};
  cfg.train.steps = 30;
  cfg.train.batch_size = 16;
  cfg.train.eval_every = 10;
  return cfg;
}

std::string run_metrics(const Config& cfg, const PdaTask& task) {
  std::ostringstream out;
  run_training(cfg, task, &out);
  return out.str();
}

}  // namespace

TEST_CASE("training is a pure function of config, task and seed") {
  Config cfg = small_config();
  const PdaTask task = build_task(cfg);
  const std::string a = run_metrics(cfg, task);
  const std::string b = run_metrics(cfg, task);
  CHECK(a == b);  // byte-identical metrics stream
  CHECK(a.find("\"step\":1,") != std::string::npos);

  Config other = cfg;
  other.seed = cfg.seed + 1;
  const PdaTask task2 = build_task(other);
  CHECK(run_metrics(other, task2) != a);
}

TEST_CASE("trainer outputs stay finite over a default-shaped run") {
  Config cfg = small_config();
  cfg.train.steps = 120;
  const PdaTask task = build_task(cfg);
  std::ostringstream out;
  run_training(cfg, task, &out);
  std::istringstream lines(out.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"sup", "adv", "select", "label", "mix_cls", "mix_dom", "total"}) {
      CHECK(std::isfinite(j.at(key).get<double>()));
    }
    ++n;
  }
  CHECK(n == 120);
}

TEST_CASE("training reads nothing from the evaluation store") {
  // two tasks identical except for target labels and oracle bits must produce
  // byte-identical training runs when no evaluation hook is installed
  Config cfg = small_config();
  PdaTask task = build_task(cfg);
  PdaTask poisoned = task;
  for (auto& l : poisoned.eval.target_labels) l = (l + 1) % 4;
  for (auto& s : poisoned.eval.source_shared) s = 1 - s;

  std::ostringstream a, b;
  const TrainView va = train_view(task);
  const TrainView vb = train_view(poisoned);
  train(cfg, va, [&](const nlohmann::json& j) { a << j.dump() << "\n"; }, nullptr);
  train(cfg, vb, [&](const nlohmann::json& j) { b << j.dump() << "\n"; }, nullptr);
  CHECK(a.str() == b.str());
}

TEST_CASE("zero-step training echoes the initial evaluation") {
  Config cfg = small_config();
  cfg.train.steps = 0;
  const PdaTask task = build_task(cfg);
  RunResult res = run_training(cfg, task, nullptr);
  CHECK(res.train_out.report.steps_run == 0);
  REQUIRE(res.report.at("trajectory").size() == 1);
  CHECK(res.report.at("trajectory")[0].at("step") == 0);
  CHECK(res.final_accuracy >= 0.0);
}

TEST_CASE("ablation nesting: batch sequences are shared across toggles") {
  // the data stream is independent of which modules draw from their own
  // streams, so before any module engages, every row computes bit-identical
  // supervised terms on the same batches
  Config cfg = small_config();
  cfg.train.steps = 10;
  cfg.select.warmup_frac = 0.5;  // engagement at step 6
  cfg.sharpen.warmup_frac = 0.5;
  cfg.mix.warmup_frac = 0.5;
  const PdaTask task = build_task(cfg);

  auto early_sup = [&](bool select, bool label, bool mix) {
    Config c = cfg;
    c.select_enabled = select;
    c.label_enabled = label;
    c.mix_enabled = mix;
    std::ostringstream out;
    run_training(c, task, &out);
    std::istringstream lines(out.str());
    std::string line;
    std::vector<double> sups;
    for (int i = 0; i < 5 && std::getline(lines, line); ++i) {
      sups.push_back(nlohmann::json::parse(line).at("sup").get<double>());
    }
    return sups;
  };
  const auto base = early_sup(false, false, false);
  CHECK(early_sup(true, false, false) == base);
  CHECK(early_sup(true, true, false) == base);
  CHECK(early_sup(true, true, true) == base);
}

TEST_CASE("checkpoint round trip") {
  namespace fs = std::filesystem;
  Config cfg = small_config();
  const PdaTask task = build_task(cfg);
  RunResult res = run_training(cfg, task, nullptr);

  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.bundle = res.train_out.bundle;
  ckpt.opt = res.train_out.opt;
  ckpt.step = res.train_out.report.steps_run;
  const std::string path = (fs::temp_directory_path() / "slm_test_ckpt.bin").string();
  save_checkpoint(ckpt, path);
  Checkpoint loaded = load_checkpoint(path);

  SUBCASE("identical forward outputs on a probe batch") {
    Tensor probe = gather_rows_values(task.target_x, std::vector<int>{0, 5, 9});
    Tensor a = mlp_forward(ckpt.bundle.f, mlp_forward(ckpt.bundle.g, probe));
    Tensor b = mlp_forward(loaded.bundle.f, mlp_forward(loaded.bundle.g, probe));
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
    CHECK(loaded.step == ckpt.step);
    // optimizer state rides along exactly
    for (int n = 0; n < 4; ++n) {
      REQUIRE(loaded.opt[static_cast<std::size_t>(n)].momentum.size() ==
              ckpt.opt[static_cast<std::size_t>(n)].momentum.size());
      for (std::size_t k = 0; k < ckpt.opt[static_cast<std::size_t>(n)].momentum.size(); ++k) {
        CHECK(loaded.opt[static_cast<std::size_t>(n)].momentum[k] ==
              ckpt.opt[static_cast<std::size_t>(n)].momentum[k]);
      }
    }
  }
  SUBCASE("byte-identical resave") {
    const std::string path2 = (fs::temp_directory_path() / "slm_test_ckpt2.bin").string();
    save_checkpoint(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    std::remove(path2.c_str());
  }
  SUBCASE("version bump is rejected") {
    std::ifstream in(path, std::ios::binary);
    std::string header;
    std::getline(in, header);
    std::stringstream rest;
    rest << in.rdbuf();
    auto j = nlohmann::json::parse(header);
    j["version"] = 999;
    const std::string path3 = (fs::temp_directory_path() / "slm_test_ckpt3.bin").string();
    {
      std::ofstream out(path3, std::ios::binary);
      out << j.dump() << "\n" << rest.str();
    }
    CHECK_THROWS_AS(load_checkpoint(path3), IoError);
    std::remove(path3.c_str());
  }
  SUBCASE("truncation is a clean error, not a crash") {
    std::ifstream in(path, std::ios::binary);
    std::stringstream all;
    all << in.rdbuf();
    const std::string full = all.str();
    const std::string path4 = (fs::temp_directory_path() / "slm_test_ckpt4.bin").string();
    {
      std::ofstream out(path4, std::ios::binary);
      out << full.substr(0, full.size() / 2);
    }
    CHECK_THROWS_AS(load_checkpoint(path4), IoError);
    std::remove(path4.c_str());
  }
  std::remove(path.c_str());
}

TEST_CASE("per-domain standardization") {
  Config cfg = small_config();
  const PdaTask task = build_task(cfg);

  SUBCASE("stats are per-domain and guard small deviations") {
    DomainStats s = compute_domain_stats(task.source_x, task.target_x, true);
    REQUIRE(s.active);
    // standardized columns have zero mean and unit deviation
    Tensor std_src = standardize(task.source_x, s.src_mean, s.src_std);
    for (std::int64_t k = 0; k < std_src.cols(); ++k) {
      double mean = 0;
      for (std::int64_t i = 0; i < std_src.rows(); ++i) mean += std_src.at(i, k);
      mean /= static_cast<double>(std_src.rows());
      CHECK(std::fabs(mean) < 1e-9);
    }
    CHECK(s.src_mean != s.tgt_mean);  // two domains, two transforms
  }
  SUBCASE("the flag changes the run but keeps it deterministic") {
    Config on = cfg;
    on.model.per_domain_standardize = true;
    const std::string plain = run_metrics(cfg, task);
    const std::string standardized = run_metrics(on, task);
    CHECK(plain != standardized);
    CHECK(standardized == run_metrics(on, task));
  }
}

TEST_CASE("numeric faults name the step and term") {
  Config cfg = small_config();
  cfg.train.lr_extractor = 1e6;  // guaranteed blow-up
  cfg.train.lr_classifier = 1e6;
  const PdaTask task = build_task(cfg);
  try {
    run_training(cfg, task, nullptr);
    FAIL("expected a numeric fault");
  } catch (const NumericFault& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step") != std::string::npos);
    CHECK(msg.find("[") != std::string::npos);  // stage tag
  }
}
