#include <doctest.h>

#include <cmath>

#include "slm/select.hpp"

using namespace slm;

TEST_CASE("gumbel softmax with injected noise") {
  SUBCASE("equal logits and zero noise split evenly") {
    auto d = gumbel_softmax_from_noise({0.3, 0.3}, {0.0, 0.0}, 1.0);
    CHECK(d.soft_select == doctest::Approx(0.5));
    CHECK(d.soft_discard == doctest::Approx(0.5));
    CHECK(d.hard == 1);  // argmax tie resolves to select
  }
  SUBCASE("tiny temperature is numerically one-hot") {
    auto d = gumbel_softmax_from_noise({0.4, 0.1}, {0.05, -0.02}, 1e-6);
    CHECK(d.soft_select >= 1.0 - 1e-9);
    CHECK(d.hard == 1);
    CHECK(d.soft_select + d.soft_discard == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("temperature must be positive") {
    CHECK_THROWS_AS(gumbel_softmax_from_noise({0.0, 0.0}, {0.0, 0.0}, 0.0), ContractViolation);
  }
}

TEST_CASE("gumbel-max selection frequency matches the class probability") {
  // log_alpha = (ln .8, ln .2): hard select should fire at rate 0.8
  Rng rng(20240101);
  const std::pair<double, double> log_alpha{std::log(0.8), std::log(0.2)};
  int hits = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    hits += gumbel_softmax_sample(log_alpha, 0.05, rng).hard;
  }
  const double rate = static_cast<double>(hits) / n;
  CHECK(rate > 0.79);
  CHECK(rate < 0.81);
}

TEST_CASE("decision invariants hold across random draws") {
  Rng rng(20240102);
  for (int i = 0; i < 2000; ++i) {
    const double a = 4.0 * rng.uniform() - 2.0;
    const double b = 4.0 * rng.uniform() - 2.0;
    const double tau = 0.05 + rng.uniform();
    auto d = gumbel_softmax_sample({a, b}, tau, rng);
    CHECK(d.soft_select > 0.0);
    CHECK(d.soft_select < 1.0);
    CHECK(d.soft_select + d.soft_discard == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(d.hard == (d.soft_select >= d.soft_discard ? 1 : 0));
    CHECK(d.st_value.value() == static_cast<double>(d.hard));
  }
}

namespace {

BatchPartition make_partition(Tape& tape, const MlpParams& h, const Tensor& x, double tau, Rng& rng) {
  AttachedMlp ah = attach(tape, h);
  return partition_batch(ah, x, tau, rng);
}

MlpParams biased_selector(double select_bias) {
  MlpParams h;
  h.weights.push_back(Tensor::zeros({2, 2}));
  h.biases.push_back(Tensor({2}, {select_bias, 0.0}));
  return h;
}

}  // namespace

TEST_CASE("partition_batch splits by the hard bit") {
  Rng rng(7);
  Tensor x({6, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});

  SUBCASE("strongly biased selector keeps everything") {
    Tape tape;
    auto part = make_partition(tape, biased_selector(60.0), x, 1.0, rng);
    CHECK(part.selected.size() == 6);
    CHECK(part.discarded.empty());
    for (std::int64_t i = 0; i < 6; ++i) CHECK(part.st_column[i] == 1.0);
  }
  SUBCASE("symmetric selector is a fair coin") {
    Rng coin(20240103);
    int selected = 0;
    const int rounds = 40;  // 40 * 250 = 10k samples
    Tensor big = Tensor::zeros({250, 2});
    for (int r = 0; r < rounds; ++r) {
      Tape tape;
      auto part = make_partition(tape, biased_selector(0.0), big, 1.0, coin);
      selected += static_cast<int>(part.selected.size());
    }
    const double frac = selected / 10000.0;
    CHECK(frac > 0.48);
    CHECK(frac < 0.52);
  }
  SUBCASE("a batch of one lands in exactly one side") {
    Tape tape;
    auto part = make_partition(tape, biased_selector(0.0), Tensor({1, 2}, {1.0, 2.0}), 1.0, rng);
    CHECK(part.selected.size() + part.discarded.size() == 1);
  }
  SUBCASE("partition covers the batch disjointly") {
    Tape tape;
    auto part = make_partition(tape, biased_selector(0.0), x, 1.0, rng);
    std::vector<bool> seen(6, false);
    for (int i : part.selected) seen[static_cast<std::size_t>(i)] = true;
    for (int i : part.discarded) {
      CHECK_FALSE(seen[static_cast<std::size_t>(i)]);
      seen[static_cast<std::size_t>(i)] = true;
    }
    for (bool s : seen) CHECK(s);
  }
}

TEST_CASE("average hausdorff examples and properties") {
  Rng rng(20240104);
  SUBCASE("matches a brute-force oracle on random instances") {
    for (int rep = 0; rep < 100; ++rep) {
      const std::int64_t n = 1 + rng.below(8), m = 1 + rng.below(8), d = 1 + rng.below(3);
      std::vector<double> xs(static_cast<std::size_t>(n * d)), ys(static_cast<std::size_t>(m * d));
      for (auto& v : xs) v = 4.0 * rng.uniform() - 2.0;
      for (auto& v : ys) v = 4.0 * rng.uniform() - 2.0;
      Tensor X({n, d}, xs), Y({m, d}, ys);
      // independent oracle: literal formula with explicit loops
      auto dist = [&](std::int64_t i, std::int64_t j) {
        double s = 0;
        for (std::int64_t k = 0; k < d; ++k) {
          const double diff = xs[static_cast<std::size_t>(i * d + k)] - ys[static_cast<std::size_t>(j * d + k)];
          s += diff * diff;
        }
        return std::sqrt(s);
      };
      double fwd = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        double best = 1e300;
        for (std::int64_t j = 0; j < m; ++j) best = std::min(best, dist(i, j));
        fwd += best;
      }
      double bwd = 0;
      for (std::int64_t j = 0; j < m; ++j) {
        double best = 1e300;
        for (std::int64_t i = 0; i < n; ++i) best = std::min(best, dist(i, j));
        bwd += best;
      }
      const double oracle = 0.5 * (fwd / static_cast<double>(n) + bwd / static_cast<double>(m));
      CHECK(std::fabs(average_hausdorff(X, Y) - oracle) < 1e-12);
    }
  }
  SUBCASE("symmetry and nonnegativity") {
    for (int rep = 0; rep < 50; ++rep) {
      const std::int64_t n = 1 + rng.below(6), m = 1 + rng.below(6);
      std::vector<double> xs(static_cast<std::size_t>(n * 2)), ys(static_cast<std::size_t>(m * 2));
      for (auto& v : xs) v = rng.uniform();
      for (auto& v : ys) v = rng.uniform();
      Tensor X({n, 2}, xs), Y({m, 2}, ys);
      const double ab = average_hausdorff(X, Y);
      const double ba = average_hausdorff(Y, X);
      CHECK(ab >= 0.0);
      CHECK(std::fabs(ab - ba) < 1e-12);
    }
  }
}

namespace {

struct SelectWorld {
  MlpParams g, h;
  Tensor xs, xt;
};

SelectWorld make_select_world(std::uint64_t seed) {
  SelectWorld w;
  Rng rng(seed);
  w.g = init_params(LayerSpec{{2, 6, 3}}, rng);
  w.h = init_params(LayerSpec{{2, 2}}, rng);
  std::vector<double> xs(16), xt(12);
  for (auto& v : xs) v = 2.0 * rng.uniform() - 1.0;
  for (auto& v : xt) v = 2.0 * rng.uniform() - 1.0;
  w.xs = Tensor({8, 2}, std::move(xs));
  w.xt = Tensor({6, 2}, std::move(xt));
  return w;
}

Tensor build_select_loss(Tape& tape, const SelectWorld& w, const SelectConfig& cfg, Rng& rng) {
  AttachedMlp ag = attach(tape, w.g);
  AttachedMlp ah = attach(tape, w.h);
  Tensor gs = mlp_forward(ag, w.xs);
  Tensor gt = mlp_forward(ag, w.xt);
  // a small classifier so the diversity term has something to chew on
  Tensor logits_t = log_softmax(gt);
  BatchPartition part = partition_batch(ah, w.xs, cfg.tau, rng);
  return select_loss(part, gs, gt, logits_t, cfg);
}

}  // namespace

TEST_CASE("select_loss analytic spot values") {
  SUBCASE("hinge inactive when the discard set is far enough") {
    // d_sel = 0.2, d_dis = 2.0, margin 1.0: relu(0.2 - 2.0 + 1.0) = 0
    Tensor h = relu(add(sub(Tensor::scalar(0.2), Tensor::scalar(2.0)), Tensor::scalar(1.0)));
    CHECK(h.value() == 0.0);
  }
  SUBCASE("per-sample entropy form at p = 0.5 equals -ln 2 times the weight") {
    SelectWorld w = make_select_world(3);
    // zero selector -> p exactly 0.5 everywhere
    w.h.weights[0] = Tensor::zeros({2, 2});
    w.h.biases[0] = Tensor::zeros({2});
    SelectConfig cfg;
    cfg.reg1_form = Reg1Form::per_sample;
    cfg.lambda_s = 0.0;
    cfg.lambda_reg2 = 0.0;
    cfg.lambda_reg1 = 3.0;
    Rng rng(4);
    Tape tape;
    Tensor loss = build_select_loss(tape, w, cfg, rng);
    CHECK(loss.value() == doctest::Approx(3.0 * -std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("literal form is the mean of p log p only") {
    SelectWorld w = make_select_world(3);
    w.h.weights[0] = Tensor::zeros({2, 2});
    w.h.biases[0] = Tensor::zeros({2});
    SelectConfig cfg;
    cfg.reg1_form = Reg1Form::literal;
    cfg.lambda_s = 0.0;
    cfg.lambda_reg2 = 0.0;
    cfg.lambda_reg1 = 2.0;
    Rng rng(4);
    Tape tape;
    Tensor loss = build_select_loss(tape, w, cfg, rng);
    CHECK(loss.value() == doctest::Approx(2.0 * 0.5 * std::log(0.5)).epsilon(1e-9));
  }
  SUBCASE("one-sided partitions skip the triplet term instead of failing") {
    SelectWorld w = make_select_world(7);
    // heavy select bias: everything lands in the selected set
    w.h.weights[0] = Tensor::zeros({2, 2});
    w.h.biases[0] = Tensor({2}, {80.0, 0.0});
    SelectConfig cfg;
    cfg.lambda_s = 5.0;  // would dominate if the hinge were computed
    cfg.lambda_reg1 = 0.0;
    cfg.lambda_reg2 = 0.0;
    Rng rng(8);
    Tape tape;
    Tensor loss = build_select_loss(tape, w, cfg, rng);
    CHECK(loss.value() == 0.0);
  }
  SUBCASE("uniform target predictions zero the diversity term") {
    SelectWorld w = make_select_world(5);
    SelectConfig cfg;
    cfg.lambda_s = 0.0;
    cfg.lambda_reg1 = 0.0;
    cfg.lambda_reg2 = 2.0;
    Rng rng(6);
    Tape tape;
    AttachedMlp ah = attach(tape, w.h);
    Tensor gs = tape.leaf(Tensor::zeros({8, 3}));
    Tensor gt = tape.leaf(Tensor::zeros({6, 3}));
    Tensor logits_t = log_softmax(gt);  // uniform rows
    BatchPartition part = partition_batch(ah, w.xs, 1.0, rng);
    Tensor loss = select_loss(part, gs, gt, logits_t, cfg);
    CHECK(std::fabs(loss.value()) < 1e-12);
  }
}

TEST_CASE("selector receives no gradient from other losses") {
  SelectWorld w = make_select_world(9);
  Rng rng(10);
  Tape tape;
  AttachedMlp ag = attach(tape, w.g);
  AttachedMlp ah = attach(tape, w.h);
  BatchPartition part = partition_batch(ah, w.xs, 1.0, rng);
  // a supervised-style loss over the selected rows, indices detached
  Tensor gs = mlp_forward(ag, w.xs);
  Tensor loss = part.selected.empty() ? sum(square(gs)) : sum(square(gather_rows(gs, part.selected)));
  GradMap gm = tape.backward(loss);
  for (const auto& wt : ah.weights) {
    Tensor g = gm.grad(wt);
    for (std::int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0);
  }
  for (const auto& bt : ah.biases) {
    Tensor g = gm.grad(bt);
    for (std::int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0);
  }
}

TEST_CASE("minimizing select_loss drives shared-class probability up") {
  // frozen, separable features: shared samples sit on the targets, the rest
  // far away; 200 steps of plain gradient descent on the selector only
  const std::int64_t n = 16;
  std::vector<double> xs, xt;
  Rng rng(20240105);
  for (std::int64_t i = 0; i < n; ++i) {
    const bool shared = i < n / 2;
    xs.push_back(shared ? rng.uniform() : 8.0 + rng.uniform());
    xs.push_back(shared ? rng.uniform() : 8.0 + rng.uniform());
  }
  for (int j = 0; j < 8; ++j) {
    xt.push_back(rng.uniform());
    xt.push_back(rng.uniform());
  }
  Tensor sx({n, 2}, xs);
  Tensor tx({8, 2}, xt);

  MlpParams h;
  h.weights.push_back(Tensor::zeros({2, 2}));
  h.biases.push_back(Tensor::zeros({2}));

  SelectConfig cfg;
  cfg.tau = 1.0;
  cfg.margin = 10.0;
  cfg.lambda_s = 1.0;
  cfg.lambda_reg1 = 0.1;
  cfg.lambda_reg2 = 0.0;

  auto mean_shared_p = [&]() {
    Tensor logits = mlp_forward(h, sx);
    double acc = 0;
    for (std::int64_t i = 0; i < n / 2; ++i) {
      acc += 1.0 / (1.0 + std::exp(-(logits.at(i, 0) - logits.at(i, 1))));
    }
    return acc / static_cast<double>(n / 2);
  };

  double prev = mean_shared_p();
  CHECK(prev == doctest::Approx(0.5));
  int increases = 0;
  const int steps = 300;
  for (int step = 0; step < steps; ++step) {
    Tape tape;
    AttachedMlp ah = attach(tape, h);
    Tensor gs = tape.leaf(sx);  // frozen features: the raw coordinates
    Tensor gt = tape.leaf(tx);
    Tensor logits_t = log_softmax(gt);
    BatchPartition part = partition_batch(ah, sx, cfg.tau, rng);
    Tensor loss = select_loss(part, gs, gt, logits_t, cfg);
    GradMap gm = tape.backward(loss);
    const double lr = 0.05;
    for (std::size_t l = 0; l < h.weights.size(); ++l) {
      Tensor gw = gm.grad(ah.weights[l]);
      Tensor gb = gm.grad(ah.biases[l]);
      for (std::size_t i = 0; i < h.weights[l].raw().size(); ++i) {
        h.weights[l].raw()[i] -= lr * gw[static_cast<std::int64_t>(i)];
      }
      for (std::size_t i = 0; i < h.biases[l].raw().size(); ++i) {
        h.biases[l].raw()[i] -= lr * gb[static_cast<std::int64_t>(i)];
      }
    }
    const double now = mean_shared_p();
    if (now > prev) ++increases;
    prev = now;
  }
  // direction: overwhelmingly increasing and ends decisively above the start
  CHECK(increases > steps * 3 / 4);
  CHECK(prev > 0.9);
}
