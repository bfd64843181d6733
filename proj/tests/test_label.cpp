#include <doctest.h>

#include <cmath>

#include "slm/label.hpp"

using namespace slm;

TEST_CASE("sharpen examples") {
  SUBCASE("alpha 1 is the identity") {
    std::vector<double> p{0.1, 0.2, 0.3, 0.4};
    auto out = sharpen(p, 1.0);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::fabs(out[i] - p[i]) < 1e-12);
  }
  SUBCASE("uniform stays uniform at any alpha") {
    std::vector<double> p{0.25, 0.25, 0.25, 0.25};
    for (double alpha : {1.0, 0.5, 0.1, 1e-3}) {
      auto out = sharpen(p, alpha);
      for (double v : out) CHECK(v == doctest::Approx(0.25).epsilon(1e-9));
    }
  }
  SUBCASE("hand oracle at alpha 0.5") {
    // p^2 renormalized: (0.49, 0.09) / 0.58
    auto out = sharpen(std::vector<double>{0.7, 0.3}, 0.5);
    CHECK(out[0] == doctest::Approx(0.49 / 0.58).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.09 / 0.58).epsilon(1e-12));
  }
  SUBCASE("tiny alpha is numerically one-hot when the max is distinct") {
    Rng rng(20240110);
    int checked = 0;
    while (checked < 50) {
      std::vector<double> p(5);
      double z = 0;
      for (auto& v : p) {
        v = 0.05 + rng.uniform();
        z += v;
      }
      for (auto& v : p) v /= z;
      std::vector<double> sorted = p;
      std::sort(sorted.rbegin(), sorted.rend());
      if (sorted[1] > 0.98 * sorted[0]) continue;  // a near-tie defeats any finite sharpening
      auto out = sharpen(p, 1e-3);
      CHECK(*std::max_element(out.begin(), out.end()) >= 1.0 - 1e-6);
      ++checked;
    }
  }
  SUBCASE("argmax is preserved") {
    Rng rng(20240111);
    for (int rep = 0; rep < 200; ++rep) {
      std::vector<double> p(6);
      double z = 0;
      for (auto& v : p) {
        v = 0.01 + rng.uniform();
        z += v;
      }
      for (auto& v : p) v /= z;
      const auto before = std::max_element(p.begin(), p.end()) - p.begin();
      const double alpha = 0.05 + 0.95 * rng.uniform();
      auto out = sharpen(p, alpha);
      const auto after = std::max_element(out.begin(), out.end()) - out.begin();
      CHECK(before == after);
    }
  }
  SUBCASE("bad arguments") {
    CHECK_THROWS_AS(sharpen(std::vector<double>{0.5, 0.5}, 0.0), ContractViolation);
    CHECK_THROWS_AS(sharpen(std::vector<double>{}, 0.5), ContractViolation);
  }
}

namespace {

ModelBundle tiny_bundle(std::uint64_t seed) {
  ModelConfig mc;
  mc.hidden_g = {4};
  mc.feature_dim = 3;
  mc.hidden_d = {3};
  mc.hidden_h = {};
  Rng rng(seed);
  return init_bundle(mc, 2, 4, rng);
}

}  // namespace

TEST_CASE("pseudo_label_batch gating") {
  ModelBundle b = tiny_bundle(31);
  Tensor xt({5, 2}, {0.1, 0.2, 0.3, -0.4, 0.5, 0.6, -0.7, 0.8, 0.9, 1.0});

  SUBCASE("threshold zero accepts everything") {
    SharpenConfig cfg;
    cfg.threshold = 0.0;
    auto pls = pseudo_label_batch(b, xt, cfg);
    CHECK(pls.size() == 5);
    for (const auto& pl : pls) {
      CHECK(pl.accepted);
      double z = 0;
      for (double v : pl.probs) z += v;
      CHECK(z == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  SUBCASE("threshold above every confidence accepts nothing") {
    SharpenConfig cfg;
    cfg.threshold = 0.999999;
    auto pls = pseudo_label_batch(b, xt, cfg);
    for (const auto& pl : pls) CHECK_FALSE(pl.accepted);
  }
  SUBCASE("hard mode emits one-hot labels") {
    SharpenConfig cfg;
    cfg.threshold = 0.0;
    cfg.hard = true;
    auto pls = pseudo_label_batch(b, xt, cfg);
    for (const auto& pl : pls) {
      int ones = 0;
      for (double v : pl.probs) {
        CHECK((v == 0.0 || v == 1.0));
        ones += v == 1.0;
      }
      CHECK(ones == 1);
    }
  }
  SUBCASE("acceptance gates on the pre-sharpen confidence") {
    SharpenConfig cfg;
    cfg.threshold = 0.0;
    auto pls = pseudo_label_batch(b, xt, cfg);
    for (const auto& pl : pls) {
      CHECK(pl.confidence >= 1.0 / 4.0);  // max softmax over 4 classes
      CHECK(pl.confidence <= 1.0);
    }
  }
}

TEST_CASE("label_loss values and gradient hygiene") {
  SUBCASE("one-hot predictions matching one-hot labels give zero") {
    // logits heavily peaked on the label class
    Tensor logits({2, 3}, {50.0, 0.0, 0.0, 0.0, 50.0, 0.0});
    std::vector<SoftPseudoLabel> pls(2);
    pls[0] = {{1.0, 0.0, 0.0}, 1.0, true};
    pls[1] = {{0.0, 1.0, 0.0}, 1.0, true};
    Tensor loss = label_loss(log_softmax(logits), pls);
    CHECK(loss.value() == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("uniform labels on uniform predictions cost ln C") {
    Tensor logits = Tensor::zeros({3, 4});
    std::vector<SoftPseudoLabel> pls(3);
    for (auto& pl : pls) pl = {{0.25, 0.25, 0.25, 0.25}, 0.25, true};
    Tensor loss = label_loss(log_softmax(logits), pls);
    CHECK(loss.value() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("no accepted samples give exactly zero") {
    Tensor logits = Tensor::zeros({3, 4});
    std::vector<SoftPseudoLabel> pls(3);
    for (auto& pl : pls) pl.accepted = false;
    CHECK(label_loss(log_softmax(logits), pls).value() == 0.0);
  }
  SUBCASE("gradient matches finite differences and labels stay constant") {
    ModelBundle b = tiny_bundle(33);
    Tensor xt({4, 2}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8});
    SharpenConfig cfg;
    cfg.threshold = 0.0;
    auto pls = pseudo_label_batch(b, xt, cfg);
    auto f = [&](Tape& tape, const Tensor& w0) {
      AttachedMlp ag;
      ag.weights = {w0, b.g.weights[1].detached()};
      ag.biases = {b.g.biases[0].detached(), b.g.biases[1].detached()};
      AttachedMlp af = attach(tape, b.f);
      return label_loss(log_softmax(mlp_forward(af, mlp_forward(ag, xt))), pls);
    };
    CHECK(grad_check(f, b.g.weights[0].detached(), 1e-5) < 1e-4);
    // perturbing the label constants cannot appear on the tape: the loss is
    // built from freshly copied constant tensors, so no tape node holds them
    Tape tape;
    Tensor probed = tape.leaf(b.g.weights[0]);
    Tensor loss = f(tape, probed);
    GradMap gm = tape.backward(loss);
    (void)gm;
    for (const auto& pl : pls) {
      double z = 0;
      for (double v : pl.probs) z += v;
      CHECK(z == doctest::Approx(1.0).epsilon(1e-9));  // labels untouched by backward
    }
  }
}
