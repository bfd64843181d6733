#include <doctest.h>

#include <cmath>

#include "slm/objective.hpp"

using namespace slm;

TEST_CASE("smooth_labels") {
  SUBCASE("epsilon zero is one-hot") {
    auto v = smooth_labels(2, 4, 0.0);
    CHECK(v == std::vector<double>{0, 0, 1, 0});
  }
  SUBCASE("formula example") {
    auto v = smooth_labels(0, 5, 0.2);
    CHECK(v[0] == doctest::Approx(0.8));
    for (int c = 1; c < 5; ++c) CHECK(v[static_cast<std::size_t>(c)] == doctest::Approx(0.05));
  }
  SUBCASE("always sums to one") {
    Rng rng(1);
    for (int rep = 0; rep < 100; ++rep) {
      const int C = 2 + static_cast<int>(rng.below(9));
      const int y = static_cast<int>(rng.below(C));
      const double eps = 0.99 * rng.uniform();
      auto v = smooth_labels(y, C, eps);
      double z = 0;
      for (double x : v) z += x;
      CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("contract errors") {
    CHECK_THROWS_AS(smooth_labels(0, 1, 0.1), ContractViolation);
    CHECK_THROWS_AS(smooth_labels(5, 5, 0.1), ContractViolation);
    CHECK_THROWS_AS(smooth_labels(0, 5, 1.0), ContractViolation);
  }
}

TEST_CASE("entropy_weight") {
  SUBCASE("one-hot prediction weighs 2") {
    CHECK(entropy_weight(std::vector<double>{1, 0, 0}) == doctest::Approx(2.0));
  }
  SUBCASE("uniform over C weighs 1 + 1/C") {
    for (int C : {2, 4, 10}) {
      std::vector<double> p(static_cast<std::size_t>(C), 1.0 / C);
      CHECK(entropy_weight(p) == doctest::Approx(1.0 + 1.0 / C).epsilon(1e-12));
    }
  }
  SUBCASE("always in (1, 2]") {
    Rng rng(2);
    for (int rep = 0; rep < 200; ++rep) {
      std::vector<double> p(5);
      double z = 0;
      for (auto& v : p) {
        v = rng.uniform() + 1e-6;
        z += v;
      }
      for (auto& v : p) v /= z;
      const double w = entropy_weight(p);
      CHECK(w > 1.0);
      CHECK(w <= 2.0);
    }
  }
}

TEST_CASE("supervised_loss") {
  SUBCASE("perfect one-hot predictions at epsilon zero cost nothing") {
    Tensor logits({2, 3}, {60, 0, 0, 0, 60, 0});
    std::vector<std::vector<double>> labels{{1, 0, 0}, {0, 1, 0}};
    CHECK(supervised_loss(log_softmax(logits), labels).value() == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("empty selection costs exactly zero") {
    CHECK(supervised_loss(Tensor::zeros({1, 3}), {}).value() == 0.0);
  }
  SUBCASE("uniform predictions cost ln C") {
    Tensor logits = Tensor::zeros({4, 5});
    std::vector<std::vector<double>> labels(4, smooth_labels(1, 5, 0.0));
    CHECK(supervised_loss(log_softmax(logits), labels).value() ==
          doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
}

TEST_CASE("adv_loss") {
  SUBCASE("uninformative discriminator sits at ln 2, weights normalize out") {
    Tensor zs = Tensor::zeros({4, 1});
    Tensor zt = Tensor::zeros({6, 1});
    std::vector<double> ws{1.3, 1.9, 1.1, 1.5};
    std::vector<double> wt(6, 1.7);
    Tensor loss = adv_loss(zs, zt, ws, wt);
    CHECK(loss.value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("equal weights reduce to the unweighted mean") {
    Tensor zs({2, 1}, {0.5, -0.7});
    Tensor zt({2, 1}, {0.2, 0.1});
    std::vector<double> flat(2, 1.0);
    const double expect =
        0.5 * (-(std::log(1 / (1 + std::exp(-0.5))) + std::log(1 / (1 + std::exp(0.7)))) / 2.0 -
               (std::log(1 - 1 / (1 + std::exp(-0.2))) + std::log(1 - 1 / (1 + std::exp(-0.1)))) / 2.0);
    CHECK(adv_loss(zs, zt, flat, flat).value() == doctest::Approx(expect).epsilon(1e-9));
  }
  SUBCASE("empty target side leaves only the source term") {
    Tensor zs = Tensor::zeros({3, 1});
    std::vector<double> ws(3, 1.0);
    Tensor loss = adv_loss(zs, std::nullopt, ws, {});
    CHECK(loss.value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("both sides empty is zero") {
    CHECK(adv_loss(std::nullopt, std::nullopt, {}, {}).value() == 0.0);
  }
  SUBCASE("invariant to scaling all weights on a side") {
    Tensor zs({3, 1}, {0.4, -0.2, 0.9});
    Tensor zt({2, 1}, {-0.5, 0.3});
    std::vector<double> ws{1.0, 1.5, 2.0}, wt{1.2, 1.9};
    const double base = adv_loss(zs, zt, ws, wt).value();
    for (auto& w : ws) w *= 7.0;
    for (auto& w : wt) w *= 0.013;
    CHECK(adv_loss(zs, zt, ws, wt).value() == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("total_loss breakdown") {
  Tape tape;
  Tensor a = tape.leaf(Tensor::scalar(1.0));
  Tensor sup = square(a);            // 1
  Tensor adv = scale(a, 2.0);        // 2
  Tensor sel = Tensor::scalar(3.0);  // constant terms participate too
  Tensor lab = Tensor::scalar(0.0);
  Tensor mc = Tensor::scalar(0.25);
  Tensor md = Tensor::scalar(0.5);
  TermWeights w;
  TotalLoss t = total_loss(sup, adv, sel, lab, mc, md, w);
  CHECK(t.breakdown.total == doctest::Approx(6.75).epsilon(1e-12));
  const double sum_parts = t.breakdown.sup + t.breakdown.adv + t.breakdown.select + t.breakdown.label +
                           t.breakdown.mix_cls + t.breakdown.mix_dom;
  CHECK(std::fabs(sum_parts - t.breakdown.total) < 1e-9);

  SUBCASE("a toggled-off module zeroes exactly its term") {
    TotalLoss t2 = total_loss(sup, adv, Tensor::scalar(0.0), lab, mc, md, w);
    CHECK(t2.breakdown.select == 0.0);
    CHECK(t2.breakdown.sup == t.breakdown.sup);
    CHECK(t2.breakdown.total == doctest::Approx(t.breakdown.total - 3.0).epsilon(1e-12));
  }
  SUBCASE("all terms zero gives zero") {
    Tensor z = Tensor::scalar(0.0);
    CHECK(total_loss(z, z, z, z, z, z, w).breakdown.total == 0.0);
  }
}
