#include <doctest.h>

#include "slm/models.hpp"

using namespace slm;

TEST_CASE("init_params is deterministic and respects the stated bounds") {
  LayerSpec spec{{6, 4, 3}};
  Rng r1(99), r2(99);
  MlpParams a = init_params(spec, r1);
  MlpParams b = init_params(spec, r2);
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    for (std::int64_t i = 0; i < a.weights[l].numel(); ++i) {
      CHECK(a.weights[l][i] == b.weights[l][i]);  // bitwise identical
    }
  }
  // fan_in 6: bound sqrt(6/6) = 1
  for (std::int64_t i = 0; i < a.weights[0].numel(); ++i) {
    CHECK(std::fabs(a.weights[0][i]) <= 1.0);
  }
  for (const auto& bias : a.biases) {
    for (std::int64_t i = 0; i < bias.numel(); ++i) CHECK(bias[i] == 0.0);
  }
  CHECK(a.param_count() == 6 * 4 + 4 + 4 * 3 + 3);
}

TEST_CASE("layer spec validation") {
  CHECK_THROWS_AS(validate_layer_spec(LayerSpec{{4}}), ContractViolation);
  CHECK_THROWS_AS(validate_layer_spec(LayerSpec{{4, 0}}), ContractViolation);
  CHECK_NOTHROW(validate_layer_spec(LayerSpec{{4, 2}}));  // plain linear layer
}

TEST_CASE("mlp_forward behaviors") {
  SUBCASE("zero parameters give zero output") {
    MlpParams p;
    p.weights.push_back(Tensor::zeros({3, 2}));
    p.biases.push_back(Tensor::zeros({3}));
    Tensor out = mlp_forward(p, Tensor({2, 2}, {1, 2, 3, 4}));
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.0);
  }
  SUBCASE("identity layer passes input through") {
    MlpParams p;
    p.weights.push_back(Tensor({2, 2}, {1, 0, 0, 1}));
    p.biases.push_back(Tensor::zeros({2}));
    Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor out = mlp_forward(p, x);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == x[i]);
  }
  SUBCASE("width mismatch throws") {
    MlpParams p;
    p.weights.push_back(Tensor::zeros({3, 2}));
    p.biases.push_back(Tensor::zeros({3}));
    CHECK_THROWS_AS(mlp_forward(p, Tensor({1, 3}, {1, 2, 3})), ContractViolation);
  }
  SUBCASE("a batch of two equals two batches of one") {
    Rng rng(5);
    MlpParams p = init_params(LayerSpec{{3, 5, 2}}, rng);
    Tensor x({2, 3}, {0.3, -1.0, 2.0, 0.7, 0.1, -0.4});
    Tensor both = mlp_forward(p, x);
    Tensor first = mlp_forward(p, Tensor({1, 3}, {0.3, -1.0, 2.0}));
    Tensor second = mlp_forward(p, Tensor({1, 3}, {0.7, 0.1, -0.4}));
    for (std::int64_t c = 0; c < 2; ++c) {
      CHECK(both.at(0, c) == first.at(0, c));
      CHECK(both.at(1, c) == second.at(0, c));
    }
  }
}

TEST_CASE("bundle shapes and the classifier head") {
  ModelConfig mc;
  Rng rng(11);
  ModelBundle b = init_bundle(mc, 2, 8, rng);
  CHECK(b.f.out_dim() == 8);
  CHECK(b.f.weights.size() == 1);  // single linear head by default
  CHECK(b.h.in_dim() == 2);
  CHECK(b.h.out_dim() == 2);
  CHECK(b.d.out_dim() == 1);
  // selector output layer starts neutral
  for (std::int64_t i = 0; i < b.h.weights.back().numel(); ++i) CHECK(b.h.weights.back()[i] == 0.0);

  // logits shape is batch x classes for any batch size
  for (std::int64_t n : {1, 3, 17}) {
    Tensor x = Tensor::zeros({n, 2});
    Tensor logits = mlp_forward(b.f, mlp_forward(b.g, x));
    CHECK(logits.shape() == Shape{n, 8});
  }
}

TEST_CASE("grl gradient relation on a composite loss") {
  Rng rng(21);
  MlpParams g = init_params(LayerSpec{{2, 4, 3}}, rng);
  Tensor x({5, 2}, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8, -0.9, 1.0});
  const double lam = 0.37;

  auto run = [&](bool use_grl) {
    Tape tape;
    AttachedMlp ag = attach(tape, g);
    Tensor feat = mlp_forward(ag, x);
    Tensor out = use_grl ? grl(feat, lam) : feat;
    GradMap gm = tape.backward(sum(square(out)));
    return gm.grad(ag.weights[0]);
  };
  Tensor with = run(true);
  Tensor without = run(false);
  for (std::int64_t i = 0; i < with.numel(); ++i) {
    CHECK(with[i] == doctest::Approx(-lam * without[i]).epsilon(1e-10));
  }
}

TEST_CASE("grl rejects lambda outside [0, 1]") {
  CHECK_THROWS_AS(grl(Tensor::scalar(1.0), -0.1), ContractViolation);
  CHECK_THROWS_AS(grl(Tensor::scalar(1.0), 1.5), ContractViolation);
}
