#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slm/autodiff.hpp"
#include "slm/common.hpp"

// The four trainable networks: feature extractor, classifier head, domain
// discriminator, and the sample selector (which has its own trunk and never
// sees extractor features). All are plain MLPs: affine + relu on hidden
// layers, linear output.

namespace slm {

struct LayerSpec {
  std::vector<int> widths;  // input width, hidden widths..., output width
};

inline void validate_layer_spec(const LayerSpec& spec) {
  if (spec.widths.size() < 2) throw ContractViolation("LayerSpec: need at least input and output widths");
  for (int w : spec.widths) {
    if (w < 1) throw ContractViolation("LayerSpec: widths must be >= 1");
  }
}

struct MlpParams {
  std::vector<Tensor> weights;  // layer i: [out x in]
  std::vector<Tensor> biases;   // layer i: [out]

  int in_dim() const { return static_cast<int>(weights.front().shape()[1]); }
  int out_dim() const { return static_cast<int>(weights.back().shape()[0]); }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& w : weights) n += w.numel();
    for (const auto& b : biases) n += b.numel();
    return n;
  }
};

// Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases.
inline MlpParams init_params(const LayerSpec& spec, Rng& rng) {
  validate_layer_spec(spec);
  MlpParams p;
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    const std::int64_t fan_in = spec.widths[l];
    const std::int64_t fan_out = spec.widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> w(static_cast<std::size_t>(fan_in * fan_out));
    for (auto& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
    p.weights.emplace_back(Shape{fan_out, fan_in}, std::move(w));
    p.biases.push_back(Tensor::zeros({fan_out}));
  }
  return p;
}

// Tape-attached view of an MLP's parameters for one optimization step.
struct AttachedMlp {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::vector<int> leaf_nodes() const {
    std::vector<int> out;
    for (const auto& w : weights) out.push_back(w.node());
    for (const auto& b : biases) out.push_back(b.node());
    return out;
  }
};

inline AttachedMlp attach(Tape& tape, const MlpParams& p) {
  AttachedMlp a;
  for (const auto& w : p.weights) a.weights.push_back(tape.leaf(w));
  for (const auto& b : p.biases) a.biases.push_back(tape.leaf(b));
  return a;
}

namespace detail {

template <class Params>
Tensor mlp_forward_impl(const Params& p, const Tensor& x) {
  if (x.shape().size() != 2 || x.shape()[1] != p.weights.front().shape()[1]) {
    throw ContractViolation("mlp_forward: input width " + shape_str(x.shape()) + " does not match fan-in " +
                            std::to_string(p.weights.front().shape()[1]));
  }
  Tensor h = x;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    h = add(matmul(h, p.weights[l], /*trans_b=*/true), p.biases[l]);
    if (l + 1 < p.weights.size()) h = relu(h);
  }
  return h;
}

}  // namespace detail

inline Tensor mlp_forward(const AttachedMlp& p, const Tensor& x) { return detail::mlp_forward_impl(p, x); }
inline Tensor mlp_forward(const MlpParams& p, const Tensor& x) { return detail::mlp_forward_impl(p, x); }

struct ModelConfig {
  std::vector<int> hidden_g{128, 128};
  int feature_dim = 32;
  std::vector<int> hidden_f{};  // single linear head when empty
  std::vector<int> hidden_d{64, 64};
  std::vector<int> hidden_h{};  // linear selector head; see init_bundle
  bool per_domain_standardize = false;
};

struct ModelBundle {
  MlpParams g;  // input_dim -> feature_dim
  MlpParams f;  // feature_dim -> num_classes
  MlpParams d;  // feature_dim -> 1
  MlpParams h;  // input_dim -> 2, independent trunk on raw inputs
  int input_dim = 0;
  int feature_dim = 0;
  int num_classes = 0;
};

inline LayerSpec make_spec(int in, const std::vector<int>& hidden, int out) {
  LayerSpec s;
  s.widths.push_back(in);
  for (int h : hidden) s.widths.push_back(h);
  s.widths.push_back(out);
  return s;
}

// Initialization draws happen in a fixed order (g, f, d, h) so a shared seed
// yields identical extractor weights regardless of which modules train.
// The selector's output layer starts at zero: selection must begin as a fair
// coin flip per sample, otherwise the joint select/align dynamics entrench
// whatever assignment the random head happened to encode.
inline ModelBundle init_bundle(const ModelConfig& cfg, int input_dim, int num_classes, Rng& rng) {
  if (input_dim < 1) throw ContractViolation("init_bundle: input_dim must be >= 1");
  if (num_classes < 2) throw ContractViolation("init_bundle: need at least two classes");
  ModelBundle b;
  b.input_dim = input_dim;
  b.feature_dim = cfg.feature_dim;
  b.num_classes = num_classes;
  b.g = init_params(make_spec(input_dim, cfg.hidden_g, cfg.feature_dim), rng);
  b.f = init_params(make_spec(cfg.feature_dim, cfg.hidden_f, num_classes), rng);
  b.d = init_params(make_spec(cfg.feature_dim, cfg.hidden_d, 1), rng);
  b.h = init_params(make_spec(input_dim, cfg.hidden_h, 2), rng);
  b.h.weights.back() = Tensor::zeros(b.h.weights.back().shape());
  return b;
}

struct AttachedBundle {
  AttachedMlp g, f, d, h;
  bool has_h = false;
};

inline AttachedBundle attach(Tape& tape, const ModelBundle& b, bool with_selector) {
  AttachedBundle a;
  a.g = attach(tape, b.g);
  a.f = attach(tape, b.f);
  a.d = attach(tape, b.d);
  if (with_selector) {
    a.h = attach(tape, b.h);
    a.has_h = true;
  }
  return a;
}

}  // namespace slm
