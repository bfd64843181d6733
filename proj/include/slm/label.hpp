#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "slm/autodiff.hpp"
#include "slm/common.hpp"
#include "slm/models.hpp"

// Self-training targets: temperature-sharpened softmax predictions on the
// target batch, gated by a confidence threshold on the pre-sharpen maximum.
// Labels are recomputed from the live model every batch and treated as
// constants; no gradient ever flows into them.

namespace slm {

struct SharpenConfig {
  double alpha = 0.1;      // softness; 1 is the identity, smaller is sharper
  double threshold = 0.3;  // acceptance gate on pre-sharpen confidence
  bool hard = false;       // replace the soft target with a one-hot argmax
  // Self-training engages after this fraction of training, once adversarial
  // alignment has moved the target features somewhere worth trusting.
  double warmup_frac = 0.5;
};

struct SoftPseudoLabel {
  std::vector<double> probs;
  double confidence = 0.0;  // max softmax probability before sharpening
  bool accepted = false;
};

// p^(1/alpha), renormalized. Evaluated in log space so extreme alphas stay
// finite.
inline std::vector<double> sharpen(std::span<const double> p, double alpha) {
  if (!(alpha > 0.0)) throw ContractViolation("sharpen: alpha must be positive");
  if (p.empty()) throw ContractViolation("sharpen: empty distribution");
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    logs[i] = std::log(std::max(p[i], 1e-300));
    mx = std::max(mx, logs[i]);
  }
  std::vector<double> out(p.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = std::exp((logs[i] - mx) / alpha);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

namespace detail {

inline std::vector<double> softmax_row(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

}  // namespace detail

// Frozen forward of F(G(x)) on the target batch; no tape involvement.
inline std::vector<SoftPseudoLabel> pseudo_label_batch(const ModelBundle& bundle, const Tensor& target_x,
                                                       const SharpenConfig& cfg) {
  if (target_x.rows() == 0) throw ContractViolation("pseudo_label_batch: empty batch");
  Tensor logits = mlp_forward(bundle.f, mlp_forward(bundle.g, target_x.detached()));
  const std::int64_t m = logits.rows();
  const std::int64_t c = logits.cols();
  std::vector<SoftPseudoLabel> out(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i) {
    std::span<const double> row(logits.data().data() + i * c, static_cast<std::size_t>(c));
    std::vector<double> probs = detail::softmax_row(row);
    auto& pl = out[static_cast<std::size_t>(i)];
    pl.confidence = *std::max_element(probs.begin(), probs.end());
    pl.accepted = pl.confidence >= cfg.threshold;
    if (cfg.hard) {
      const std::size_t arg =
          static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      pl.probs.assign(probs.size(), 0.0);
      pl.probs[arg] = 1.0;
    } else {
      pl.probs = sharpen(probs, cfg.alpha);
    }
  }
  return out;
}

// Mean soft cross-entropy over the accepted targets; exact zero when nothing
// was accepted. target_log_probs are tape log-softmax outputs for the same
// batch and step the labels were drawn from.
inline Tensor label_loss(const Tensor& target_log_probs, const std::vector<SoftPseudoLabel>& labels) {
  if (static_cast<std::int64_t>(labels.size()) != target_log_probs.rows()) {
    throw ContractViolation("label_loss: labels must cover the target batch");
  }
  std::vector<int> accepted;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].accepted) accepted.push_back(static_cast<int>(i));
  }
  if (accepted.empty()) return Tensor::scalar(0.0);
  const std::int64_t c = target_log_probs.cols();
  std::vector<double> target(accepted.size() * static_cast<std::size_t>(c));
  for (std::size_t k = 0; k < accepted.size(); ++k) {
    const auto& probs = labels[static_cast<std::size_t>(accepted[k])].probs;
    std::copy(probs.begin(), probs.end(), target.begin() + static_cast<std::ptrdiff_t>(k * static_cast<std::size_t>(c)));
  }
  Tensor rows = gather_rows(target_log_probs, accepted);
  Tensor weights({static_cast<std::int64_t>(accepted.size()), c}, std::move(target));
  return scale(sum(mul(weights, rows)), -1.0 / static_cast<double>(accepted.size()));
}

}  // namespace slm
