#pragma once

#include <optional>
#include <span>
#include <vector>

#include "slm/autodiff.hpp"
#include "slm/common.hpp"

// Supervised and adversarial pieces of the joint objective plus the
// per-step breakdown record. The total is an unweighted sum of the six
// terms; optional per-term multipliers exist for ablations and default to 1.

namespace slm {

struct SmoothingConfig {
  double epsilon = 0.2;
};

// (1-eps) on the true class, eps/(C-1) elsewhere
inline std::vector<double> smooth_labels(int y, int num_classes, double epsilon) {
  if (num_classes < 2) throw ContractViolation("smooth_labels: need at least two classes");
  if (y < 0 || y >= num_classes) throw ContractViolation("smooth_labels: class index out of range");
  if (epsilon < 0.0 || epsilon >= 1.0) throw ContractViolation("smooth_labels: epsilon must lie in [0, 1)");
  std::vector<double> out(static_cast<std::size_t>(num_classes), epsilon / static_cast<double>(num_classes - 1));
  out[static_cast<std::size_t>(y)] = 1.0 - epsilon;
  return out;
}

// 1 + exp(-H(p)) with natural-log entropy; confident predictions weigh more
inline double entropy_weight(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return 1.0 + std::exp(-h);
}

// Mean soft cross-entropy of the selected source rows against smoothed labels.
// sel_log_probs: tape log-softmax rows for exactly those samples.
inline Tensor supervised_loss(const Tensor& sel_log_probs, const std::vector<std::vector<double>>& smoothed) {
  if (smoothed.empty()) return Tensor::scalar(0.0);
  if (static_cast<std::int64_t>(smoothed.size()) != sel_log_probs.rows()) {
    throw ContractViolation("supervised_loss: one label row per selected sample");
  }
  const std::int64_t n = sel_log_probs.rows();
  const std::int64_t c = sel_log_probs.cols();
  std::vector<double> target(static_cast<std::size_t>(n * c));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& row = smoothed[static_cast<std::size_t>(i)];
    if (static_cast<std::int64_t>(row.size()) != c) throw ContractViolation("supervised_loss: label width mismatch");
    std::copy(row.begin(), row.end(), target.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return scale(sum(mul(Tensor({n, c}, std::move(target)), sel_log_probs)), -1.0 / static_cast<double>(n));
}

// Weighted domain BCE. Source rows target domain label 1, target rows 0;
// each side's weights are normalized to sum to one and present sides are
// averaged, so two balanced sides with an uninformative discriminator sit at
// ln 2. An absent side contributes nothing.
inline Tensor adv_loss(const std::optional<Tensor>& d_logits_src, const std::optional<Tensor>& d_logits_tgt,
                       std::span<const double> w_src, std::span<const double> w_tgt) {
  auto side = [](const Tensor& logits, std::span<const double> w, bool flip, const char* name) {
    if (logits.numel() != static_cast<std::int64_t>(w.size())) {
      throw ContractViolation(std::string("adv_loss: one weight per ") + name + " sample");
    }
    double z = 0.0;
    for (double v : w) z += v;
    if (!(z > 0.0)) throw ContractViolation(std::string("adv_loss: ") + name + " weights must have positive sum");
    std::vector<double> norm(w.begin(), w.end());
    for (auto& v : norm) v /= z;
    Tensor weights({logits.numel(), 1}, std::move(norm));
    Tensor z_oriented = flip ? scale(logits, -1.0) : logits;
    return scale(sum(mul(weights, log(sigmoid(z_oriented)))), -1.0);
  };
  int sides = 0;
  Tensor total = Tensor::scalar(0.0);
  if (d_logits_src.has_value()) {
    total = add(total, side(*d_logits_src, w_src, false, "source"));
    ++sides;
  }
  if (d_logits_tgt.has_value()) {
    total = add(total, side(*d_logits_tgt, w_tgt, true, "target"));
    ++sides;
  }
  if (sides == 0) return Tensor::scalar(0.0);
  return scale(total, 1.0 / static_cast<double>(sides));
}

struct TermWeights {
  double sup = 1.0;
  double adv = 1.0;
  double select = 1.0;
  double label = 1.0;
  double mix_cls = 1.0;
  double mix_dom = 1.0;
};

struct LossBreakdown {
  double sup = 0.0;
  double adv = 0.0;
  double select = 0.0;
  double label = 0.0;
  double mix_cls = 0.0;
  double mix_dom = 0.0;
  double total = 0.0;
  int selected_count = 0;
  int discarded_count = 0;
  int accepted_count = 0;
};

struct TotalLoss {
  Tensor value;
  LossBreakdown breakdown;
};

// Weighted sum on the step's tape. Breakdown fields hold the multiplied
// terms, so their sum reproduces the total by construction.
inline TotalLoss total_loss(const Tensor& sup, const Tensor& adv, const Tensor& select, const Tensor& label,
                            const Tensor& mix_cls, const Tensor& mix_dom, const TermWeights& w) {
  TotalLoss out;
  Tensor t = scale(sup, w.sup);
  t = add(t, scale(adv, w.adv));
  t = add(t, scale(select, w.select));
  t = add(t, scale(label, w.label));
  t = add(t, scale(mix_cls, w.mix_cls));
  t = add(t, scale(mix_dom, w.mix_dom));
  out.value = t;
  out.breakdown.sup = sup.value() * w.sup;
  out.breakdown.adv = adv.value() * w.adv;
  out.breakdown.select = select.value() * w.select;
  out.breakdown.label = label.value() * w.label;
  out.breakdown.mix_cls = mix_cls.value() * w.mix_cls;
  out.breakdown.mix_dom = mix_dom.value() * w.mix_dom;
  out.breakdown.total = out.value.value();
  return out;
}

}  // namespace slm
