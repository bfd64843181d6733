#pragma once

#include <utility>
#include <vector>

#include "slm/autodiff.hpp"
#include "slm/common.hpp"
#include "slm/models.hpp"

// Source-sample selection. The selector emits two logits per sample; a
// Gumbel-Softmax draw turns them into a soft (select, discard) pair and a
// hard bit. The hard bit partitions the batch; a straight-through scalar
// (hard value forward, soft gradient backward) carries the selection signal
// into the selector through the triplet loss and nowhere else.

namespace slm {

enum class Reg1Form {
  batch_rate,  // binary entropy of the batch-mean select probability
  per_sample,  // batch mean of per-sample binary entropies
  literal,     // batch mean of p*log(p) only
};

struct SelectConfig {
  double tau = 1.0;
  double margin = 20.0;
  double lambda_s = 0.01;
  double lambda_reg1 = 10.0;
  double lambda_reg2 = 0.1;
  Reg1Form reg1_form = Reg1Form::batch_rate;
  bool use_hausdorff = true;
  // Selection engages after this fraction of training (select-all before),
  // once the extractor's geometry reflects class structure rather than the
  // random initialization.
  double warmup_frac = 0.10;
};

struct SelectionDecision {
  double soft_select = 0.0;   // in (0,1); soft_select + soft_discard == 1
  double soft_discard = 0.0;
  int hard = 0;               // 1 = select; equals argmax of the soft pair
  Tensor st_value;            // scalar; hard forward, soft gradient backward
};

constexpr double kSoftClamp = 1e-12;

// Binary Gumbel-Softmax with explicit noise, for injection in tests.
inline SelectionDecision gumbel_softmax_from_noise(std::pair<double, double> log_alpha,
                                                   std::pair<double, double> g, double tau) {
  if (!(tau > 0.0)) throw ContractViolation("gumbel_softmax: tau must be positive");
  const double zs = log_alpha.first + g.first;
  const double zd = log_alpha.second + g.second;
  const double diff = (zs - zd) / tau;
  double soft = diff >= 0.0 ? 1.0 / (1.0 + std::exp(-diff)) : std::exp(diff) / (1.0 + std::exp(diff));
  soft = std::min(std::max(soft, kSoftClamp), 1.0 - kSoftClamp);
  SelectionDecision d;
  d.soft_select = soft;
  d.soft_discard = 1.0 - soft;
  d.hard = zs >= zd ? 1 : 0;
  d.st_value = Tensor::scalar(static_cast<double>(d.hard));
  return d;
}

inline SelectionDecision gumbel_softmax_sample(std::pair<double, double> log_alpha, double tau, Rng& rng) {
  const double g0 = rng.gumbel();
  const double g1 = rng.gumbel();
  return gumbel_softmax_from_noise(log_alpha, {g0, g1}, tau);
}

struct BatchPartition {
  std::vector<int> selected;   // row indices into the source batch
  std::vector<int> discarded;
  std::vector<SelectionDecision> decisions;  // one per row
  Tensor st_column;            // [b x 1]; forward equals the hard bits
  Tensor soft_column;          // [b x 1]; noised relaxation behind the straight-through path
  Tensor prob_column;          // [b x 1]; clean select probabilities sigma(logit diff)
  bool has_st = false;
};

// Everything selected, no tape involvement. The select-disabled path.
inline BatchPartition select_all(int batch) {
  BatchPartition p;
  p.selected.resize(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) p.selected[static_cast<std::size_t>(i)] = i;
  p.decisions.resize(static_cast<std::size_t>(batch));
  for (auto& d : p.decisions) {
    d.soft_select = 1.0 - kSoftClamp;
    d.soft_discard = kSoftClamp;
    d.hard = 1;
    d.st_value = Tensor::scalar(1.0);
  }
  return p;
}

// Per-sample Gumbel-Softmax over the selector's logits. The straight-through
// column rides the selector's tape: sigmoid((logit_diff + gumbel_diff)/tau)
// plus a constant correction so the forward value is exactly the hard bit.
inline BatchPartition partition_batch(const AttachedMlp& selector, const Tensor& source_x, double tau,
                                      Rng& rng) {
  if (!(tau > 0.0)) throw ContractViolation("partition_batch: tau must be positive");
  const std::int64_t b = source_x.rows();
  if (b == 0) throw ContractViolation("partition_batch: empty batch");
  Tensor logits = mlp_forward(selector, source_x);  // [b x 2], column 0 = select
  Tensor diff = matmul(logits, Tensor({2, 1}, {1.0, -1.0}));
  Tensor prob = sigmoid(diff);  // noise-free select probability, for the regularizer

  std::vector<double> noise(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    const double g0 = rng.gumbel();
    const double g1 = rng.gumbel();
    noise[static_cast<std::size_t>(i)] = g0 - g1;
  }
  Tensor z = scale(add(diff, Tensor({b, 1}, noise)), 1.0 / tau);
  Tensor soft = sigmoid(z);

  BatchPartition part;
  part.decisions.resize(static_cast<std::size_t>(b));
  std::vector<double> correction(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    const double noisy = diff[i] + noise[static_cast<std::size_t>(i)];
    const int hard = noisy >= 0.0 ? 1 : 0;
    double s = std::min(std::max(soft[i], kSoftClamp), 1.0 - kSoftClamp);
    auto& d = part.decisions[static_cast<std::size_t>(i)];
    d.soft_select = s;
    d.soft_discard = 1.0 - s;
    d.hard = hard;
    correction[static_cast<std::size_t>(i)] = static_cast<double>(hard) - soft[i];
    if (hard) {
      part.selected.push_back(static_cast<int>(i));
    } else {
      part.discarded.push_back(static_cast<int>(i));
    }
  }
  part.st_column = add(soft, Tensor({b, 1}, std::move(correction)));
  part.soft_column = soft;
  part.prob_column = prob;
  part.has_st = true;
  for (std::int64_t i = 0; i < b; ++i) {
    part.decisions[static_cast<std::size_t>(i)].st_value = slice_rows(part.st_column, i, i + 1);
  }
  return part;
}

// Selection objective:
//   lambda_s   * hinge(d_sel - d_dis + margin)        (dropped if a side is empty)
// + lambda_reg1 * anti-collapse entropy term on the select probability
// + lambda_reg2 * (mean per-sample prediction entropy - entropy of the mean
//                  target prediction), which also trains the classifier stack.
// target_log_probs are log-softmax classifier outputs on the target batch.
inline Tensor select_loss(const BatchPartition& part, const Tensor& source_features,
                          const Tensor& target_features, const Tensor& target_log_probs,
                          const SelectConfig& cfg) {
  if (target_features.rows() == 0) throw ContractViolation("select_loss: empty target batch");
  if (!part.has_st) throw ContractViolation("select_loss: partition lacks straight-through values");
  const std::int64_t b = source_features.rows();

  Tensor loss = Tensor::scalar(0.0);

  if (cfg.use_hausdorff && !part.selected.empty() && !part.discarded.empty()) {
    Tensor x_sel = gather_rows(source_features, part.selected);
    Tensor w_sel = gather_rows(part.st_column, part.selected);
    Tensor d_sel = weighted_hausdorff(x_sel, w_sel, target_features);

    Tensor x_dis = gather_rows(source_features, part.discarded);
    Tensor w_dis_soft = gather_rows(part.st_column, part.discarded);
    // discard membership weight: 1 - st (forward value exactly 1)
    Tensor w_dis = sub(Tensor::full({static_cast<std::int64_t>(part.discarded.size()), 1}, 1.0), w_dis_soft);
    Tensor d_dis = weighted_hausdorff(x_dis, w_dis, target_features);

    Tensor hinge = relu(add(sub(d_sel, d_dis), Tensor::scalar(cfg.margin)));
    loss = add(loss, scale(hinge, cfg.lambda_s));
  }

  // anti-collapse term on the selector's clean output probability
  {
    Tensor p = part.prob_column;
    Tensor one = Tensor::full({b, 1}, 1.0);
    Tensor q = sub(one, p);
    Tensor reg1;
    switch (cfg.reg1_form) {
      case Reg1Form::batch_rate: {
        Tensor pm = mean(p);
        Tensor qm = sub(Tensor::scalar(1.0), pm);
        reg1 = add(mul(pm, log(pm)), mul(qm, log(qm)));
        break;
      }
      case Reg1Form::per_sample:
        reg1 = mean(add(mul(p, log(p)), mul(q, log(q))));
        break;
      case Reg1Form::literal:
        reg1 = mean(mul(p, log(p)));
        break;
    }
    loss = add(loss, scale(reg1, cfg.lambda_reg1));
  }

  {
    const std::int64_t m = target_log_probs.rows();
    Tensor probs = exp(target_log_probs);
    Tensor mean_entropy = scale(sum(mul(probs, target_log_probs)), -1.0 / static_cast<double>(m));
    Tensor mean_pred = matmul(Tensor::full({1, m}, 1.0 / static_cast<double>(m)), probs);
    Tensor entropy_of_mean = scale(sum(mul(mean_pred, log(mean_pred))), -1.0);
    Tensor diversity = sub(mean_entropy, entropy_of_mean);
    loss = add(loss, scale(diversity, cfg.lambda_reg2));
  }

  return loss;
}

}  // namespace slm
