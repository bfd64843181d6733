#pragma once

#include <vector>

#include "slm/autodiff.hpp"
#include "slm/common.hpp"
#include "slm/models.hpp"

// Mixup batches: convex combinations of model inputs and their label
// distributions, built inter-domain, within the selected source pool, and
// within the accepted target pool. The discriminator target for a mixed
// sample is its source fraction.

namespace slm {

struct MixConfig {
  double beta_alpha = 2.0;
  bool use_cls = true;
  bool use_dom = true;
  // Mixing engages once pseudo-labeled targets exist; mixed batches built
  // against a still-forming alignment destabilize it instead of smoothing it.
  double warmup_frac = 0.5;
};

enum class MixKind { inter, intra_src, intra_tgt };

struct MixedSample {
  std::vector<double> input;
  std::vector<double> label;
  double lam = 0.0;
  MixKind kind = MixKind::inter;
  double domain_label = 0.0;  // 1 = source
};

struct LabeledVec {
  std::vector<double> x;
  std::vector<double> y;  // probability vector over source classes
};

inline double sample_mix_ratio(const MixConfig& cfg, Rng& rng) {
  if (!(cfg.beta_alpha > 0.0)) throw ContractViolation("sample_mix_ratio: beta_alpha must be positive");
  return rng.beta(cfg.beta_alpha, cfg.beta_alpha);
}

namespace detail {

inline MixedSample combine(const LabeledVec& a, const LabeledVec& b, double lam, MixKind kind,
                           double domain_label) {
  MixedSample m;
  m.lam = lam;
  m.kind = kind;
  m.domain_label = domain_label;
  m.input.resize(a.x.size());
  for (std::size_t i = 0; i < a.x.size(); ++i) m.input[i] = lam * a.x[i] + (1.0 - lam) * b.x[i];
  m.label.resize(a.y.size());
  for (std::size_t i = 0; i < a.y.size(); ++i) m.label[i] = lam * a.y[i] + (1.0 - lam) * b.y[i];
  return m;
}

// pair index i with a shifted shuffle; no self-pairs unless the pool is a singleton
inline std::vector<std::pair<int, int>> intra_pairs(int n, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int j = (i + 1) % n;
    pairs.emplace_back(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return pairs;
}

}  // namespace detail

// A fresh mix ratio per emitted sample. Empty pools contribute empty sets;
// inter pairs are a random matching of min(|selected|, |targets|) rows.
inline std::vector<MixedSample> build_mix_batches(const std::vector<LabeledVec>& selected,
                                                  const std::vector<LabeledVec>& targets,
                                                  const MixConfig& cfg, Rng& rng) {
  std::vector<MixedSample> out;

  const int ns = static_cast<int>(selected.size());
  const int nt = static_cast<int>(targets.size());
  const int inter = std::min(ns, nt);
  if (inter > 0) {
    std::vector<int> src_order(static_cast<std::size_t>(ns)), tgt_order(static_cast<std::size_t>(nt));
    for (int i = 0; i < ns; ++i) src_order[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < nt; ++i) tgt_order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(src_order);
    rng.shuffle(tgt_order);
    for (int k = 0; k < inter; ++k) {
      const double lam = sample_mix_ratio(cfg, rng);
      out.push_back(detail::combine(selected[static_cast<std::size_t>(src_order[static_cast<std::size_t>(k)])],
                                    targets[static_cast<std::size_t>(tgt_order[static_cast<std::size_t>(k)])], lam,
                                    MixKind::inter, lam));
    }
  }
  if (ns > 0) {
    for (auto [i, j] : detail::intra_pairs(ns, rng)) {
      const double lam = sample_mix_ratio(cfg, rng);
      out.push_back(detail::combine(selected[static_cast<std::size_t>(i)], selected[static_cast<std::size_t>(j)],
                                    lam, MixKind::intra_src, 1.0));
    }
  }
  if (nt > 0) {
    for (auto [i, j] : detail::intra_pairs(nt, rng)) {
      const double lam = sample_mix_ratio(cfg, rng);
      out.push_back(detail::combine(targets[static_cast<std::size_t>(i)], targets[static_cast<std::size_t>(j)],
                                    lam, MixKind::intra_tgt, 0.0));
    }
  }
  return out;
}

struct MixLossParts {
  Tensor cls;
  Tensor dom;
};

// Classifier loss: mean soft cross-entropy over the whole mixed set.
// Discriminator loss: mean soft-target BCE of sigmoid(D(grl(G(x)))) against
// the source fraction. Either half can be switched off for ablations.
inline MixLossParts mix_loss(const AttachedMlp& g, const AttachedMlp& f, const AttachedMlp& d,
                             double grl_lambda, const std::vector<MixedSample>& mixed, const MixConfig& cfg) {
  MixLossParts parts{Tensor::scalar(0.0), Tensor::scalar(0.0)};
  if (mixed.empty() || (!cfg.use_cls && !cfg.use_dom)) return parts;

  const std::int64_t n = static_cast<std::int64_t>(mixed.size());
  const std::int64_t dim = static_cast<std::int64_t>(mixed.front().input.size());
  const std::int64_t classes = static_cast<std::int64_t>(mixed.front().label.size());
  std::vector<double> xs(static_cast<std::size_t>(n * dim));
  std::vector<double> ys(static_cast<std::size_t>(n * classes));
  std::vector<double> dom(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& m = mixed[static_cast<std::size_t>(i)];
    std::copy(m.input.begin(), m.input.end(), xs.begin() + static_cast<std::ptrdiff_t>(i * dim));
    std::copy(m.label.begin(), m.label.end(), ys.begin() + static_cast<std::ptrdiff_t>(i * classes));
    dom[static_cast<std::size_t>(i)] = m.domain_label;
  }
  Tensor features = mlp_forward(g, Tensor({n, dim}, std::move(xs)));
  if (cfg.use_cls) {
    Tensor log_probs = log_softmax(mlp_forward(f, features));
    parts.cls = scale(sum(mul(Tensor({n, classes}, std::move(ys)), log_probs)), -1.0 / static_cast<double>(n));
  }
  if (cfg.use_dom) {
    Tensor logits = mlp_forward(d, grl(features, grl_lambda));
    Tensor t({n, 1}, dom);
    std::vector<double> flipped(dom.size());
    for (std::size_t i = 0; i < dom.size(); ++i) flipped[i] = 1.0 - dom[i];
    Tensor tc({n, 1}, std::move(flipped));
    Tensor on = log(sigmoid(logits));
    Tensor off = log(sigmoid(scale(logits, -1.0)));
    parts.dom = scale(sum(add(mul(t, on), mul(tc, off))), -1.0 / static_cast<double>(n));
  }
  return parts;
}

}  // namespace slm
