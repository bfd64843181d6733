#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slm/autodiff.hpp"
#include "slm/common.hpp"
#include "slm/data.hpp"
#include "slm/models.hpp"
#include "slm/trainer.hpp"

// Frozen-model diagnostics: target accuracy against the held-out labels,
// selector quality against the oracle bits, and a sliced-Wasserstein report
// of how the selected/discarded source partitions sit relative to the target
// in feature space.

namespace slm {

inline int argmax_row(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

inline double evaluate_accuracy(const ModelBundle& bundle, const Tensor& target_x,
                                std::span<const int> target_labels) {
  if (target_x.rows() == 0) throw ContractViolation("evaluate_accuracy: empty target set");
  if (target_x.rows() != static_cast<std::int64_t>(target_labels.size())) {
    throw ContractViolation("evaluate_accuracy: one label per sample");
  }
  Tensor logits = mlp_forward(bundle.f, mlp_forward(bundle.g, target_x.detached()));
  const std::int64_t c = logits.cols();
  std::int64_t correct = 0, counted = 0;
  for (std::int64_t i = 0; i < logits.rows(); ++i) {
    const int label = target_labels[static_cast<std::size_t>(i)];
    if (label < 0) continue;  // unknown rows are excluded from evaluation
    ++counted;
    std::span<const double> row(logits.data().data() + i * c, static_cast<std::size_t>(c));
    if (argmax_row(row) == label) ++correct;
  }
  if (counted == 0) throw ContractViolation("evaluate_accuracy: no labeled target samples");
  return static_cast<double>(correct) / static_cast<double>(counted);
}

// Deterministic selector policy used for evaluation: select when the select
// logit beats the discard logit (no noise).
inline std::vector<std::uint8_t> eval_selection(const ModelBundle& bundle, const Tensor& source_x) {
  Tensor logits = mlp_forward(bundle.h, source_x.detached());
  std::vector<std::uint8_t> out(static_cast<std::size_t>(logits.rows()));
  for (std::int64_t i = 0; i < logits.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = logits.at(i, 0) >= logits.at(i, 1) ? 1 : 0;
  }
  return out;
}

struct SelectorMetrics {
  int tp = 0, fp = 0, fn = 0, tn = 0;
  std::optional<double> precision;
  std::optional<double> recall;
};

inline SelectorMetrics selector_metrics(std::span<const std::uint8_t> decisions,
                                        std::span<const std::uint8_t> oracle_shared) {
  if (decisions.size() != oracle_shared.size()) {
    throw ContractViolation("selector_metrics: decisions must cover the full source set");
  }
  SelectorMetrics m;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const bool sel = decisions[i] != 0;
    const bool pos = oracle_shared[i] != 0;
    if (sel && pos) ++m.tp;
    if (sel && !pos) ++m.fp;
    if (!sel && pos) ++m.fn;
    if (!sel && !pos) ++m.tn;
  }
  if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn > 0) m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  return m;
}

namespace evaldetail {

// Exact first Wasserstein distance between two 1-D empirical distributions:
// integrate |Q_X - Q_Y| over the merged quantile breakpoints.
inline double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n = a.size(), m = b.size();
  std::size_t i = 0, j = 0;
  double acc = 0.0, q_prev = 0.0;
  while (i < n && j < m) {
    const double qa = static_cast<double>(i + 1) / static_cast<double>(n);
    const double qb = static_cast<double>(j + 1) / static_cast<double>(m);
    const double q = std::min(qa, qb);
    acc += (q - q_prev) * std::fabs(a[i] - b[j]);
    q_prev = q;
    if (qa <= q) ++i;
    if (qb <= q) ++j;
  }
  return acc;
}

}  // namespace evaldetail

// Mean over random unit directions of the exact 1-D Wasserstein distance
// between the projected samples.
inline double sliced_wasserstein(const Tensor& x, const Tensor& y, int n_projections, Rng& rng) {
  if (x.rows() == 0 || y.rows() == 0) throw ContractViolation("sliced_wasserstein: empty set");
  if (x.cols() != y.cols()) throw ContractViolation("sliced_wasserstein: width mismatch");
  if (n_projections < 1) throw ContractViolation("sliced_wasserstein: need at least one projection");
  const std::int64_t d = x.cols();
  double acc = 0.0;
  for (int p = 0; p < n_projections; ++p) {
    std::vector<double> dir(static_cast<std::size_t>(d));
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : dir) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (!(norm > 1e-12));
    for (auto& v : dir) v /= norm;
    auto project = [&](const Tensor& t) {
      std::vector<double> out(static_cast<std::size_t>(t.rows()));
      for (std::int64_t i = 0; i < t.rows(); ++i) {
        double s = 0.0;
        for (std::int64_t k = 0; k < d; ++k) s += t.at(i, k) * dir[static_cast<std::size_t>(k)];
        out[static_cast<std::size_t>(i)] = s;
      }
      return out;
    };
    acc += evaldetail::wasserstein_1d(project(x), project(y));
  }
  return acc / static_cast<double>(n_projections);
}

struct DistanceReport {
  std::optional<double> d_sel_t;
  std::optional<double> d_dis_t;
  double d_all_t = 0.0;
  std::optional<double> norm_sel;
  std::optional<double> norm_dis;
};

// Distances are measured between extractor features, mirroring where the
// selection objective lives.
inline DistanceReport distance_report(const ModelBundle& bundle, const Tensor& source_x_model_view,
                                      std::span<const std::uint8_t> selection, const Tensor& target_x_model_view,
                                      int n_projections, std::uint64_t seed) {
  Tensor src_feat = mlp_forward(bundle.g, source_x_model_view.detached());
  Tensor tgt_feat = mlp_forward(bundle.g, target_x_model_view.detached());
  std::vector<int> sel_idx, dis_idx;
  for (std::size_t i = 0; i < selection.size(); ++i) {
    (selection[i] ? sel_idx : dis_idx).push_back(static_cast<int>(i));
  }
  DistanceReport rep;
  // all three distances share the same projection directions so the
  // normalized pair compares like with like (select-all reads exactly 1)
  const std::uint64_t proj_seed = splitmix64(seed ^ 0x51a5ed0ULL);
  {
    Rng rng(proj_seed);
    rep.d_all_t = sliced_wasserstein(src_feat, tgt_feat, n_projections, rng);
  }
  if (!sel_idx.empty()) {
    Rng rng(proj_seed);
    rep.d_sel_t = sliced_wasserstein(gather_rows_values(src_feat, sel_idx), tgt_feat, n_projections, rng);
  }
  if (!dis_idx.empty()) {
    Rng rng(proj_seed);
    rep.d_dis_t = sliced_wasserstein(gather_rows_values(src_feat, dis_idx), tgt_feat, n_projections, rng);
  }
  if (rep.d_all_t > 0.0) {
    if (rep.d_sel_t) rep.norm_sel = *rep.d_sel_t / rep.d_all_t;
    if (rep.d_dis_t) rep.norm_dis = *rep.d_dis_t / rep.d_all_t;
  }
  return rep;
}

// CSV of extractor features for offline plotting:
// domain,label,selected,g0..g{k-1}
inline void export_features(const ModelBundle& bundle, const PdaTask& task, const DomainStats& stats,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write features: " + path);
  const Tensor src_view = stats.active ? standardize(task.source_x, stats.src_mean, stats.src_std)
                                       : task.source_x.detached();
  const Tensor tgt_view = stats.active ? standardize(task.target_x, stats.tgt_mean, stats.tgt_std)
                                       : task.target_x.detached();
  Tensor src_feat = mlp_forward(bundle.g, src_view);
  Tensor tgt_feat = mlp_forward(bundle.g, tgt_view);
  const auto selection = eval_selection(bundle, task.source_x);
  const std::int64_t k = src_feat.cols();
  out << "domain,label,selected";
  for (std::int64_t i = 0; i < k; ++i) out << ",g" << i;
  out << "\n";
  char buf[64];
  auto fmt = [&](double v) {
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  for (std::int64_t i = 0; i < src_feat.rows(); ++i) {
    out << "source," << task.source_y[static_cast<std::size_t>(i)] << ","
        << static_cast<int>(selection[static_cast<std::size_t>(i)]);
    for (std::int64_t c = 0; c < k; ++c) out << "," << fmt(src_feat.at(i, c));
    out << "\n";
  }
  for (std::int64_t i = 0; i < tgt_feat.rows(); ++i) {
    const int label = i < static_cast<std::int64_t>(task.eval.target_labels.size())
                          ? task.eval.target_labels[static_cast<std::size_t>(i)]
                          : -1;
    out << "target," << label << ",1";
    for (std::int64_t c = 0; c < k; ++c) out << "," << fmt(tgt_feat.at(i, c));
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace slm
