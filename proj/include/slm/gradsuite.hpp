#pragma once

#include <string>
#include <vector>

#include "slm/autodiff.hpp"
#include "slm/common.hpp"
#include "slm/label.hpp"
#include "slm/mix.hpp"
#include "slm/models.hpp"
#include "slm/objective.hpp"
#include "slm/select.hpp"

// Finite-difference verification of every primitive and every composite loss,
// at several seeded probe points each. Losses that pass through the gradient
// reversal layer are checked against -lambda times the gradient of the same
// loss with the reversal removed; the straight-through selection path is
// checked against its smooth surrogate (the soft sample), whose gradients it
// must reproduce exactly.

namespace slm {

struct GradCheckRow {
  std::string name;
  double max_err = 0.0;
};

namespace gradsuite {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor(std::move(shape), std::move(v));
}

inline std::vector<GradCheckRow> primitive_rows(int points, double eps) {
  Rng rng(0x9e3779b9u);
  std::vector<GradCheckRow> rows;
  auto run = [&](const char* name, Shape shape, const std::function<Tensor(Tape&, const Tensor&)>& f,
                 double lo = -2.0, double hi = 2.0) {
    double worst = 0.0;
    for (int rep = 0; rep < points; ++rep) {
      worst = std::max(worst, grad_check(f, random_tensor(shape, rng, lo, hi), eps));
    }
    rows.push_back({name, worst});
  };

  Tensor c34 = random_tensor({3, 4}, rng, -2, 2);
  Tensor bias = random_tensor({4}, rng, -2, 2);
  Tensor cw = random_tensor({2, 5}, rng, -2, 2);
  Tensor b42 = random_tensor({4, 2}, rng, -2, 2);
  Tensor a34 = random_tensor({3, 4}, rng, -2, 2);
  Tensor half = random_tensor({2, 3}, rng, -2, 2);

  run("matmul (lhs)", {3, 4}, [&](Tape&, const Tensor& x) { return sum(square(matmul(x, b42))); });
  run("matmul (rhs)", {4, 2}, [&](Tape&, const Tensor& x) { return sum(square(matmul(a34, x))); });
  run("matmul (rhs transposed)", {2, 4},
      [&](Tape&, const Tensor& x) { return sum(square(matmul(a34, x, true))); });
  run("add", {3, 4}, [&](Tape&, const Tensor& x) { return sum(square(add(x, c34))); });
  run("add (row bias)", {3, 4}, [&](Tape&, const Tensor& x) { return sum(square(add(x, bias))); });
  run("sub", {3, 4}, [&](Tape&, const Tensor& x) { return sum(square(sub(x, c34))); });
  run("mul", {3, 4}, [&](Tape&, const Tensor& x) { return sum(square(mul(x, c34))); });
  run("scale", {3, 4}, [&](Tape&, const Tensor& x) { return sum(square(scale(x, -1.7))); });
  run("relu", {3, 4}, [&](Tape&, const Tensor& x) { return sum(mul(relu(x), c34)); }, 0.05, 2.0);
  run("exp", {2, 3}, [&](Tape&, const Tensor& x) { return sum(exp(x)); }, -1.0, 1.0);
  run("log", {2, 3}, [&](Tape&, const Tensor& x) { return sum(log(x)); }, 0.2, 3.0);
  run("log_softmax", {2, 5}, [&](Tape&, const Tensor& x) { return sum(mul(log_softmax(x), cw)); });
  run("sigmoid", {2, 3}, [&](Tape&, const Tensor& x) { return sum(square(sigmoid(x))); });
  run("mean", {3, 4}, [&](Tape&, const Tensor& x) { return mean(mul(x, c34)); });
  run("sum", {3, 4}, [&](Tape&, const Tensor& x) { return sum(mul(x, c34)); });
  run("concat_rows", {3, 3}, [&](Tape&, const Tensor& x) { return sum(square(concat_rows({x, half}))); });
  run("slice_rows", {4, 3}, [&](Tape&, const Tensor& x) { return sum(square(slice_rows(x, 1, 3))); });
  run("square", {2, 3}, [&](Tape&, const Tensor& x) { return sum(square(x)); });

  {  // hausdorff: feature and weight gradients
    double worst = 0.0;
    for (int rep = 0; rep < points; ++rep) {
      Tensor y = random_tensor({4, 3}, rng, -2, 2);
      Tensor w = random_tensor({5}, rng, 0.5, 1.5);
      Tensor x0 = random_tensor({5, 3}, rng, -2, 2);
      worst = std::max(worst, grad_check([&](Tape&, const Tensor& x) { return weighted_hausdorff(x, w, y); },
                                         x0, 1e-6));
      worst = std::max(
          worst, grad_check([&](Tape&, const Tensor& yy) { return weighted_hausdorff(x0, w, yy); }, y, 1e-6));
      worst = std::max(
          worst, grad_check([&](Tape&, const Tensor& ww) { return weighted_hausdorff(x0, ww, y); }, w, 1e-6));
    }
    rows.push_back({"hausdorff", worst});
  }

  {  // grl: analytic gradient equals -lambda times the identity path
    double worst = 0.0;
    const double lam = 0.7;
    for (int rep = 0; rep < points; ++rep) {
      Tensor x0 = random_tensor({2, 3}, rng, -2, 2);
      Tape t1;
      Tensor x1 = t1.leaf(x0);
      GradMap g1 = t1.backward(sum(square(grl(x1, lam))));
      Tape t2;
      Tensor x2 = t2.leaf(x0);
      GradMap g2 = t2.backward(sum(square(x2)));
      Tensor ga = g1.grad(x1), gb = g2.grad(x2);
      for (std::int64_t i = 0; i < ga.numel(); ++i) {
        const double expect = -lam * gb[i];
        const double denom = std::max({std::fabs(ga[i]), std::fabs(expect), 1e-8});
        worst = std::max(worst, std::fabs(ga[i] - expect) / denom);
      }
      // and the identity path itself is finite-difference exact
      worst = std::max(worst,
                       grad_check([&](Tape&, const Tensor& x) { return sum(square(x)); }, x0, eps));
    }
    rows.push_back({"grl", worst});
  }
  return rows;
}

// Small world shared by the composite-loss checks.
struct LossWorld {
  ModelBundle bundle;
  Tensor xs, xt;                       // batches
  std::vector<int> ys;                 // source labels
  std::vector<std::vector<double>> smoothed;
  std::vector<SoftPseudoLabel> pls;
  std::vector<double> w_src, w_tgt;
  std::vector<MixedSample> mixed;
  std::vector<double> gumbel_noise;    // one differenced draw per source row
  SelectConfig select_cfg;
  double grl_lam = 0.6;
};

inline LossWorld make_world(std::uint64_t seed) {
  LossWorld w;
  Rng rng(splitmix64(seed ^ 0xabcdef12345ULL));
  ModelConfig mc;
  mc.hidden_g = {6};
  mc.feature_dim = 4;
  mc.hidden_f = {};
  mc.hidden_d = {5};
  mc.hidden_h = {5};
  w.bundle = init_bundle(mc, 2, 3, rng);
  w.xs = random_tensor({5, 2}, rng, -2, 2);
  w.xt = random_tensor({4, 2}, rng, -2, 2);
  for (int i = 0; i < 5; ++i) w.ys.push_back(static_cast<int>(rng.below(3)));
  for (int y : w.ys) w.smoothed.push_back(smooth_labels(y, 3, 0.2));
  SharpenConfig sc;
  sc.threshold = 0.0;  // accept everything so the label loss is nontrivial
  w.pls = pseudo_label_batch(w.bundle, w.xt, sc);
  for (int i = 0; i < 5; ++i) w.w_src.push_back(1.0 + rng.uniform());
  for (int i = 0; i < 4; ++i) w.w_tgt.push_back(1.0 + rng.uniform());
  for (int i = 0; i < 5; ++i) w.gumbel_noise.push_back(rng.gumbel() - rng.gumbel());
  w.select_cfg.margin = 5.0;  // keep the hinge active so its gradient is exercised
  w.select_cfg.tau = 0.8;

  std::vector<LabeledVec> sel_pool, tgt_pool;
  for (int i = 0; i < 5; ++i) {
    LabeledVec v;
    v.x = {w.xs.at(i, 0), w.xs.at(i, 1)};
    v.y = w.smoothed[static_cast<std::size_t>(i)];
    sel_pool.push_back(v);
  }
  for (int i = 0; i < 4; ++i) {
    LabeledVec v;
    v.x = {w.xt.at(i, 0), w.xt.at(i, 1)};
    v.y = w.pls[static_cast<std::size_t>(i)].probs;
    tgt_pool.push_back(v);
  }
  MixConfig mix_cfg;
  w.mixed = build_mix_batches(sel_pool, tgt_pool, mix_cfg, rng);
  return w;
}

enum class ProbeRole { g_w0, f_w0, d_w0, h_w0 };

// Parameter views where exactly the probed tensor is tape-attached.
inline AttachedMlp probe_mlp(const MlpParams& p, int probe_layer_weight, const Tensor& probe) {
  AttachedMlp a;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    a.weights.push_back(static_cast<int>(l) == probe_layer_weight ? probe : p.weights[l].detached());
    a.biases.push_back(p.biases[l].detached());
  }
  return a;
}

inline AttachedMlp const_mlp(const MlpParams& p) { return probe_mlp(p, -1, Tensor::scalar(0.0)); }

struct LossBuilder {
  const LossWorld& w;
  ProbeRole role;
  const Tensor& probe;
  bool grl_as_identity = false;

  AttachedMlp g() const { return probe_mlp(w.bundle.g, role == ProbeRole::g_w0 ? 0 : -1, probe); }
  AttachedMlp f() const { return probe_mlp(w.bundle.f, role == ProbeRole::f_w0 ? 0 : -1, probe); }
  AttachedMlp d() const { return probe_mlp(w.bundle.d, role == ProbeRole::d_w0 ? 0 : -1, probe); }
  AttachedMlp h() const { return probe_mlp(w.bundle.h, role == ProbeRole::h_w0 ? 0 : -1, probe); }

  Tensor rev(const Tensor& x) const { return grl_as_identity ? x : grl(x, w.grl_lam); }

  Tensor sup() const {
    Tensor feats = mlp_forward(g(), w.xs);
    return supervised_loss(log_softmax(mlp_forward(f(), feats)), w.smoothed);
  }
  Tensor adv() const {
    Tensor gs = mlp_forward(g(), w.xs);
    Tensor gt = mlp_forward(g(), w.xt);
    std::optional<Tensor> zs = mlp_forward(d(), rev(gs));
    std::optional<Tensor> zt = mlp_forward(d(), rev(gt));
    return adv_loss(zs, zt, w.w_src, w.w_tgt);
  }
  Tensor select(bool soft_weights) const {
    Tensor gs = mlp_forward(g(), w.xs);
    Tensor gt = mlp_forward(g(), w.xt);
    Tensor log_probs_t = log_softmax(mlp_forward(f(), gt));
    BatchPartition part = make_partition(soft_weights);
    return select_loss(part, gs, gt, log_probs_t, w.select_cfg);
  }
  Tensor label() const {
    Tensor gt = mlp_forward(g(), w.xt);
    return label_loss(log_softmax(mlp_forward(f(), gt)), w.pls);
  }
  Tensor mix_cls() const {
    MixConfig cfg;
    cfg.use_dom = false;
    return mix_loss(g(), f(), d(), w.grl_lam, w.mixed, cfg).cls;
  }
  // The identity-side reference for the reversal relation is assembled by
  // hand; a formula drift between it and mix_loss would fail the check.
  Tensor mix_dom() const {
    if (!grl_as_identity) {
      MixConfig cfg;
      cfg.use_cls = false;
      return mix_loss(g(), f(), d(), w.grl_lam, w.mixed, cfg).dom;
    }
    const std::int64_t n = static_cast<std::int64_t>(w.mixed.size());
    const std::int64_t dim = static_cast<std::int64_t>(w.mixed.front().input.size());
    std::vector<double> xs(static_cast<std::size_t>(n * dim)), dom(static_cast<std::size_t>(n)),
        flipped(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      const auto& m = w.mixed[static_cast<std::size_t>(i)];
      std::copy(m.input.begin(), m.input.end(), xs.begin() + static_cast<std::ptrdiff_t>(i * dim));
      dom[static_cast<std::size_t>(i)] = m.domain_label;
      flipped[static_cast<std::size_t>(i)] = 1.0 - m.domain_label;
    }
    Tensor logits = mlp_forward(d(), mlp_forward(g(), Tensor({n, dim}, std::move(xs))));
    Tensor on = log(sigmoid(logits));
    Tensor off = log(sigmoid(scale(logits, -1.0)));
    return scale(sum(add(mul(Tensor({n, 1}, dom), on), mul(Tensor({n, 1}, std::move(flipped)), off))),
                 -1.0 / static_cast<double>(n));
  }

  // Partition with the world's frozen gumbel noise. With soft_weights the
  // straight-through column is replaced by the smooth soft column, which is
  // the surrogate whose gradients the straight-through path must reproduce.
  BatchPartition make_partition(bool soft_weights) const {
    const std::int64_t b = w.xs.rows();
    Tensor logits = mlp_forward(h(), w.xs);
    Tensor diff = matmul(logits, Tensor({2, 1}, {1.0, -1.0}));
    Tensor prob = sigmoid(diff);
    Tensor z = scale(add(diff, Tensor({b, 1}, w.gumbel_noise)), 1.0 / w.select_cfg.tau);
    Tensor soft = sigmoid(z);
    BatchPartition part;
    part.decisions.resize(static_cast<std::size_t>(b));
    std::vector<double> correction(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
      const double noisy = diff[i] + w.gumbel_noise[static_cast<std::size_t>(i)];
      const int hard = noisy >= 0.0 ? 1 : 0;
      auto& dec = part.decisions[static_cast<std::size_t>(i)];
      dec.soft_select = std::min(std::max(soft[i], kSoftClamp), 1.0 - kSoftClamp);
      dec.soft_discard = 1.0 - dec.soft_select;
      dec.hard = hard;
      correction[static_cast<std::size_t>(i)] = static_cast<double>(hard) - soft[i];
      (hard ? part.selected : part.discarded).push_back(static_cast<int>(i));
    }
    part.soft_column = soft;
    part.prob_column = prob;
    part.st_column = soft_weights ? soft : add(soft, Tensor({b, 1}, std::move(correction)));
    part.has_st = true;
    return part;
  }
};

inline Tensor probe_target(const LossWorld& w, ProbeRole role) {
  switch (role) {
    case ProbeRole::g_w0: return w.bundle.g.weights[0].detached();
    case ProbeRole::f_w0: return w.bundle.f.weights[0].detached();
    case ProbeRole::d_w0: return w.bundle.d.weights[0].detached();
    case ProbeRole::h_w0: return w.bundle.h.weights[0].detached();
  }
  throw ContractViolation("probe_target: unknown role");
}

inline double fd_check(const LossWorld& w, ProbeRole role,
                       const std::function<Tensor(const LossBuilder&)>& loss, double eps) {
  auto f = [&](Tape&, const Tensor& probe) {
    LossBuilder b{w, role, probe, false};
    return loss(b);
  };
  return grad_check(f, probe_target(w, role), eps);
}

// |grad_with_grl - (-lambda) * grad_without_grl|, relative, plus an FD check
// of the identity-path loss so the comparison is anchored to ground truth.
inline double grl_relation_check(const LossWorld& w, ProbeRole role,
                                 const std::function<Tensor(const LossBuilder&)>& loss, double eps) {
  const Tensor x0 = probe_target(w, role);
  Tensor with_grl, without_grl;
  {
    Tape tape;
    Tensor probe = tape.leaf(x0);
    LossBuilder b{w, role, probe, false};
    GradMap gm = tape.backward(loss(b));
    with_grl = gm.grad(probe);
  }
  {
    Tape tape;
    Tensor probe = tape.leaf(x0);
    LossBuilder b{w, role, probe, true};
    GradMap gm = tape.backward(loss(b));
    without_grl = gm.grad(probe);
  }
  double worst = 0.0;
  for (std::int64_t i = 0; i < with_grl.numel(); ++i) {
    const double expect = -w.grl_lam * without_grl[i];
    const double denom = std::max({std::fabs(with_grl[i]), std::fabs(expect), 1e-8});
    worst = std::max(worst, std::fabs(with_grl[i] - expect) / denom);
  }
  auto f = [&](Tape&, const Tensor& probe) {
    LossBuilder b{w, role, probe, true};
    return loss(b);
  };
  return std::max(worst, grad_check(f, x0, eps));
}

// Straight-through contract: the mask's forward value is the hard bit while
// its gradient is the soft sample's. Checked on a linear functional of the
// mask (linearity pins the downstream gradient at either forward point) and
// anchored by an FD check of the smooth surrogate.
inline double st_check(const LossWorld& w, double eps) {
  const Tensor x0 = probe_target(w, ProbeRole::h_w0);
  std::vector<double> cv(static_cast<std::size_t>(w.xs.rows()));
  Rng crng(42);
  for (auto& v : cv) v = crng.uniform() + 0.5;
  const Tensor c({static_cast<std::int64_t>(w.xs.rows()), 1}, std::move(cv));
  Tensor st_side, soft_side;
  {
    Tape tape;
    Tensor probe = tape.leaf(x0);
    LossBuilder b{w, ProbeRole::h_w0, probe, false};
    BatchPartition part = b.make_partition(false);
    GradMap gm = tape.backward(sum(mul(c, part.st_column)));
    st_side = gm.grad(probe);
  }
  {
    Tape tape;
    Tensor probe = tape.leaf(x0);
    LossBuilder b{w, ProbeRole::h_w0, probe, false};
    BatchPartition part = b.make_partition(false);
    GradMap gm = tape.backward(sum(mul(c, part.soft_column)));
    soft_side = gm.grad(probe);
  }
  double worst = 0.0;
  for (std::int64_t i = 0; i < st_side.numel(); ++i) {
    const double denom = std::max({std::fabs(st_side[i]), std::fabs(soft_side[i]), 1e-8});
    worst = std::max(worst, std::fabs(st_side[i] - soft_side[i]) / denom);
  }
  // the smooth surrogate is FD-exact
  auto f = [&](Tape&, const Tensor& probe) {
    LossBuilder b{w, ProbeRole::h_w0, probe, false};
    BatchPartition part = b.make_partition(false);
    return sum(mul(c, part.soft_column));
  };
  return std::max(worst, grad_check(f, x0, eps));
}

inline std::vector<GradCheckRow> composite_rows(int points, double eps) {
  std::vector<GradCheckRow> rows;
  auto across_seeds = [&](const char* name, const std::function<double(const LossWorld&)>& check) {
    double worst = 0.0;
    for (int s = 0; s < points; ++s) worst = std::max(worst, check(make_world(static_cast<std::uint64_t>(s))));
    rows.push_back({name, worst});
  };

  across_seeds("L_sup (extractor)", [&](const LossWorld& w) {
    return fd_check(w, ProbeRole::g_w0, [](const LossBuilder& b) { return b.sup(); }, eps);
  });
  across_seeds("L_sup (classifier)", [&](const LossWorld& w) {
    return fd_check(w, ProbeRole::f_w0, [](const LossBuilder& b) { return b.sup(); }, eps);
  });
  across_seeds("L_adv (discriminator)", [&](const LossWorld& w) {
    return fd_check(w, ProbeRole::d_w0, [](const LossBuilder& b) { return b.adv(); }, eps);
  });
  across_seeds("L_adv (extractor, reversal relation)", [&](const LossWorld& w) {
    return grl_relation_check(w, ProbeRole::g_w0, [](const LossBuilder& b) { return b.adv(); }, eps);
  });
  across_seeds("L_select (extractor)", [&](const LossWorld& w) {
    return fd_check(w, ProbeRole::g_w0, [](const LossBuilder& b) { return b.select(false); }, 1e-6);
  });
  across_seeds("L_select (classifier)", [&](const LossWorld& w) {
    return fd_check(w, ProbeRole::f_w0, [](const LossBuilder& b) { return b.select(false); }, eps);
  });
  across_seeds("L_select (selector, straight-through)", [&](const LossWorld& w) { return st_check(w, eps); });
  across_seeds("L_label (extractor)", [&](const LossWorld& w) {
    return fd_check(w, ProbeRole::g_w0, [](const LossBuilder& b) { return b.label(); }, eps);
  });
  across_seeds("L_label (classifier)", [&](const LossWorld& w) {
    return fd_check(w, ProbeRole::f_w0, [](const LossBuilder& b) { return b.label(); }, eps);
  });
  across_seeds("L_mix_cls (extractor)", [&](const LossWorld& w) {
    return fd_check(w, ProbeRole::g_w0, [](const LossBuilder& b) { return b.mix_cls(); }, eps);
  });
  across_seeds("L_mix_cls (classifier)", [&](const LossWorld& w) {
    return fd_check(w, ProbeRole::f_w0, [](const LossBuilder& b) { return b.mix_cls(); }, eps);
  });
  across_seeds("L_mix_dom (discriminator)", [&](const LossWorld& w) {
    return fd_check(w, ProbeRole::d_w0, [](const LossBuilder& b) { return b.mix_dom(); }, eps);
  });
  across_seeds("L_mix_dom (extractor, reversal relation)", [&](const LossWorld& w) {
    return grl_relation_check(w, ProbeRole::g_w0, [](const LossBuilder& b) { return b.mix_dom(); }, eps);
  });
  return rows;
}

}  // namespace gradsuite

inline std::vector<GradCheckRow> run_grad_suite(int points = 10, double eps = 1e-5) {
  auto rows = gradsuite::primitive_rows(points, eps);
  auto comp = gradsuite::composite_rows(points, eps);
  rows.insert(rows.end(), comp.begin(), comp.end());
  return rows;
}

}  // namespace slm
