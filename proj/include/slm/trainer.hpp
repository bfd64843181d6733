#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "slm/autodiff.hpp"
#include "slm/common.hpp"
#include "slm/config.hpp"
#include "slm/data.hpp"
#include "slm/label.hpp"
#include "slm/mix.hpp"
#include "slm/models.hpp"
#include "slm/objective.hpp"
#include "slm/select.hpp"

// Joint optimization: per step, draw one batch per domain, partition the
// source batch, pseudo-label the target batch, build mixup sets, assemble
// the six-term objective on a fresh tape, run backward once, and apply one
// SGD-with-momentum update per network. Everything is a pure function of
// (config, task, seed).

namespace slm {

struct Schedules {
  int total_steps = 1;
  double tau0 = 1.0, tau_min = 0.1;
  double alpha0 = 0.1, alpha_min = 0.02;
  double floor_frac = 0.8;
  double lr_min = 0.0;

  // v(t) = max(v_min, v0 * exp(-r t/T)), r chosen so the floor is reached at
  // floor_frac of training
  double decayed(double v0, double vmin, int t) const {
    check(t);
    const double r = std::log(v0 / vmin) / floor_frac;
    const double p = static_cast<double>(t) / static_cast<double>(total_steps);
    return std::max(vmin, v0 * std::exp(-r * p));
  }

  double tau(int t) const { return decayed(tau0, tau_min, t); }
  double alpha(int t) const { return decayed(alpha0, alpha_min, t); }

  double grl_lambda(int t) const {
    check(t);
    const double p = static_cast<double>(t) / static_cast<double>(total_steps);
    return 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0;
  }

  double lr(double lr0, int t) const {
    check(t);
    const double p = static_cast<double>(t) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(Rng::pi() * p));
  }

 private:
  void check(int t) const {
    if (t < 0 || t > total_steps) throw ContractViolation("schedule: step out of [0, T]");
  }
};

enum class ScheduleKind { tau, alpha, grl_lambda };

inline double schedule_value(const Schedules& s, ScheduleKind kind, int t) {
  switch (kind) {
    case ScheduleKind::tau: return s.tau(t);
    case ScheduleKind::alpha: return s.alpha(t);
    case ScheduleKind::grl_lambda: return s.grl_lambda(t);
  }
  throw ContractViolation("schedule_value: unknown kind");
}

struct OptState {
  std::vector<std::vector<double>> momentum;  // one buffer per parameter tensor
  int step = 0;
};

inline void init_opt_state(const MlpParams& p, OptState& st) {
  st.momentum.clear();
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    st.momentum.emplace_back(static_cast<std::size_t>(p.weights[l].numel()), 0.0);
    st.momentum.emplace_back(static_cast<std::size_t>(p.biases[l].numel()), 0.0);
  }
  st.step = 0;
}

namespace traindetail {

inline std::vector<Tensor*> param_list(MlpParams& p) {
  std::vector<Tensor*> out;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    out.push_back(&p.weights[l]);
    out.push_back(&p.biases[l]);
  }
  return out;
}

inline std::vector<const Tensor*> attached_list(const AttachedMlp& p) {
  std::vector<const Tensor*> out;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    out.push_back(&p.weights[l]);
    out.push_back(&p.biases[l]);
  }
  return out;
}

}  // namespace traindetail

// v <- momentum*v + g + weight_decay*w ; w <- w - lr*v
inline void sgd_step(MlpParams& params, const std::vector<Tensor>& grads, double lr, double momentum,
                     double weight_decay, OptState& state) {
  auto list = traindetail::param_list(params);
  if (grads.size() != list.size()) throw ContractViolation("sgd_step: gradient count mismatch");
  if (state.momentum.empty()) {
    state.momentum.resize(list.size());
    for (std::size_t i = 0; i < list.size(); ++i) {
      state.momentum[i].assign(static_cast<std::size_t>(list[i]->numel()), 0.0);
    }
  }
  for (std::size_t i = 0; i < list.size(); ++i) {
    Tensor& w = *list[i];
    const Tensor& g = grads[i];
    if (g.shape() != w.shape()) throw ContractViolation("sgd_step: gradient shape mismatch");
    auto& v = state.momentum[i];
    auto& wd = w.raw();
    for (std::size_t k = 0; k < wd.size(); ++k) {
      v[k] = momentum * v[k] + g[static_cast<std::int64_t>(k)] + weight_decay * wd[k];
      wd[k] -= lr * v[k];
    }
  }
  ++state.step;
}

// Per-domain input standardization (optional stand-in for domain-specific
// normalization layers). The selector always sees raw inputs.
struct DomainStats {
  std::vector<double> src_mean, src_std, tgt_mean, tgt_std;
  bool active = false;
};

inline DomainStats compute_domain_stats(const Tensor& source_x, const Tensor& target_x, bool active) {
  DomainStats s;
  s.active = active;
  if (!active) return s;
  auto stats = [](const Tensor& x, std::vector<double>& mean, std::vector<double>& sd) {
    const std::int64_t n = x.rows(), d = x.cols();
    mean.assign(static_cast<std::size_t>(d), 0.0);
    sd.assign(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t k = 0; k < d; ++k) mean[static_cast<std::size_t>(k)] += x.at(i, k);
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t k = 0; k < d; ++k) {
        const double c = x.at(i, k) - mean[static_cast<std::size_t>(k)];
        sd[static_cast<std::size_t>(k)] += c * c;
      }
    for (auto& v : sd) v = std::max(std::sqrt(v / static_cast<double>(n)), 1e-8);
  };
  stats(source_x, s.src_mean, s.src_std);
  stats(target_x, s.tgt_mean, s.tgt_std);
  return s;
}

inline Tensor standardize(const Tensor& x, const std::vector<double>& mean, const std::vector<double>& sd) {
  std::vector<double> out(x.data().begin(), x.data().end());
  const std::int64_t n = x.rows(), d = x.cols();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < d; ++k) {
      auto& v = out[static_cast<std::size_t>(i * d + k)];
      v = (v - mean[static_cast<std::size_t>(k)]) / sd[static_cast<std::size_t>(k)];
    }
  return Tensor(x.shape(), std::move(out));
}

using MetricsSink = std::function<void(const nlohmann::json&)>;
// Invoked on frozen parameters; whatever it returns is merged into the
// step's metrics record. Evaluation data stays on the hook's side.
using EvalHook = std::function<nlohmann::json(const ModelBundle&, int step)>;

struct TrainReport {
  std::vector<std::pair<int, nlohmann::json>> eval_trajectory;
  LossBreakdown final_losses;
  std::int64_t params_g = 0, params_f = 0, params_d = 0, params_h = 0;
  int steps_run = 0;
};

struct TrainOutput {
  ModelBundle bundle;
  std::array<OptState, 4> opt;  // g, f, d, h
  TrainReport report;
  DomainStats stats;
};

inline TrainOutput train(const Config& cfg, const TrainView& view, const MetricsSink& sink,
                         const EvalHook& hook) {
  validate(cfg);
  const int T = cfg.train.steps;
  const int b = cfg.train.batch_size;

  Rng init_rng(splitmix64(cfg.seed ^ 0x1965cf01b2d0a513ULL));
  Rng data_rng(splitmix64(cfg.seed ^ 0x2f8e3a9c54b16d07ULL));
  Rng select_rng(splitmix64(cfg.seed ^ 0x3d41f2a6c8e95b0dULL));
  Rng mix_rng(splitmix64(cfg.seed ^ 0x4b37d159e0a2c68fULL));

  TrainOutput out;
  out.bundle = init_bundle(cfg.model, view.dim, view.classes, init_rng);
  out.stats = compute_domain_stats(view.source_x, view.target_x, cfg.model.per_domain_standardize);
  ModelBundle& bundle = out.bundle;
  init_opt_state(bundle.g, out.opt[0]);
  init_opt_state(bundle.f, out.opt[1]);
  init_opt_state(bundle.d, out.opt[2]);
  init_opt_state(bundle.h, out.opt[3]);

  const Tensor src_g = out.stats.active ? standardize(view.source_x, out.stats.src_mean, out.stats.src_std)
                                        : view.source_x.detached();
  const Tensor tgt_g = out.stats.active ? standardize(view.target_x, out.stats.tgt_mean, out.stats.tgt_std)
                                        : view.target_x.detached();

  Schedules sch;
  sch.total_steps = std::max(T, 1);
  sch.tau0 = cfg.select.tau;
  sch.tau_min = cfg.train.tau_min;
  sch.alpha0 = cfg.sharpen.alpha;
  sch.alpha_min = cfg.train.alpha_min;
  sch.floor_frac = cfg.train.schedule_floor_frac;
  sch.lr_min = cfg.train.lr_min;

  Batcher batcher(view.source_x.rows(), view.target_x.rows());

  TrainReport& report = out.report;
  report.params_g = bundle.g.param_count();
  report.params_f = bundle.f.param_count();
  report.params_d = bundle.d.param_count();
  report.params_h = bundle.h.param_count();

  if (hook) report.eval_trajectory.emplace_back(0, hook(bundle, 0));

  for (int t = 1; t <= T; ++t) {
    const int si = t - 1;  // schedule index: first step sees the initial values
    const double tau = sch.tau(si);
    const double alpha = sch.alpha(si);
    const double lam = sch.grl_lambda(si);

    auto [src_idx, tgt_idx] = batcher.next(b, data_rng);
    const Tensor xs = gather_rows_values(src_g, src_idx);
    const Tensor xt = gather_rows_values(tgt_g, tgt_idx);
    const Tensor xs_raw = gather_rows_values(view.source_x, src_idx);

    Tape tape;
    AttachedBundle nets = attach(tape, bundle, cfg.select_enabled);

    const char* stage = "forward";
    try {
      Tensor gs = mlp_forward(nets.g, xs);
      Tensor gt = mlp_forward(nets.g, xt);
      Tensor log_probs_t = log_softmax(mlp_forward(nets.f, gt));

      stage = "select";
      const bool select_active =
          cfg.select_enabled &&
          t > static_cast<int>(cfg.select.warmup_frac * static_cast<double>(T));
      BatchPartition part =
          select_active ? partition_batch(nets.h, xs_raw, tau, select_rng) : select_all(b);

      stage = "label";
      SharpenConfig sharpen_now = cfg.sharpen;
      sharpen_now.alpha = alpha;
      const bool label_active =
          cfg.label_enabled &&
          t > static_cast<int>(cfg.sharpen.warmup_frac * static_cast<double>(T));
      std::vector<SoftPseudoLabel> pls;
      std::vector<int> accepted;
      if (label_active) {
        pls = pseudo_label_batch(bundle, xt, sharpen_now);
        for (std::size_t i = 0; i < pls.size(); ++i) {
          if (pls[i].accepted) accepted.push_back(static_cast<int>(i));
        }
      }

      stage = "sup";
      Tensor loss_sup = Tensor::scalar(0.0);
      Tensor log_probs_sel;  // classifier rows for the selected sources, reused nowhere else
      if (!part.selected.empty()) {
        Tensor gsel = gather_rows(gs, part.selected);
        log_probs_sel = log_softmax(mlp_forward(nets.f, gsel));
        std::vector<std::vector<double>> labels;
        labels.reserve(part.selected.size());
        for (int row : part.selected) {
          labels.push_back(smooth_labels(view.source_y[static_cast<std::size_t>(src_idx[static_cast<std::size_t>(row)])],
                                         view.classes, cfg.smoothing.epsilon));
        }
        loss_sup = supervised_loss(log_probs_sel, labels);
      }

      stage = "adv";
      // entropy weights from frozen predictions; constants on the tape
      std::vector<double> w_src, w_tgt;
      std::optional<Tensor> d_src_logits;
      if (!part.selected.empty()) {
        Tensor frozen_sel = mlp_forward(bundle.f, mlp_forward(bundle.g, gather_rows_values(xs, part.selected)));
        for (std::int64_t i = 0; i < frozen_sel.rows(); ++i) {
          std::span<const double> row(frozen_sel.data().data() + i * frozen_sel.cols(),
                                      static_cast<std::size_t>(frozen_sel.cols()));
          w_src.push_back(cfg.adv_entropy_weighting ? entropy_weight(detail::softmax_row(row)) : 1.0);
        }
        d_src_logits = mlp_forward(nets.d, grl(gather_rows(gs, part.selected), lam));
      }
      Tensor frozen_tgt = mlp_forward(bundle.f, mlp_forward(bundle.g, xt));
      for (std::int64_t i = 0; i < frozen_tgt.rows(); ++i) {
        std::span<const double> row(frozen_tgt.data().data() + i * frozen_tgt.cols(),
                                    static_cast<std::size_t>(frozen_tgt.cols()));
        w_tgt.push_back(cfg.adv_entropy_weighting ? entropy_weight(detail::softmax_row(row)) : 1.0);
      }
      std::optional<Tensor> d_tgt_logits = mlp_forward(nets.d, grl(gt, lam));
      Tensor loss_adv = adv_loss(d_src_logits, d_tgt_logits, w_src, w_tgt);

      stage = "select_loss";
      SelectConfig sel_cfg = cfg.select;
      sel_cfg.tau = tau;
      Tensor loss_select = select_active ? select_loss(part, gs, gt, log_probs_t, sel_cfg) : Tensor::scalar(0.0);

      stage = "label_loss";
      Tensor loss_label = label_active ? label_loss(log_probs_t, pls) : Tensor::scalar(0.0);

      stage = "mix";
      const bool mix_active =
          cfg.mix_enabled && t > static_cast<int>(cfg.mix.warmup_frac * static_cast<double>(T));
      MixLossParts mix_parts{Tensor::scalar(0.0), Tensor::scalar(0.0)};
      if (mix_active) {
        std::vector<LabeledVec> sel_pool, tgt_pool;
        for (int row : part.selected) {
          LabeledVec v;
          const double* p = xs.data().data() + static_cast<std::int64_t>(row) * xs.cols();
          v.x.assign(p, p + xs.cols());
          v.y = smooth_labels(view.source_y[static_cast<std::size_t>(src_idx[static_cast<std::size_t>(row)])],
                              view.classes, cfg.smoothing.epsilon);
          sel_pool.push_back(std::move(v));
        }
        for (int row : accepted) {
          LabeledVec v;
          const double* p = xt.data().data() + static_cast<std::int64_t>(row) * xt.cols();
          v.x.assign(p, p + xt.cols());
          v.y = pls[static_cast<std::size_t>(row)].probs;
          tgt_pool.push_back(std::move(v));
        }
        const auto mixed = build_mix_batches(sel_pool, tgt_pool, cfg.mix, mix_rng);
        mix_parts = mix_loss(nets.g, nets.f, nets.d, lam, mixed, cfg.mix);
      }

      stage = "total";
      TotalLoss total = total_loss(loss_sup, loss_adv, loss_select, loss_label, mix_parts.cls, mix_parts.dom,
                                   cfg.weights);
      total.breakdown.selected_count = static_cast<int>(part.selected.size());
      total.breakdown.discarded_count = static_cast<int>(part.discarded.size());
      total.breakdown.accepted_count = static_cast<int>(accepted.size());

      // the selector must receive gradient through the selection loss only
      if (cfg.select_enabled) {
        std::vector<int> roots;
        for (const Tensor* loss : {&loss_sup, &loss_adv, &loss_label, &mix_parts.cls, &mix_parts.dom}) {
          if (loss->attached()) roots.push_back(loss->node());
        }
        const auto h_leaves = nets.h.leaf_nodes();
        if (tape.reaches(roots, h_leaves)) {
          throw ContractViolation("selector parameters are reachable from a non-selection loss");
        }
      }

      stage = "backward";
      if (!total.value.attached()) throw ContractViolation("train: loss disconnected from parameters");
      GradMap grads = tape.backward(total.value);

      stage = "update";
      auto apply = [&](MlpParams& params, const AttachedMlp& attached, double lr0, double wd, OptState& st) {
        auto ids = traindetail::attached_list(attached);
        std::vector<Tensor> gl;
        gl.reserve(ids.size());
        for (const Tensor* a : ids) gl.push_back(grads.grad(*a));
        sgd_step(params, gl, sch.lr(lr0, si), cfg.train.momentum, wd, st);
      };
      apply(bundle.g, nets.g, cfg.train.lr_extractor, cfg.train.weight_decay_other, out.opt[0]);
      apply(bundle.f, nets.f, cfg.train.lr_classifier, cfg.train.weight_decay_other, out.opt[1]);
      apply(bundle.d, nets.d, cfg.train.lr_discriminator, cfg.train.weight_decay_other, out.opt[2]);
      if (select_active) {
        apply(bundle.h, nets.h, cfg.train.lr_selector, cfg.train.weight_decay_selector, out.opt[3]);
      }

      report.final_losses = total.breakdown;
      report.steps_run = t;

      nlohmann::json rec{{"step", t},
                         {"sup", total.breakdown.sup},
                         {"adv", total.breakdown.adv},
                         {"select", total.breakdown.select},
                         {"label", total.breakdown.label},
                         {"mix_cls", total.breakdown.mix_cls},
                         {"mix_dom", total.breakdown.mix_dom},
                         {"total", total.breakdown.total},
                         {"selected_count", total.breakdown.selected_count},
                         {"discarded_count", total.breakdown.discarded_count},
                         {"accepted_count", total.breakdown.accepted_count},
                         {"tau", tau},
                         {"alpha", alpha},
                         {"grl_lambda", lam},
                         {"lr", sch.lr(cfg.train.lr_extractor, si)}};
      const bool eval_now = hook && ((cfg.train.eval_every > 0 && t % cfg.train.eval_every == 0) || t == T);
      if (eval_now) {
        nlohmann::json extra = hook(bundle, t);
        report.eval_trajectory.emplace_back(t, extra);
        for (auto it = extra.begin(); it != extra.end(); ++it) rec[it.key()] = it.value();
      }
      if (sink) sink(rec);
    } catch (const NumericFault& e) {
      throw NumericFault("step " + std::to_string(t) + " [" + stage + "]: " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint format: one JSON header line (version, config echo, manifest,
// step), then little-endian doubles for parameters and momentum buffers in
// manifest order.

constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Config config;
  ModelBundle bundle;
  std::array<OptState, 4> opt;
  int step = 0;
};

namespace traindetail {

inline void manifest_entries(nlohmann::json& manifest, const char* net, const MlpParams& p) {
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    manifest.push_back({{"name", std::string(net) + ".w" + std::to_string(l)},
                        {"shape", p.weights[l].shape()}});
    manifest.push_back({{"name", std::string(net) + ".b" + std::to_string(l)},
                        {"shape", p.biases[l].shape()}});
  }
}

inline void write_doubles(std::ofstream& out, std::span<const double> v) {
  for (double d : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

inline std::vector<double> read_doubles(std::ifstream& in, std::size_t count, const std::string& what) {
  std::vector<double> out(count);
  for (auto& d : out) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
      throw IoError("checkpoint payload truncated while reading " + what);
    }
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    std::memcpy(&d, &bits, sizeof d);
  }
  return out;
}

}  // namespace traindetail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  nlohmann::json manifest = nlohmann::json::array();
  traindetail::manifest_entries(manifest, "g", ckpt.bundle.g);
  traindetail::manifest_entries(manifest, "f", ckpt.bundle.f);
  traindetail::manifest_entries(manifest, "d", ckpt.bundle.d);
  traindetail::manifest_entries(manifest, "h", ckpt.bundle.h);
  nlohmann::json header{{"version", kCheckpointVersion},
                        {"config", echo_config(ckpt.config)},
                        {"manifest", manifest},
                        {"step", ckpt.step},
                        {"input_dim", ckpt.bundle.input_dim},
                        {"feature_dim", ckpt.bundle.feature_dim},
                        {"num_classes", ckpt.bundle.num_classes}};
  out << header.dump() << "\n";
  auto write_net = [&](const MlpParams& p, const OptState& st) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      traindetail::write_doubles(out, p.weights[l].data());
      traindetail::write_doubles(out, p.biases[l].data());
    }
    for (const auto& buf : st.momentum) traindetail::write_doubles(out, buf);
  };
  write_net(ckpt.bundle.g, ckpt.opt[0]);
  write_net(ckpt.bundle.f, ckpt.opt[1]);
  write_net(ckpt.bundle.d, ckpt.opt[2]);
  write_net(ckpt.bundle.h, ckpt.opt[3]);
  if (!out) throw IoError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw IoError(path + ": missing checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": malformed checkpoint header: " + e.what());
  }
  const int version = header.value("version", -1);
  if (version != kCheckpointVersion) {
    throw IoError(path + ": checkpoint version " + std::to_string(version) + " not supported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  apply_config_text(ckpt.config, header.at("config").get<std::string>(), path);
  ckpt.step = header.at("step").get<int>();

  // rebuild shapes from the config, then cross-check against the manifest
  Rng init_rng(splitmix64(ckpt.config.seed ^ 0x1965cf01b2d0a513ULL));
  ckpt.bundle = init_bundle(ckpt.config.model, header.at("input_dim").get<int>(),
                            header.at("num_classes").get<int>(), init_rng);
  nlohmann::json manifest = nlohmann::json::array();
  traindetail::manifest_entries(manifest, "g", ckpt.bundle.g);
  traindetail::manifest_entries(manifest, "f", ckpt.bundle.f);
  traindetail::manifest_entries(manifest, "d", ckpt.bundle.d);
  traindetail::manifest_entries(manifest, "h", ckpt.bundle.h);
  if (manifest != header.at("manifest")) {
    throw IoError(path + ": manifest disagrees with shapes implied by the stored config");
  }

  auto read_net = [&](MlpParams& p, OptState& st, const char* net) {
    st.momentum.clear();
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      const std::string what = std::string(net) + " layer " + std::to_string(l);
      p.weights[l] = Tensor(p.weights[l].shape(),
                            traindetail::read_doubles(in, static_cast<std::size_t>(p.weights[l].numel()), what));
      p.biases[l] = Tensor(p.biases[l].shape(),
                           traindetail::read_doubles(in, static_cast<std::size_t>(p.biases[l].numel()), what));
    }
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      const std::string what = std::string(net) + " momentum " + std::to_string(l);
      st.momentum.push_back(traindetail::read_doubles(in, static_cast<std::size_t>(p.weights[l].numel()), what));
      st.momentum.push_back(traindetail::read_doubles(in, static_cast<std::size_t>(p.biases[l].numel()), what));
    }
    st.step = ckpt.step;
  };
  read_net(ckpt.bundle.g, ckpt.opt[0], "g");
  read_net(ckpt.bundle.f, ckpt.opt[1], "f");
  read_net(ckpt.bundle.d, ckpt.opt[2], "d");
  read_net(ckpt.bundle.h, ckpt.opt[3], "h");
  char extra;
  if (in.read(&extra, 1)) throw IoError(path + ": trailing bytes after checkpoint payload");
  return ckpt;
}

}  // namespace slm
