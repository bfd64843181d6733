#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "slm/autodiff.hpp"
#include "slm/common.hpp"

// Synthetic partial-domain tasks and the CSV contract. Target labels and the
// per-source-sample shared-class bits live in an evaluation-only store that
// the training path never receives (see TrainView).

namespace slm {

// Default shift: the translation points into the interior of the shared arc
// (classes 0-3 sit at 0..135 degrees, the vector aims at 67.5), which makes
// neighboring shared clusters compete for each target cluster while moving
// every target further from the outlier half-circle. Plain marginal
// alignment then cascades assignments down the arc until the edge cluster
// lands on an outlier class; removing the outliers snaps the chain back.
// Larger rotations (past ~22 degrees at this spacing) put a shared cluster
// nearest an outlier class and make the task unidentifiable from unlabeled
// data, so the rotation stays moderate and the translation carries the
// difficulty.
struct TaskSpec {
  int dim = 2;
  int classes = 8;
  std::vector<int> shared{0, 1, 2, 3};
  int source_per_class = 100;
  int target_per_class = 100;
  double rotation_deg = 10.0;
  std::vector<double> translation{0.765, 1.848};
  double scale_factor = 1.2;
  double noise_sigma = 0.35;
  std::uint64_t seed = 1;
};

inline void validate_task_spec(const TaskSpec& s) {
  if (s.dim < 2) throw ContractViolation("task.dim: need at least two dimensions (the shift rotates the first two)");
  if (s.classes < 2) throw ContractViolation("task.classes: need at least two classes");
  if (s.shared.empty()) throw ContractViolation("task.shared_classes: shared class list must be nonempty");
  for (int c : s.shared) {
    if (c < 0 || c >= s.classes) throw ContractViolation("task.shared_classes: class out of range");
  }
  std::set<int> uniq(s.shared.begin(), s.shared.end());
  if (uniq.size() != s.shared.size()) throw ContractViolation("task.shared_classes: duplicate class");
  if (s.source_per_class < 1) throw ContractViolation("task.source_per_class: counts must be >= 1");
  if (s.target_per_class < 1) throw ContractViolation("task.target_per_class: counts must be >= 1");
  if (!(s.scale_factor > 0.0)) throw ContractViolation("task.scale: scale must be positive");
  if (s.noise_sigma < 0.0) throw ContractViolation("task.noise_sigma: sigma must be nonnegative");
  if (static_cast<int>(s.translation.size()) > s.dim) {
    throw ContractViolation("task.translation: more components than dimensions");
  }
}

// Known only to evaluation code.
struct EvalStore {
  std::vector<int> target_labels;          // -1 where unknown
  std::vector<std::uint8_t> source_shared; // oracle bit per source sample
  std::vector<int> target_label_space;     // sorted distinct known target labels
};

struct PdaTask {
  int dim = 0;
  int classes = 0;
  Tensor source_x;             // [Ns x dim]
  std::vector<int> source_y;   // class indices
  Tensor target_x;             // [Nt x dim]
  EvalStore eval;
};

// The slice of a task the trainer is allowed to see.
struct TrainView {
  const Tensor& source_x;
  const std::vector<int>& source_y;
  const Tensor& target_x;
  int dim;
  int classes;
};

inline TrainView train_view(const PdaTask& task) {
  return TrainView{task.source_x, task.source_y, task.target_x, task.dim, task.classes};
}

// Class means sit on a circle of radius 4 in the first two coordinates.
// Target samples come from shared classes only and pass through rotate,
// scale, translate before landing.
inline PdaTask generate_synthetic_pda(const TaskSpec& spec) {
  validate_task_spec(spec);
  Rng rng(splitmix64(spec.seed ^ 0x7a5ca11db047a3efULL));
  PdaTask task;
  task.dim = spec.dim;
  task.classes = spec.classes;

  const double radius = 4.0;
  auto class_mean = [&](int c) {
    std::vector<double> mu(static_cast<std::size_t>(spec.dim), 0.0);
    const double angle = 2.0 * Rng::pi() * static_cast<double>(c) / static_cast<double>(spec.classes);
    mu[0] = radius * std::cos(angle);
    mu[1] = radius * std::sin(angle);
    return mu;
  };

  const std::int64_t ns = static_cast<std::int64_t>(spec.classes) * spec.source_per_class;
  std::vector<double> sx(static_cast<std::size_t>(ns * spec.dim));
  task.source_y.reserve(static_cast<std::size_t>(ns));
  std::set<int> shared_set(spec.shared.begin(), spec.shared.end());
  std::size_t pos = 0;
  for (int c = 0; c < spec.classes; ++c) {
    const auto mu = class_mean(c);
    for (int k = 0; k < spec.source_per_class; ++k) {
      for (int d = 0; d < spec.dim; ++d) sx[pos++] = mu[static_cast<std::size_t>(d)] + spec.noise_sigma * rng.normal();
      task.source_y.push_back(c);
      task.eval.source_shared.push_back(shared_set.count(c) ? 1 : 0);
    }
  }
  task.source_x = Tensor({ns, spec.dim}, std::move(sx));

  const double theta = spec.rotation_deg * Rng::pi() / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  std::vector<double> translation(static_cast<std::size_t>(spec.dim), 0.0);
  std::copy(spec.translation.begin(), spec.translation.end(), translation.begin());

  const std::int64_t nt = static_cast<std::int64_t>(spec.shared.size()) * spec.target_per_class;
  std::vector<double> tx(static_cast<std::size_t>(nt * spec.dim));
  pos = 0;
  for (int c : spec.shared) {
    const auto mu = class_mean(c);
    for (int k = 0; k < spec.target_per_class; ++k) {
      std::vector<double> z(static_cast<std::size_t>(spec.dim));
      for (int d = 0; d < spec.dim; ++d) z[static_cast<std::size_t>(d)] = mu[static_cast<std::size_t>(d)] + spec.noise_sigma * rng.normal();
      // rotate the first two coordinates, then scale, then translate
      const double x0 = z[0] * ct - z[1] * st;
      const double x1 = z[0] * st + z[1] * ct;
      z[0] = x0;
      z[1] = x1;
      for (int d = 0; d < spec.dim; ++d) {
        tx[pos++] = z[static_cast<std::size_t>(d)] * spec.scale_factor + translation[static_cast<std::size_t>(d)];
      }
      task.eval.target_labels.push_back(c);
    }
  }
  task.target_x = Tensor({nt, spec.dim}, std::move(tx));
  task.eval.target_label_space.assign(shared_set.begin(), shared_set.end());
  return task;
}

namespace detail {

inline double parse_double(const std::string& tok, std::size_t line_no, const char* what) {
  const char* b = tok.data();
  const char* e = tok.data() + tok.size();
  double v = 0.0;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc{} || res.ptr != e) {
    throw IoError("line " + std::to_string(line_no) + ": " + what + " is not numeric: '" + tok + "'");
  }
  return v;
}

inline long parse_int(const std::string& tok, std::size_t line_no, const char* what) {
  const char* b = tok.data();
  const char* e = tok.data() + tok.size();
  long v = 0;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc{} || res.ptr != e) {
    throw IoError("line " + std::to_string(line_no) + ": " + what + " is not an integer: '" + tok + "'");
  }
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace detail

// Header: domain,label,f0,...,f{d-1}. Source rows need labels; target labels
// go to the evaluation store, -1 meaning unknown. Oracle bits derive from
// membership of the source label in the observed target label space.
inline PdaTask load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_csv(line);
  if (header.size() < 3 || header[0] != "domain" || header[1] != "label") {
    throw IoError(path + ": line 1: header must be domain,label,f0,...");
  }
  const int dim = static_cast<int>(header.size()) - 2;
  for (int d = 0; d < dim; ++d) {
    if (header[static_cast<std::size_t>(d + 2)] != "f" + std::to_string(d)) {
      throw IoError(path + ": line 1: feature column " + std::to_string(d) + " must be named f" + std::to_string(d));
    }
  }

  std::vector<double> sx, tx;
  std::vector<int> sy, ty;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto toks = detail::split_csv(line);
    if (static_cast<int>(toks.size()) != dim + 2) {
      throw IoError(path + ": line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 2) +
                    " fields, got " + std::to_string(toks.size()));
    }
    const long label = detail::parse_int(toks[1], line_no, "label");
    std::vector<double> feats(static_cast<std::size_t>(dim));
    for (int d = 0; d < dim; ++d) {
      feats[static_cast<std::size_t>(d)] = detail::parse_double(toks[static_cast<std::size_t>(d + 2)], line_no, "feature");
    }
    if (toks[0] == "source") {
      if (label < 0) throw IoError(path + ": line " + std::to_string(line_no) + ": source row is missing a label");
      sy.push_back(static_cast<int>(label));
      sx.insert(sx.end(), feats.begin(), feats.end());
    } else if (toks[0] == "target") {
      if (label < -1) throw IoError(path + ": line " + std::to_string(line_no) + ": target label must be >= -1");
      ty.push_back(static_cast<int>(label));
      tx.insert(tx.end(), feats.begin(), feats.end());
    } else {
      throw IoError(path + ": line " + std::to_string(line_no) + ": domain must be 'source' or 'target'");
    }
  }
  if (sy.empty()) throw IoError(path + ": no source rows");
  if (ty.empty()) throw IoError(path + ": no target rows");

  PdaTask task;
  task.dim = dim;
  task.classes = *std::max_element(sy.begin(), sy.end()) + 1;
  task.source_x = Tensor({static_cast<std::int64_t>(sy.size()), dim}, std::move(sx));
  task.source_y = std::move(sy);
  task.target_x = Tensor({static_cast<std::int64_t>(ty.size()), dim}, std::move(tx));
  task.eval.target_labels = std::move(ty);
  std::set<int> space;
  for (int l : task.eval.target_labels) {
    if (l >= 0) space.insert(l);
  }
  task.eval.target_label_space.assign(space.begin(), space.end());
  for (int y : task.source_y) task.eval.source_shared.push_back(space.count(y) ? 1 : 0);
  return task;
}

inline void write_csv_dataset(const PdaTask& task, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // LF newlines on every platform
  if (!out) throw IoError("cannot write dataset: " + path);
  out << "domain,label";
  for (int d = 0; d < task.dim; ++d) out << ",f" << d;
  out << "\n";
  char buf[64];
  auto fmt = [&](double v) {
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  for (std::int64_t i = 0; i < task.source_x.rows(); ++i) {
    out << "source," << task.source_y[static_cast<std::size_t>(i)];
    for (int d = 0; d < task.dim; ++d) out << "," << fmt(task.source_x.at(i, d));
    out << "\n";
  }
  for (std::int64_t i = 0; i < task.target_x.rows(); ++i) {
    const int label = i < static_cast<std::int64_t>(task.eval.target_labels.size())
                          ? task.eval.target_labels[static_cast<std::size_t>(i)]
                          : -1;
    out << "target," << label;
    for (int d = 0; d < task.dim; ++d) out << "," << fmt(task.target_x.at(i, d));
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

// Epoch-wise shuffling without replacement per domain; a domain that runs out
// mid-batch reshuffles and wraps.
class Batcher {
 public:
  Batcher(std::int64_t n_source, std::int64_t n_target) : src_(n_source), tgt_(n_target) {
    if (n_source < 1 || n_target < 1) throw ContractViolation("Batcher: both domains must be nonempty");
  }

  std::pair<std::vector<int>, std::vector<int>> next(int batch, Rng& rng) {
    if (batch < 1) throw ContractViolation("Batcher: batch size must be >= 1");
    return {src_.take(batch, rng), tgt_.take(batch, rng)};
  }

 private:
  struct DomainCursor {
    explicit DomainCursor(std::int64_t n) : order(static_cast<std::size_t>(n)) {
      for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = static_cast<int>(i);
    }
    std::vector<int> take(int count, Rng& rng) {
      std::vector<int> out;
      out.reserve(static_cast<std::size_t>(count));
      while (count > 0) {
        if (cursor == order.size()) {
          rng.shuffle(order);
          cursor = 0;
        }
        out.push_back(order[cursor++]);
        --count;
      }
      return out;
    }
    std::vector<int> order;
    std::size_t cursor = order.size();  // force a shuffle on first use
  };

  DomainCursor src_;
  DomainCursor tgt_;
};

inline Tensor gather_rows_values(const Tensor& x, std::span<const int> idx) {
  const std::int64_t cols = x.cols();
  std::vector<double> out(idx.size() * static_cast<std::size_t>(cols));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double* src = x.data().data() + static_cast<std::int64_t>(idx[k]) * cols;
    std::copy(src, src + cols, out.begin() + static_cast<std::ptrdiff_t>(k * static_cast<std::size_t>(cols)));
  }
  return Tensor({static_cast<std::int64_t>(idx.size()), cols}, std::move(out));
}

}  // namespace slm
