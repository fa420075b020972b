#pragma once

// Static-feature outcome predictor: sample-weighted gradient boosted trees
// with logistic loss and Newton leaves, plus threshold selection and the
// final thresholded classification.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdop/error.hpp"
#include "kdop/numerics.hpp"

namespace kdop::static_op {

struct GbConfig {
  std::size_t n_trees = 200;
  std::size_t max_depth = 3;
  double learning_rate = 0.1;
  std::size_t min_samples_leaf = 5;
  double subsample = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("gb.learning_rate must lie in (0,1]");
    if (max_depth < 1) throw ConfigError("gb.max_depth must be >= 1");
    if (min_samples_leaf < 1) throw ConfigError("gb.min_samples_leaf must be >= 1");
    if (!(subsample > 0.0 && subsample <= 1.0)) throw ConfigError("gb.subsample must lie in (0,1]");
  }
  bool operator==(const GbConfig&) const = default;
};

// Preorder node array; nodes[0] is the root. feature < 0 marks a leaf.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  double gain = 0.0;
  bool operator==(const TreeNode&) const = default;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0) {
      const auto& n = nodes[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right);
    }
    return nodes[i].value;
  }

  std::size_t depth() const { return depth_from(0); }

  bool operator==(const RegressionTree&) const = default;

 private:
  std::size_t depth_from(std::size_t i) const {
    const auto& n = nodes[i];
    if (n.feature < 0) return 0;
    return 1 + std::max(depth_from(static_cast<std::size_t>(n.left)), depth_from(static_cast<std::size_t>(n.right)));
  }
};

struct GbModel {
  double base_score = 0.0;
  double learning_rate = 0.1;
  std::size_t n_features = 0;
  std::vector<RegressionTree> trees;
  std::vector<std::string> feature_names;
  GbConfig config;

  bool operator==(const GbModel&) const = default;
};

using ImportanceVector = std::vector<double>;

struct Threshold {
  double gamma = 0.5;
};

namespace detail {

struct BoostRow {
  double grad;
  double hess;
};

class TreeBuilder {
 public:
  TreeBuilder(const Mat& x, const std::vector<BoostRow>& rows, const GbConfig& cfg) : x_(x), rows_(rows), cfg_(cfg) {}

  RegressionTree build(std::vector<std::size_t> members) {
    RegressionTree tree;
    grow(tree, std::move(members), 0);
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  static double leaf_value(double g, double h) { return h > 1e-12 ? -g / h : 0.0; }

  Split best_split(const std::vector<std::size_t>& members, double g_total, double h_total) const {
    Split best;
    const double parent = h_total > 1e-12 ? g_total * g_total / h_total : 0.0;
    std::vector<std::size_t> order(members);
    for (std::size_t f = 0; f < x_.cols; ++f) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x_(a, f) < x_(b, f); });
      double gl = 0.0, hl = 0.0;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        gl += rows_[order[k]].grad;
        hl += rows_[order[k]].hess;
        const double lo = x_(order[k], f);
        const double hi = x_(order[k + 1], f);
        if (lo == hi) continue;
        const std::size_t n_left = k + 1;
        const std::size_t n_right = order.size() - n_left;
        if (n_left < cfg_.min_samples_leaf || n_right < cfg_.min_samples_leaf) continue;
        const double gr = g_total - gl;
        const double hr = h_total - hl;
        if (hl <= 1e-12 || hr <= 1e-12) continue;
        const double gain = gl * gl / hl + gr * gr / hr - parent;
        // Strict improvement keeps the lowest feature, then lowest threshold.
        if (gain > best.gain + 1e-12) {
          best.feature = static_cast<int>(f);
          best.threshold = 0.5 * (lo + hi);
          best.gain = gain;
        }
      }
    }
    return best;
  }

  std::size_t grow(RegressionTree& tree, std::vector<std::size_t> members, std::size_t depth) {
    double g = 0.0, h = 0.0;
    for (std::size_t i : members) {
      g += rows_[i].grad;
      h += rows_[i].hess;
    }
    const std::size_t id = tree.nodes.size();
    tree.nodes.push_back({});
    Split split;
    if (depth < cfg_.max_depth && members.size() >= 2 * cfg_.min_samples_leaf) split = best_split(members, g, h);
    if (split.feature < 0) {
      tree.nodes[id].value = leaf_value(g, h);
      return id;
    }
    std::vector<std::size_t> left, right;
    for (std::size_t i : members)
      (x_(i, static_cast<std::size_t>(split.feature)) < split.threshold ? left : right).push_back(i);
    tree.nodes[id].feature = split.feature;
    tree.nodes[id].threshold = split.threshold;
    tree.nodes[id].gain = split.gain;
    const std::size_t l = grow(tree, std::move(left), depth + 1);
    const std::size_t r = grow(tree, std::move(right), depth + 1);
    tree.nodes[id].left = static_cast<int>(l);
    tree.nodes[id].right = static_cast<int>(r);
    return id;
  }

  const Mat& x_;
  const std::vector<BoostRow>& rows_;
  const GbConfig& cfg_;
};

inline double log_loss_term(double margin, int y) {
  // log(1 + e^m) - y m, computed without overflow.
  const double softplus = margin > 0 ? margin + std::log1p(std::exp(-margin)) : std::log1p(std::exp(margin));
  return softplus - (y ? margin : 0.0);
}

}  // namespace detail

inline double weighted_log_loss(std::span<const double> margins, std::span<const int> y, std::span<const double> w) {
  double total = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < margins.size(); ++i) {
    total += w[i] * detail::log_loss_term(margins[i], y[i]);
    wsum += w[i];
  }
  return wsum > 0 ? total / wsum : 0.0;
}

inline double raw_margin(const GbModel& model, std::span<const double> x) {
  double m = model.base_score;
  for (const auto& t : model.trees) m += model.learning_rate * t.predict(x);
  return m;
}

// Per-round history, mostly for tests of boosting progress.
struct TrainLog {
  std::vector<double> loss_per_round;
};

inline GbModel train_gb(const Mat& x, std::span<const int> y, std::span<const double> weights, const GbConfig& cfg,
                        std::vector<std::string> feature_names = {}, TrainLog* log = nullptr) {
  cfg.validate();
  if (x.rows != y.size() || x.rows != weights.size())
    throw DimensionError("train_gb: " + std::to_string(x.rows) + " rows, " + std::to_string(y.size()) + " labels, " +
                         std::to_string(weights.size()) + " weights");
  for (double w : weights)
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("train_gb: sample weights must be finite and nonnegative");
  if (!feature_names.empty() && feature_names.size() != x.cols)
    throw DimensionError("train_gb: feature names do not match column count");

  // Zero-weight rows carry no information; dropping them up front makes the
  // model identical to one trained without them.
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < x.rows; ++i)
    if (weights[i] > 0.0) keep.push_back(i);
  if (keep.empty()) throw TrainingError("train_gb: all sample weights are zero");

  Mat xs(keep.size(), x.cols);
  std::vector<int> ys(keep.size());
  std::vector<double> ws(keep.size());
  double wsum = 0.0;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    std::copy_n(x.row(keep[k]).begin(), x.cols, xs.row(k).begin());
    ys[k] = y[keep[k]];
    if (ys[k] != 0 && ys[k] != 1) throw DomainError("train_gb: labels must be 0/1");
    ws[k] = weights[keep[k]];
    wsum += ws[k];
  }
  const double mean_w = wsum / static_cast<double>(ws.size());
  for (double& w : ws) w /= mean_w;

  double wpos = 0.0, wneg = 0.0;
  for (std::size_t k = 0; k < ys.size(); ++k) (ys[k] ? wpos : wneg) += ws[k];
  if (wpos <= 0.0 || wneg <= 0.0) throw TrainingError("train_gb: need both classes with positive weight");

  GbModel model;
  model.base_score = std::log(wpos / wneg);
  model.learning_rate = cfg.learning_rate;
  model.n_features = x.cols;
  model.feature_names = feature_names.empty() ? std::vector<std::string>{} : std::move(feature_names);
  model.config = cfg;

  std::vector<double> margin(xs.rows, model.base_score);
  std::vector<detail::BoostRow> rows(xs.rows);
  Rng rng(cfg.seed);
  double loss = weighted_log_loss(margin, ys, ws);
  if (log) log->loss_per_round.push_back(loss);

  std::vector<double> step(xs.rows);
  for (std::size_t round = 0; round < cfg.n_trees; ++round) {
    for (std::size_t i = 0; i < xs.rows; ++i) {
      const double p = sigmoid(margin[i]);
      rows[i].grad = ws[i] * (p - ys[i]);
      rows[i].hess = ws[i] * p * (1.0 - p);
    }
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < xs.rows; ++i)
      if (cfg.subsample >= 1.0 || rng.uniform() < cfg.subsample) members.push_back(i);
    if (members.empty()) continue;

    detail::TreeBuilder builder(xs, rows, cfg);
    RegressionTree tree = builder.build(std::move(members));

    // A full Newton step can overshoot on saturated leaves; halve the leaf
    // values until the weighted loss does not increase.
    double new_loss = loss;
    for (int attempt = 0; attempt < 60; ++attempt) {
      for (std::size_t i = 0; i < xs.rows; ++i) step[i] = margin[i] + cfg.learning_rate * tree.predict(xs.row(i));
      new_loss = weighted_log_loss(step, ys, ws);
      if (new_loss <= loss) break;
      for (auto& n : tree.nodes)
        if (n.feature < 0) n.value *= 0.5;
    }
    if (new_loss > loss) {
      for (auto& n : tree.nodes)
        if (n.feature < 0) n.value = 0.0;
      new_loss = loss;
    } else {
      margin.swap(step);
    }
    loss = new_loss;
    model.trees.push_back(std::move(tree));
    if (log) log->loss_per_round.push_back(loss);
  }
  return model;
}

inline std::vector<double> predict_proba(const GbModel& model, const Mat& x) {
  if (x.cols != model.n_features)
    throw DimensionError("predict_proba: model expects " + std::to_string(model.n_features) + " features, got " +
                         std::to_string(x.cols));
  std::vector<double> p(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) p[i] = sigmoid(raw_margin(model, x.row(i)));
  return p;
}

// Total split gain per feature, normalized to sum 1 (all zeros without splits).
inline ImportanceVector feature_importance(const GbModel& model) {
  ImportanceVector imp(model.n_features, 0.0);
  for (const auto& t : model.trees)
    for (const auto& n : t.nodes)
      if (n.feature >= 0) imp[static_cast<std::size_t>(n.feature)] += n.gain;
  const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
  if (total > 0.0)
    for (double& v : imp) v /= total;
  return imp;
}

inline std::vector<int> classify(std::span<const double> p_hat, double gamma) {
  std::vector<int> out(p_hat.size());
  for (std::size_t i = 0; i < p_hat.size(); ++i) out[i] = p_hat[i] >= gamma ? 1 : 0;
  return out;
}

inline double f1_at(std::span<const int> y, std::span<const double> p, double gamma) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool pred = p[i] >= gamma;
    if (pred && y[i]) ++tp;
    else if (pred) ++fp;
    else if (y[i]) ++fn;
  }
  const double denom = 2.0 * tp + fp + fn;
  return denom > 0 ? 2.0 * tp / denom : 0.0;
}

// Candidates: 0, 1 and midpoints between consecutive distinct probabilities.
// F1 is maximized; ties go to the lowest threshold (highest recall).
inline Threshold select_threshold(std::span<const int> y, std::span<const double> p) {
  if (y.size() != p.size()) throw DimensionError("select_threshold: length mismatch");
  const auto pos = std::count(y.begin(), y.end(), 1);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(y.size()))
    throw DomainError("select_threshold: validation labels contain a single class");
  std::vector<double> sorted(p.begin(), p.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> candidates{0.0};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  candidates.push_back(1.0);

  Threshold best{candidates.front()};
  double best_f1 = -1.0;
  for (double c : candidates) {
    const double f1 = f1_at(y, p, c);
    if (f1 > best_f1) {
      best_f1 = f1;
      best.gamma = c;
    }
  }
  return best;
}

// Checkpoint: JSON keeps shortest round-trip doubles, so reload is bit-exact.
inline nlohmann::json to_checkpoint(const GbModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes)
      nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right},
                       {"value", n.value}, {"gain", n.gain}});
    trees.push_back(std::move(nodes));
  }
  return {{"format", "kdop-static-op"},
          {"version", 1},
          {"base_score", m.base_score},
          {"learning_rate", m.learning_rate},
          {"n_features", m.n_features},
          {"feature_names", m.feature_names},
          {"config",
           {{"n_trees", m.config.n_trees},
            {"max_depth", m.config.max_depth},
            {"learning_rate", m.config.learning_rate},
            {"min_samples_leaf", m.config.min_samples_leaf},
            {"subsample", m.config.subsample},
            {"seed", m.config.seed}}},
          {"trees", std::move(trees)}};
}

inline GbModel from_checkpoint(const nlohmann::json& j) {
  if (j.value("format", "") != "kdop-static-op" || j.value("version", 0) != 1)
    throw ParseError("static-op checkpoint: unsupported format or version");
  GbModel m;
  j.at("base_score").get_to(m.base_score);
  j.at("learning_rate").get_to(m.learning_rate);
  j.at("n_features").get_to(m.n_features);
  j.at("feature_names").get_to(m.feature_names);
  const auto& c = j.at("config");
  c.at("n_trees").get_to(m.config.n_trees);
  c.at("max_depth").get_to(m.config.max_depth);
  c.at("learning_rate").get_to(m.config.learning_rate);
  c.at("min_samples_leaf").get_to(m.config.min_samples_leaf);
  c.at("subsample").get_to(m.config.subsample);
  c.at("seed").get_to(m.config.seed);
  for (const auto& jt : j.at("trees")) {
    RegressionTree t;
    for (const auto& jn : jt) {
      TreeNode n;
      jn.at("feature").get_to(n.feature);
      jn.at("threshold").get_to(n.threshold);
      jn.at("left").get_to(n.left);
      jn.at("right").get_to(n.right);
      jn.at("value").get_to(n.value);
      jn.at("gain").get_to(n.gain);
      t.nodes.push_back(n);
    }
    m.trees.push_back(std::move(t));
  }
  return m;
}

}  // namespace kdop::static_op
