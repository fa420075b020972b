#pragma once

// Imbalance-aware binary evaluation: PR-AUC (average precision), ROC-AUC,
// macro precision/recall/F1 and the module-contribution split.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <json.hpp>

#include "kdop/error.hpp"

namespace kdop::metrics {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  bool operator==(const Confusion&) const = default;
};

struct MetricReport {
  double pr_auc = 0.0;
  double roc_auc = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  Confusion confusion;
  double gamma = 0.0;
  bool operator==(const MetricReport&) const = default;
};

inline void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json{{"pr_auc", r.pr_auc},
                     {"roc_auc", r.roc_auc},
                     {"macro_precision", r.macro_precision},
                     {"macro_recall", r.macro_recall},
                     {"macro_f1", r.macro_f1},
                     {"tp", r.confusion.tp},
                     {"fp", r.confusion.fp},
                     {"tn", r.confusion.tn},
                     {"fn", r.confusion.fn},
                     {"gamma", r.gamma}};
}

inline void from_json(const nlohmann::json& j, MetricReport& r) {
  j.at("pr_auc").get_to(r.pr_auc);
  j.at("roc_auc").get_to(r.roc_auc);
  j.at("macro_precision").get_to(r.macro_precision);
  j.at("macro_recall").get_to(r.macro_recall);
  j.at("macro_f1").get_to(r.macro_f1);
  j.at("tp").get_to(r.confusion.tp);
  j.at("fp").get_to(r.confusion.fp);
  j.at("tn").get_to(r.confusion.tn);
  j.at("fn").get_to(r.confusion.fn);
  j.at("gamma").get_to(r.gamma);
}

namespace detail {

inline void check_lengths(std::span<const int> y, std::size_t n) {
  if (y.size() != n) throw DimensionError("metrics: " + std::to_string(y.size()) + " labels vs " + std::to_string(n));
  if (y.empty()) throw DomainError("metrics: empty input");
  for (int v : y)
    if (v != 0 && v != 1) throw DomainError("metrics: labels must be 0/1");
}

// Indices sorted by descending score; tie order is irrelevant to callers
// since tied scores are always consumed as one group.
inline std::vector<std::size_t> order_desc(std::span<const double> s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

}  // namespace detail

// Mann-Whitney form: P(score_pos > score_neg) + 0.5 P(tie).
inline double roc_auc(std::span<const int> y, std::span<const double> scores) {
  detail::check_lengths(y, scores.size());
  const auto idx = detail::order_desc(scores);
  double n_pos = 0, n_neg = 0;
  for (int v : y) (v ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) throw DomainError("roc_auc: undefined with a single class");

  // Walk groups of tied scores from the top; each negative in a group beats
  // the positives already seen strictly above and ties the ones inside.
  double wins = 0.0;
  double pos_above = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    double gp = 0, gn = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (y[idx[j]] ? gp : gn) += 1;
      ++j;
    }
    wins += gn * (pos_above + 0.5 * gp);
    pos_above += gp;
    i = j;
  }
  return wins / (n_pos * n_neg);
}

// Step-wise average precision: sum over tie-grouped cut points of
// (recall increment) x (precision at the cut).
inline double pr_auc(std::span<const int> y, std::span<const double> scores) {
  detail::check_lengths(y, scores.size());
  const double n_pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  if (n_pos == 0) throw DomainError("pr_auc: undefined without positives");
  const auto idx = detail::order_desc(scores);
  double tp = 0, seen = 0, ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      tp += y[idx[j]];
      seen += 1;
      ++j;
    }
    const double recall = tp / n_pos;
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

inline Confusion confusion(std::span<const int> y, std::span<const int> y_hat) {
  if (y.size() != y_hat.size()) throw DimensionError("confusion: length mismatch");
  Confusion c;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] && y_hat[i]) ++c.tp;
    else if (!y[i] && y_hat[i]) ++c.fp;
    else if (!y[i] && !y_hat[i]) ++c.tn;
    else ++c.fn;
  }
  return c;
}

struct MacroPrf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Per-class scores treating each class as positive in turn, then an
// unweighted mean. Precision of a class never predicted is 0; a class absent
// from y contributes to neither the recall nor the F1 mean.
inline MacroPrf macro_prf(std::span<const int> y, std::span<const int> y_hat) {
  const Confusion c = confusion(y, y_hat);
  struct PerClass {
    double tp, predicted, actual;
  };
  const PerClass classes[2] = {
      {static_cast<double>(c.tn), static_cast<double>(c.tn + c.fn), static_cast<double>(c.tn + c.fp)},
      {static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp), static_cast<double>(c.tp + c.fn)},
  };
  MacroPrf out;
  int present = 0;
  for (const auto& k : classes) {
    const double p = k.predicted > 0 ? k.tp / k.predicted : 0.0;
    out.precision += p / 2.0;
    if (k.actual > 0) {
      const double r = k.tp / k.actual;
      out.recall += r;
      out.f1 += (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
      ++present;
    }
  }
  if (present > 0) {
    out.recall /= present;
    out.f1 /= present;
  }
  return out;
}

struct Contribution {
  double w_dynamic = 0.0;
  double w_static = 0.0;
};

// Share of each module in the final prediction, from the ratio of the
// modules' PR-AUCs.
inline Contribution module_contribution(double pr_auc_dynamic, double pr_auc_full) {
  if (pr_auc_dynamic < 0 || pr_auc_full < 0 || pr_auc_dynamic > 1 || pr_auc_full > 1)
    throw DomainError("module_contribution: PR-AUC outside [0,1]");
  const double total = pr_auc_dynamic + pr_auc_full;
  if (total <= 0.0) throw DomainError("module_contribution: undefined when both PR-AUCs are zero");
  Contribution c;
  c.w_dynamic = pr_auc_dynamic / total;
  c.w_static = 1.0 - c.w_dynamic;
  return c;
}

inline MetricReport evaluate(std::span<const int> y, std::span<const double> p_hat, double gamma) {
  detail::check_lengths(y, p_hat.size());
  std::vector<int> y_hat(p_hat.size());
  for (std::size_t i = 0; i < p_hat.size(); ++i) y_hat[i] = p_hat[i] >= gamma ? 1 : 0;
  MetricReport r;
  r.pr_auc = pr_auc(y, p_hat);
  r.roc_auc = roc_auc(y, p_hat);
  const MacroPrf prf = macro_prf(y, y_hat);
  r.macro_precision = prf.precision;
  r.macro_recall = prf.recall;
  r.macro_f1 = prf.f1;
  r.confusion = confusion(y, y_hat);
  r.gamma = gamma;
  return r;
}

}  // namespace kdop::metrics
