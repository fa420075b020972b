#pragma once

// Per-patient justification: module contributions, attention heatmap and
// static feature importances, as JSON and as a three-panel SVG.

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdop/metrics.hpp"
#include "kdop/pipeline.hpp"
#include "kdop/static_op.hpp"

namespace kdop::pipeline {

struct RankedFeature {
  std::string name;
  double importance = 0.0;
  bool operator==(const RankedFeature&) const = default;
};

struct JustificationReport {
  std::string patient_id;
  std::size_t rotation = 0;
  double p_hat = 0.0;
  int y_hat = 0;
  double gamma = 0.5;
  double reconstruction_error = 0.0;
  metrics::Contribution contribution;
  Mat attention;  // T x v; each column (feature) sums to 1 over time
  std::vector<std::string> dynamic_names;
  std::vector<std::string> time_labels;
  std::vector<RankedFeature> importance;      // all static features, model order
  std::vector<RankedFeature> top_importance;  // descending, at most top_k

  bool operator==(const JustificationReport& o) const {
    return patient_id == o.patient_id && rotation == o.rotation && p_hat == o.p_hat && y_hat == o.y_hat &&
           gamma == o.gamma && reconstruction_error == o.reconstruction_error &&
           contribution.w_dynamic == o.contribution.w_dynamic && contribution.w_static == o.contribution.w_static &&
           attention == o.attention && dynamic_names == o.dynamic_names && time_labels == o.time_labels &&
           importance == o.importance && top_importance == o.top_importance;
  }
};

inline std::vector<std::string> time_labels(std::size_t steps, double window_minutes) {
  std::vector<std::string> out;
  for (std::size_t t = 0; t < steps; ++t) {
    const auto minutes = static_cast<long>(std::lround(static_cast<double>(t) * window_minutes));
    char buf[48];
    std::snprintf(buf, sizeof buf, "%02ld:%02ld", minutes / 60, minutes % 60);
    out.emplace_back(buf);
  }
  return out;
}

// The patient must be in the test fold of one rotation, so that both modules
// scored it out of sample.
inline JustificationReport explain(const std::string& patient_id, const PreparedCohort& prep,
                                   const std::vector<FoldResult>& folds, std::size_t top_k = 10) {
  for (const auto& f : folds) {
    for (const auto& o : f.test) {
      if (o.patient_id != patient_id) continue;
      JustificationReport r;
      r.patient_id = patient_id;
      r.rotation = f.rotation;
      r.p_hat = o.p_hat;
      r.gamma = f.artifacts.gamma;
      r.y_hat = o.p_hat >= r.gamma ? 1 : 0;
      r.reconstruction_error = o.error;
      r.contribution = metrics::module_contribution(f.dynamic_kd.pr_auc, f.kd_op.pr_auc);
      r.attention = o.attention;
      r.dynamic_names = prep.cohort.dynamic_names;
      r.time_labels = time_labels(o.attention.rows, prep.cohort.window_minutes);
      const auto imp = static_op::feature_importance(f.artifacts.booster);
      const auto& names = f.artifacts.booster.feature_names;
      for (std::size_t k = 0; k < imp.size(); ++k)
        r.importance.push_back({k < names.size() ? names[k] : "#" + std::to_string(k), imp[k]});
      r.top_importance = r.importance;
      std::stable_sort(r.top_importance.begin(), r.top_importance.end(),
                       [](const RankedFeature& a, const RankedFeature& b) { return a.importance > b.importance; });
      if (r.top_importance.size() > top_k) r.top_importance.resize(top_k);
      return r;
    }
  }
  throw DataError("explain: patient '" + patient_id + "' is not in any test fold");
}

inline nlohmann::json to_json(const JustificationReport& r) {
  using nlohmann::json;
  json attention = json::array();  // one row per feature, over time
  for (std::size_t j = 0; j < r.attention.cols; ++j) {
    json row = json::array();
    for (std::size_t t = 0; t < r.attention.rows; ++t) row.push_back(r.attention(t, j));
    attention.push_back(std::move(row));
  }
  auto ranked = [](const std::vector<RankedFeature>& v) {
    json a = json::array();
    for (const auto& f : v) a.push_back({{"feature", f.name}, {"importance", f.importance}});
    return a;
  };
  return {{"patient_id", r.patient_id},
          {"rotation", r.rotation},
          {"p_hat", r.p_hat},
          {"y_hat", r.y_hat},
          {"gamma", r.gamma},
          {"reconstruction_error", r.reconstruction_error},
          {"contribution", {{"w_dynamic", r.contribution.w_dynamic}, {"w_static", r.contribution.w_static}}},
          {"dynamic_names", r.dynamic_names},
          {"time_labels", r.time_labels},
          {"attention_by_feature", std::move(attention)},
          {"importance", ranked(r.importance)},
          {"top_importance", ranked(r.top_importance)}};
}

inline JustificationReport justification_from_json(const nlohmann::json& j) {
  JustificationReport r;
  j.at("patient_id").get_to(r.patient_id);
  j.at("rotation").get_to(r.rotation);
  j.at("p_hat").get_to(r.p_hat);
  j.at("y_hat").get_to(r.y_hat);
  j.at("gamma").get_to(r.gamma);
  j.at("reconstruction_error").get_to(r.reconstruction_error);
  j.at("contribution").at("w_dynamic").get_to(r.contribution.w_dynamic);
  j.at("contribution").at("w_static").get_to(r.contribution.w_static);
  j.at("dynamic_names").get_to(r.dynamic_names);
  j.at("time_labels").get_to(r.time_labels);
  const auto& a = j.at("attention_by_feature");
  const std::size_t v = a.size(), steps = v ? a[0].size() : 0;
  r.attention = Mat(steps, v);
  for (std::size_t f = 0; f < v; ++f)
    for (std::size_t t = 0; t < steps; ++t) r.attention(t, f) = a[f].at(t).get<double>();
  auto ranked = [](const nlohmann::json& arr) {
    std::vector<RankedFeature> out;
    for (const auto& e : arr) out.push_back({e.at("feature").get<std::string>(), e.at("importance").get<double>()});
    return out;
  };
  r.importance = ranked(j.at("importance"));
  r.top_importance = ranked(j.at("top_importance"));
  return r;
}

// ---------------------------------------------------------------------------
// SVG

namespace svg_detail {

inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string rect(double x, double y, double w, double h, const std::string& fill, const std::string& cls) {
  return "<rect class=\"" + cls + "\" x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" +
         num(h) + "\" fill=\"" + fill + "\"/>\n";
}

inline std::string text(double x, double y, const std::string& s, const std::string& anchor = "start",
                        int size = 11) {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + std::to_string(size) +
         "\" text-anchor=\"" + anchor + "\">" + escape(s) + "</text>\n";
}

// White at 0, dark blue at the per-matrix maximum.
inline std::string heat(double value, double max) {
  const double f = max > 0.0 ? std::clamp(value / max, 0.0, 1.0) : 0.0;
  const int r = static_cast<int>(std::lround(255.0 - f * (255.0 - 8.0)));
  const int g = static_cast<int>(std::lround(255.0 - f * (255.0 - 48.0)));
  const int b = static_cast<int>(std::lround(255.0 - f * (255.0 - 107.0)));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace svg_detail

inline std::string render_svg(const JustificationReport& r) {
  using namespace svg_detail;
  const std::size_t steps = r.attention.rows, v = r.attention.cols;
  const double top = 50, bar_h = 300, bar_w = 50, bar_x = 40;
  const double cell_w = 18, cell_h = v ? std::min(30.0, bar_h / static_cast<double>(v)) : 0;
  const double heat_x = 220, heat_w = cell_w * static_cast<double>(steps);
  const double imp_x = heat_x + heat_w + 190, imp_w = 200;
  const double width = imp_x + imp_w + 60, height = top + bar_h + 70;

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
       "\" font-family=\"sans-serif\">\n";
  s += rect(0, 0, width, height, "#ffffff", "background");
  char title[160];
  std::snprintf(title, sizeof title, "%s: p=%.3f, gamma=%.3f, predicted %d", r.patient_id.c_str(), r.p_hat, r.gamma,
                r.y_hat);
  s += text(10, 20, title, "start", 14);

  // Panel 1: module contribution as one stacked bar.
  s += text(bar_x + bar_w / 2, top - 10, "Contribution", "middle");
  const double dyn_h = bar_h * r.contribution.w_dynamic;
  s += rect(bar_x, top, bar_w, dyn_h, "#e6550d", "contribution-dynamic");
  s += rect(bar_x, top + dyn_h, bar_w, bar_h - dyn_h, "#3182bd", "contribution-static");
  s += text(bar_x + bar_w + 6, top + dyn_h / 2, "dynamic " + num(r.contribution.w_dynamic));
  s += text(bar_x + bar_w + 6, top + dyn_h + (bar_h - dyn_h) / 2, "static " + num(r.contribution.w_static));

  // Panel 2: attention heatmap, time across, features down.
  s += text(heat_x + heat_w / 2, top - 10, "Attention", "middle");
  double max = 0.0;
  for (double a : r.attention.data) max = std::max(max, a);
  for (std::size_t j = 0; j < v; ++j) {
    const double y = top + cell_h * static_cast<double>(j);
    s += text(heat_x - 6, y + cell_h / 2 + 4, j < r.dynamic_names.size() ? r.dynamic_names[j] : "", "end");
    for (std::size_t t = 0; t < steps; ++t)
      s += rect(heat_x + cell_w * static_cast<double>(t), y, cell_w, cell_h, heat(r.attention(t, j), max), "cell");
  }
  for (std::size_t t = 0; t < steps && t < r.time_labels.size(); t += std::max<std::size_t>(1, steps / 6))
    s += text(heat_x + cell_w * static_cast<double>(t), top + cell_h * static_cast<double>(v) + 14, r.time_labels[t]);

  // Panel 3: top static importances.
  s += text(imp_x + imp_w / 2, top - 10, "Static importance", "middle");
  const double row_h = r.top_importance.empty() ? 0 : std::min(24.0, bar_h / static_cast<double>(r.top_importance.size()));
  double max_imp = 0.0;
  for (const auto& f : r.top_importance) max_imp = std::max(max_imp, f.importance);
  for (std::size_t k = 0; k < r.top_importance.size(); ++k) {
    const auto& f = r.top_importance[k];
    const double y = top + row_h * static_cast<double>(k);
    const double w = max_imp > 0 ? imp_w * f.importance / max_imp : 0.0;
    s += text(imp_x - 6, y + row_h / 2 + 4, f.name, "end");
    s += rect(imp_x, y + 2, w, row_h - 4, "#31a354", "importance");
    s += text(imp_x + w + 4, y + row_h / 2 + 4, num(f.importance));
  }
  s += "</svg>\n";
  return s;
}

}  // namespace kdop::pipeline
