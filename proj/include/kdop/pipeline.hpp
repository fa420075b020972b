#pragma once

// Fold-rotation protocol: per rotation one fold trains the autoencoder (on
// its negatives), the next fold trains the static booster and picks the
// thresholds, and the one after is held out for testing.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdop/config.hpp"
#include "kdop/data.hpp"
#include "kdop/dynamic_kd.hpp"
#include "kdop/error.hpp"
#include "kdop/metrics.hpp"
#include "kdop/static_op.hpp"
#include "kdop/synth.hpp"

namespace kdop::pipeline {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Prepared cohort: aggregated (not yet imputed) series, static view extended
// with per-variable summaries, and the fold assignment.

struct PreparedCohort {
  data::CohortDataset cohort;
  data::FoldAssignment folds;
  std::string config_hash;
};

inline const char* const kSummaryStats[] = {"mean", "min", "max"};

// Per-variable mean/min/max over the observed cells of each patient, in
// unscaled units. A variable never observed for a patient yields NaN; the
// fold later fills it from training-fold medians.
inline Mat static_summaries(const std::vector<data::PatientSeries>& series, std::size_t v) {
  Mat out(series.size(), 3 * v, data::kMissing);
  for (std::size_t p = 0; p < series.size(); ++p) {
    const auto& s = series[p];
    for (std::size_t f = 0; f < v; ++f) {
      double sum = 0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
      std::size_t n = 0;
      for (std::size_t t = 0; t < s.matrix.rows; ++t)
        if (s.mask[t * v + f]) {
          const double x = s.matrix(t, f);
          sum += x;
          lo = std::min(lo, x);
          hi = std::max(hi, x);
          ++n;
        }
      if (n == 0) continue;
      out(p, 3 * f) = sum / static_cast<double>(n);
      out(p, 3 * f + 1) = lo;
      out(p, 3 * f + 2) = hi;
    }
  }
  return out;
}

inline PreparedCohort prepare(const data::RawCohort& raw, const PipelineConfig& cfg) {
  cfg.validate();
  PreparedCohort out;
  auto& c = out.cohort;
  c.window_minutes = data::select_window_length(raw, cfg.window_candidates, cfg.completeness_target);
  c.series = data::aggregate(raw, c.window_minutes, cfg.aggregators);
  c.ids = raw.patient_ids;
  c.dynamic_names = raw.variables;
  const std::size_t n = c.ids.size(), v = c.dynamic_names.size(), u = raw.static_names.size();

  const Mat summary = static_summaries(c.series, v);
  c.static_names = raw.static_names;
  for (const auto& var : c.dynamic_names)
    for (const char* stat : kSummaryStats) c.static_names.push_back(var + "_" + stat);
  c.statics = Mat(n, u + 3 * v);
  for (std::size_t p = 0; p < n; ++p) {
    const auto& row = raw.statics.at(c.ids[p]);
    for (std::size_t k = 0; k < u; ++k) c.statics(p, k) = row[k];
    for (std::size_t k = 0; k < 3 * v; ++k) c.statics(p, u + k) = summary(p, k);
  }

  for (const auto& [key, by_id] : raw.labels) {
    std::vector<int> y(n, 0);
    bool complete = true;
    for (std::size_t p = 0; p < n; ++p) {
      auto it = by_id.find(c.ids[p]);
      if (it == by_id.end()) {
        complete = false;
        break;
      }
      y[p] = it->second;
    }
    if (complete) c.labels[key] = std::move(y);
  }
  const data::LabelKey key{cfg.outcome, cfg.interval_days};
  if (!c.labels.count(key))
    throw ConfigError("no labels for outcome '" + cfg.outcome + "' at " + std::to_string(cfg.interval_days) + " days");
  const auto& y = c.labels.at(key);
  Rng rng = Rng(cfg.seed).split(0xf01d);
  out.folds = data::stratified_group_kfold(y, c.ids, cfg.k, rng);
  out.config_hash = cfg.hash();
  return out;
}

namespace detail {

inline json nullable_row(std::span<const double> row) {
  json a = json::array();
  for (double x : row) a.push_back(std::isnan(x) ? json(nullptr) : json(x));
  return a;
}

inline void read_nullable_row(const json& a, std::span<double> out) {
  if (a.size() != out.size()) throw ParseError("prepared cohort: row length mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i].is_null() ? data::kMissing : a[i].get<double>();
}

}  // namespace detail

inline json to_json(const PreparedCohort& p) {
  const auto& c = p.cohort;
  json series = json::array();
  for (const auto& s : c.series) {
    json rows = json::array();
    for (std::size_t t = 0; t < s.matrix.rows; ++t) rows.push_back(detail::nullable_row(s.matrix.row(t)));
    series.push_back({{"patient_id", s.patient_id}, {"values", std::move(rows)}});
  }
  json statics = json::array();
  for (std::size_t r = 0; r < c.statics.rows; ++r) statics.push_back(detail::nullable_row(c.statics.row(r)));
  json labels = json::array();
  for (const auto& [key, y] : c.labels)
    labels.push_back({{"outcome", key.outcome}, {"interval_days", key.interval_days}, {"labels", y}});
  return {{"format", "kdop-prepared-cohort"},
          {"version", 1},
          {"config_hash", p.config_hash},
          {"window_minutes", c.window_minutes},
          {"ids", c.ids},
          {"dynamic_names", c.dynamic_names},
          {"static_names", c.static_names},
          {"series", std::move(series)},
          {"statics", std::move(statics)},
          {"labels", std::move(labels)},
          {"folds", {{"k", p.folds.k}, {"fold_of", p.folds.fold_of}}}};
}

inline PreparedCohort prepared_from_json(const json& j) {
  if (j.value("format", "") != "kdop-prepared-cohort" || j.value("version", 0) != 1)
    throw ParseError("prepared cohort: unsupported format or version");
  PreparedCohort p;
  auto& c = p.cohort;
  j.at("config_hash").get_to(p.config_hash);
  j.at("window_minutes").get_to(c.window_minutes);
  j.at("ids").get_to(c.ids);
  j.at("dynamic_names").get_to(c.dynamic_names);
  j.at("static_names").get_to(c.static_names);
  const std::size_t v = c.dynamic_names.size();
  for (const auto& s : j.at("series")) {
    const auto& rows = s.at("values");
    data::PatientSeries ps{s.at("patient_id").get<std::string>(), Mat(rows.size(), v), {}};
    for (std::size_t t = 0; t < rows.size(); ++t) detail::read_nullable_row(rows[t], ps.matrix.row(t));
    ps.mask.resize(ps.matrix.data.size());
    for (std::size_t i = 0; i < ps.mask.size(); ++i) ps.mask[i] = !std::isnan(ps.matrix.data[i]);
    c.series.push_back(std::move(ps));
  }
  const auto& st = j.at("statics");
  c.statics = Mat(st.size(), c.static_names.size());
  for (std::size_t r = 0; r < st.size(); ++r) detail::read_nullable_row(st[r], c.statics.row(r));
  for (const auto& l : j.at("labels"))
    c.labels[{l.at("outcome").get<std::string>(), l.at("interval_days").get<int>()}] =
        l.at("labels").get<std::vector<int>>();
  j.at("folds").at("k").get_to(p.folds.k);
  j.at("folds").at("fold_of").get_to(p.folds.fold_of);
  if (c.series.size() != c.ids.size() || c.statics.rows != c.ids.size())
    throw ParseError("prepared cohort: patient count mismatch");
  return p;
}

// In-memory equivalent of writing the synthetic CSVs and loading them back.
inline data::RawCohort to_raw(const synth::SynthCohort& s) {
  const auto& c = s.cohort;
  data::RawCohort raw;
  raw.patient_ids = c.ids;
  raw.variables = c.dynamic_names;
  std::sort(raw.variables.begin(), raw.variables.end());
  for (const auto& id : c.ids) raw.observations[id];
  for (const auto& o : s.observations) raw.observations[o.patient_id].push_back(o);
  raw.static_names = c.static_names;
  for (std::size_t p = 0; p < c.size(); ++p) {
    const auto row = c.statics.row(p);
    raw.statics[c.ids[p]].assign(row.begin(), row.end());
  }
  for (const auto& [key, y] : c.labels)
    for (std::size_t p = 0; p < c.size(); ++p) raw.labels[key][c.ids[p]] = y[p];
  return raw;
}

// ---------------------------------------------------------------------------
// Fold roles and provenance guards

struct FoldRoles {
  std::size_t rotation = 0;
  std::vector<std::size_t> train, valid, test;  // cohort row indices
};

// Rotation r: fold r+1 validates, fold r+2 tests, everything else trains.
inline FoldRoles fold_roles(const data::FoldAssignment& folds, const std::vector<std::string>& ids,
                            std::size_t rotation) {
  if (folds.k < 3) throw ConfigError("fold protocol needs k >= 3 (train, validation and test folds)");
  FoldRoles r;
  r.rotation = rotation;
  const std::size_t valid = (rotation + 1) % folds.k, test = (rotation + 2) % folds.k;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = folds.fold_of.find(ids[i]);
    if (it == folds.fold_of.end()) throw DataError("fold assignment is missing patient " + ids[i]);
    if (it->second == valid) r.valid.push_back(i);
    else if (it->second == test) r.test.push_back(i);
    else r.train.push_back(i);
  }
  return r;
}

// Patient ids seen by every fitted quantity of a fold.
struct Provenance {
  std::vector<std::string> dynamic_scaler;
  std::vector<std::string> static_scaler;
  std::vector<std::string> autoencoder;
  std::vector<std::string> threshold;
};

inline std::set<std::string> id_set(const std::vector<std::string>& ids, const std::vector<std::size_t>& rows) {
  std::set<std::string> out;
  for (std::size_t r : rows) out.insert(ids[r]);
  return out;
}

inline void check_scaler_provenance(const std::vector<std::string>& fitted, const std::set<std::string>& train,
                                    const char* which) {
  for (const auto& id : fitted)
    if (!train.count(id))
      throw LeakageError(std::string("leakage guard: ") + which + " scaler was fitted on non-training patient " + id);
}

inline void check_autoencoder_provenance(const std::vector<std::string>& fitted, const std::set<std::string>& train,
                                         const std::map<std::string, int>& label_of) {
  for (const auto& id : fitted) {
    if (!train.count(id))
      throw LeakageError("leakage guard: autoencoder saw non-training patient " + id);
    if (label_of.at(id) != 0) throw LeakageError("leakage guard: autoencoder saw positive patient " + id);
  }
}

inline void check_threshold_provenance(const std::vector<std::string>& fitted, const std::set<std::string>& valid) {
  if (std::set<std::string>(fitted.begin(), fitted.end()) != valid)
    throw LeakageError("leakage guard: threshold was not selected on exactly the validation fold");
}

inline void check_provenance(const Provenance& prov, const FoldRoles& roles, const std::vector<std::string>& ids,
                             std::span<const int> y) {
  const auto train = id_set(ids, roles.train);
  std::map<std::string, int> label_of;
  for (std::size_t i = 0; i < ids.size(); ++i) label_of[ids[i]] = y[i];
  check_scaler_provenance(prov.dynamic_scaler, train, "dynamic");
  check_scaler_provenance(prov.static_scaler, train, "static");
  check_autoencoder_provenance(prov.autoencoder, train, label_of);
  check_threshold_provenance(prov.threshold, id_set(ids, roles.valid));
}

// Fault injection for exercising the guards; never set by the CLI.
struct FoldHooks {
  bool inject_test_rows_into_scaler = false;
};

// ---------------------------------------------------------------------------
// Fold artifacts and evaluation

struct FoldArtifacts {
  std::size_t rotation = 0;
  std::vector<double> dynamic_medians;
  std::vector<double> static_medians;
  data::ScalerParams dynamic_scaler;
  data::ScalerParams static_scaler;
  dynamic_kd::AutoencoderParams autoencoder;
  dynamic_kd::TrainConfig train_config;
  dynamic_kd::TrainLog train_log;
  static_op::GbModel booster;
  double gamma = 0.5;            // KD-OP threshold on p_hat
  double dynamic_gamma = 0.5;    // Dynamic-KD-alone threshold on normalized error
  double error_min = 0.0;        // validation error range used for normalization
  double error_max = 1.0;
  Provenance provenance;
};

struct PatientOutput {
  std::string patient_id;
  int label = 0;
  double error = 0.0;
  double error_normalized = 0.0;
  double p_hat = 0.0;
  Mat attention;
};

struct FoldResult {
  std::size_t rotation = 0;
  metrics::MetricReport dynamic_kd;
  metrics::MetricReport kd_op;
  std::vector<PatientOutput> test;
  FoldArtifacts artifacts;
};

namespace detail {

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const LeakageError&) {
    throw;
  } catch (const Error& e) {
    throw Error(e.kind(), e.tag(), std::string(name) + ": " + e.what());
  }
}

inline double column_median(const Mat& m, std::size_t col, const std::vector<std::size_t>& rows) {
  std::vector<double> vals;
  for (std::size_t r : rows)
    if (!std::isnan(m(r, col))) vals.push_back(m(r, col));
  if (vals.empty()) return data::kMissing;
  std::sort(vals.begin(), vals.end());
  const std::size_t n = vals.size();
  return n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
}

inline double normalize_error(double e, double lo, double hi) { return hi > lo ? (e - lo) / (hi - lo) : 0.0; }

}  // namespace detail

// Imputed, scaled dynamic series and static rows for selected patients.
struct FoldView {
  std::vector<Mat> series;
  Mat statics;
};

inline FoldView materialize(const PreparedCohort& prep, const FoldArtifacts& a, const std::vector<std::size_t>& rows) {
  const auto& c = prep.cohort;
  FoldView out;
  out.statics = Mat(rows.size(), c.statics.cols);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto imputed = data::impute(c.series[rows[k]], a.dynamic_medians, c.dynamic_names);
    out.series.push_back(data::apply_scaler(a.dynamic_scaler, imputed.matrix));
    for (std::size_t f = 0; f < c.statics.cols; ++f) {
      const double x = c.statics(rows[k], f);
      out.statics(k, f) = data::scale_value(a.static_scaler, f, std::isnan(x) ? a.static_medians[f] : x);
    }
  }
  return out;
}

inline std::vector<int> labels_for(const PreparedCohort& prep, const PipelineConfig& cfg) {
  const data::LabelKey key{cfg.outcome, cfg.interval_days};
  if (!prep.cohort.labels.count(key))
    throw ConfigError("no labels for outcome '" + cfg.outcome + "' at " + std::to_string(cfg.interval_days) + " days");
  return prep.cohort.labels.at(key);
}

// Scores the test fold of a trained rotation. Used both right after
// training and when re-evaluating from checkpoints.
inline FoldResult evaluate_fold(const PreparedCohort& prep, std::span<const int> y, const FoldRoles& roles,
                                const FoldArtifacts& a) {
  const auto& ids = prep.cohort.ids;
  const FoldView view = detail::stage("score test", [&] { return materialize(prep, a, roles.test); });
  const auto scores = detail::stage("score test", [&] { return dynamic_kd::score(a.autoencoder, view.series); });
  const auto p_hat = detail::stage("score test", [&] { return static_op::predict_proba(a.booster, view.statics); });

  FoldResult r;
  r.rotation = roles.rotation;
  std::vector<int> y_test;
  std::vector<double> err_norm;
  for (std::size_t k = 0; k < roles.test.size(); ++k) {
    PatientOutput o;
    o.patient_id = ids[roles.test[k]];
    o.label = y[roles.test[k]];
    o.error = scores[k].error;
    o.error_normalized = detail::normalize_error(o.error, a.error_min, a.error_max);
    o.p_hat = p_hat[k];
    o.attention = scores[k].attention;
    y_test.push_back(o.label);
    err_norm.push_back(o.error_normalized);
    r.test.push_back(std::move(o));
  }
  detail::stage("report", [&] {
    r.dynamic_kd = metrics::evaluate(y_test, err_norm, a.dynamic_gamma);
    r.kd_op = metrics::evaluate(y_test, p_hat, a.gamma);
    return 0;
  });
  r.artifacts = a;
  return r;
}

inline FoldResult run_fold(const PreparedCohort& prep, std::span<const int> y, const FoldRoles& roles,
                           const PipelineConfig& cfg, const FoldHooks& hooks = {}) {
  const auto& c = prep.cohort;
  const auto& ids = c.ids;
  const auto train_ids = id_set(ids, roles.train);
  std::map<std::string, int> label_of;
  for (std::size_t i = 0; i < ids.size(); ++i) label_of[ids[i]] = y[i];
  FoldArtifacts a;
  a.rotation = roles.rotation;

  // (1) imputation medians and scalers from the training fold only.
  detail::stage("fit scaler", [&] {
    std::vector<data::PatientSeries> train_series;
    for (std::size_t r : roles.train) train_series.push_back(c.series[r]);
    a.dynamic_medians = data::training_medians(train_series);

    std::vector<std::size_t> fit_rows = roles.train;
    if (hooks.inject_test_rows_into_scaler) fit_rows.insert(fit_rows.end(), roles.test.begin(), roles.test.end());
    const std::size_t steps = c.series.front().matrix.rows, v = c.dynamic_names.size();
    Mat rows(fit_rows.size() * steps, v);
    std::vector<std::string> owner;
    for (std::size_t k = 0; k < fit_rows.size(); ++k) {
      const auto imputed = data::impute(c.series[fit_rows[k]], a.dynamic_medians, c.dynamic_names);
      std::copy(imputed.matrix.data.begin(), imputed.matrix.data.end(), rows.data.begin() + k * steps * v);
      owner.insert(owner.end(), steps, ids[fit_rows[k]]);
    }
    a.dynamic_scaler = data::fit_scaler(rows, owner);

    a.static_medians.resize(c.statics.cols);
    for (std::size_t f = 0; f < c.statics.cols; ++f) {
      a.static_medians[f] = detail::column_median(c.statics, f, roles.train);
      if (std::isnan(a.static_medians[f]))
        throw DataError("static feature '" + c.static_names[f] + "' is never observed in the training fold");
    }
    Mat srows(fit_rows.size(), c.statics.cols);
    std::vector<std::string> sowner;
    for (std::size_t k = 0; k < fit_rows.size(); ++k) {
      for (std::size_t f = 0; f < c.statics.cols; ++f) {
        const double x = c.statics(fit_rows[k], f);
        srows(k, f) = std::isnan(x) ? a.static_medians[f] : x;
      }
      sowner.push_back(ids[fit_rows[k]]);
    }
    a.static_scaler = data::fit_scaler(srows, sowner);
    return 0;
  });
  a.provenance.dynamic_scaler = a.dynamic_scaler.provenance;
  a.provenance.static_scaler = a.static_scaler.provenance;
  check_scaler_provenance(a.provenance.dynamic_scaler, train_ids, "dynamic");
  check_scaler_provenance(a.provenance.static_scaler, train_ids, "static");

  // (2) autoencoder on training-fold negatives.
  detail::stage("train dynamic-kd", [&] {
    std::vector<int> y_train;
    for (std::size_t r : roles.train) y_train.push_back(y[r]);
    std::vector<std::size_t> neg_rows;
    for (std::size_t k : data::extract_negative_subset(y_train)) neg_rows.push_back(roles.train[k]);
    for (std::size_t r : neg_rows) a.provenance.autoencoder.push_back(ids[r]);
    check_autoencoder_provenance(a.provenance.autoencoder, train_ids, label_of);
    const FoldView view = materialize(prep, a, neg_rows);
    a.train_config = cfg.train;
    auto trained = dynamic_kd::train(view.series, a.train_config);
    a.autoencoder = std::move(trained.params);
    a.train_log = std::move(trained.log);
    return 0;
  });

  // (3)-(5) validation: errors weight the booster; thresholds chosen here.
  detail::stage("train static-op", [&] {
    const FoldView view = materialize(prep, a, roles.valid);
    const auto scores = dynamic_kd::score(a.autoencoder, view.series);
    std::vector<int> y_valid;
    std::vector<double> errors;
    for (std::size_t k = 0; k < roles.valid.size(); ++k) {
      y_valid.push_back(y[roles.valid[k]]);
      errors.push_back(scores[k].error);
    }
    a.error_min = *std::min_element(errors.begin(), errors.end());
    a.error_max = *std::max_element(errors.begin(), errors.end());
    a.booster = static_op::train_gb(view.statics, y_valid, errors, cfg.gb, c.static_names);
    const auto p_valid = static_op::predict_proba(a.booster, view.statics);
    a.gamma = static_op::select_threshold(y_valid, p_valid).gamma;
    std::vector<double> err_norm;
    for (double e : errors) err_norm.push_back(detail::normalize_error(e, a.error_min, a.error_max));
    a.dynamic_gamma = static_op::select_threshold(y_valid, err_norm).gamma;
    for (std::size_t r : roles.valid) a.provenance.threshold.push_back(ids[r]);
    return 0;
  });
  check_threshold_provenance(a.provenance.threshold, id_set(ids, roles.valid));

  // (6)-(7) test fold.
  return evaluate_fold(prep, y, roles, a);
}

// ---------------------------------------------------------------------------
// Cross-validation and reports

struct Range {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline Range summarize(std::span<const double> xs) {
  if (xs.empty()) throw DomainError("summarize: no values");
  Range r{0.0, xs[0], xs[0]};
  for (double x : xs) {
    r.mean += x;
    r.min = std::min(r.min, x);
    r.max = std::max(r.max, x);
  }
  r.mean /= static_cast<double>(xs.size());
  return r;
}

inline const std::vector<std::pair<std::string, double metrics::MetricReport::*>>& summarized_metrics() {
  static const std::vector<std::pair<std::string, double metrics::MetricReport::*>> m = {
      {"pr_auc", &metrics::MetricReport::pr_auc},
      {"roc_auc", &metrics::MetricReport::roc_auc},
      {"macro_precision", &metrics::MetricReport::macro_precision},
      {"macro_recall", &metrics::MetricReport::macro_recall},
      {"macro_f1", &metrics::MetricReport::macro_f1},
  };
  return m;
}

struct CvResult {
  std::vector<FoldResult> folds;
  std::map<std::string, Range> dynamic_kd;  // keyed by metric name
  std::map<std::string, Range> kd_op;
};

inline void aggregate(CvResult& cv) {
  for (const auto& [name, member] : summarized_metrics()) {
    std::vector<double> d, k;
    for (const auto& f : cv.folds) {
      d.push_back(f.dynamic_kd.*member);
      k.push_back(f.kd_op.*member);
    }
    cv.dynamic_kd[name] = summarize(d);
    cv.kd_op[name] = summarize(k);
  }
}

inline CvResult cross_validate(const PreparedCohort& prep, const PipelineConfig& cfg, const FoldHooks& hooks = {}) {
  cfg.validate();
  const auto y = labels_for(prep, cfg);
  CvResult cv;
  for (std::size_t r = 0; r < prep.folds.k; ++r)
    cv.folds.push_back(run_fold(prep, y, fold_roles(prep.folds, prep.cohort.ids, r), cfg, hooks));
  aggregate(cv);
  return cv;
}

inline json range_json(const std::map<std::string, Range>& m) {
  json j = json::object();
  for (const auto& [name, r] : m) j[name] = {{"mean", r.mean}, {"min", r.min}, {"max", r.max}};
  return j;
}

inline json report_json(const CvResult& cv, const PipelineConfig& cfg, bool include_training) {
  json folds = json::array();
  for (const auto& f : cv.folds) {
    json e = {{"rotation", f.rotation},
              {"test_patients", f.test.size()},
              {"dynamic_kd", f.dynamic_kd},
              {"kd_op", f.kd_op}};
    if (include_training)
      e["autoencoder"] = {{"epochs", f.artifacts.train_log.holdout_loss.size()},
                          {"best_epoch", f.artifacts.train_log.best_epoch + 1},
                          {"best_holdout_loss", f.artifacts.train_log.best_loss.empty()
                                                    ? 0.0
                                                    : f.artifacts.train_log.best_loss.back()},
                          {"stopped_early", f.artifacts.train_log.stopped_early}};
    folds.push_back(std::move(e));
  }
  return {{"config_hash", cfg.hash()},
          {"outcome", cfg.outcome},
          {"interval_days", cfg.interval_days},
          {"k", cv.folds.size()},
          {"aggregation", "per-rotation test metrics; mean and min-max range across rotations"},
          {"folds", std::move(folds)},
          {"summary", {{"dynamic_kd", range_json(cv.dynamic_kd)}, {"kd_op", range_json(cv.kd_op)}}}};
}

// ---------------------------------------------------------------------------
// Checkpoints

inline json scaler_json(const data::ScalerParams& s) {
  return {{"min", s.min}, {"max", s.max}, {"provenance", s.provenance}};
}

inline data::ScalerParams scaler_from_json(const json& j) {
  data::ScalerParams s;
  j.at("min").get_to(s.min);
  j.at("max").get_to(s.max);
  j.at("provenance").get_to(s.provenance);
  return s;
}

inline json fold_json(const FoldArtifacts& a, const std::string& config_hash) {
  return {{"format", "kdop-fold"},
          {"version", 1},
          {"config_hash", config_hash},
          {"rotation", a.rotation},
          {"dynamic_medians", a.dynamic_medians},
          {"static_medians", a.static_medians},
          {"dynamic_scaler", scaler_json(a.dynamic_scaler)},
          {"static_scaler", scaler_json(a.static_scaler)},
          {"gamma", a.gamma},
          {"dynamic_gamma", a.dynamic_gamma},
          {"error_min", a.error_min},
          {"error_max", a.error_max},
          {"provenance",
           {{"dynamic_scaler", a.provenance.dynamic_scaler},
            {"static_scaler", a.provenance.static_scaler},
            {"autoencoder", a.provenance.autoencoder},
            {"threshold", a.provenance.threshold}}}};
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline std::filesystem::path fold_dir(const std::filesystem::path& out, std::size_t rotation) {
  return out / ("fold_" + std::to_string(rotation));
}

inline void save_fold(const std::filesystem::path& dir, const FoldArtifacts& a, const std::string& config_hash) {
  write_json(dir / "fold.json", fold_json(a, config_hash));
  json ae = dynamic_kd::to_checkpoint(a.autoencoder, a.train_config);
  ae["config_hash"] = config_hash;
  write_json(dir / "dynamic_kd.json", ae);
  json gb = static_op::to_checkpoint(a.booster);
  gb["config_hash"] = config_hash;
  write_json(dir / "static_op.json", gb);
}

inline void require_hash(const json& j, const std::string& expected, const std::filesystem::path& path) {
  if (j.value("config_hash", "") != expected)
    throw ConfigError("stale artifact " + path.string() + ": config hash " + j.value("config_hash", "?") +
                      " does not match current config " + expected);
}

inline FoldArtifacts load_fold(const std::filesystem::path& dir, const std::string& config_hash) {
  const json f = read_json(dir / "fold.json");
  const json ae = read_json(dir / "dynamic_kd.json");
  const json gb = read_json(dir / "static_op.json");
  require_hash(f, config_hash, dir / "fold.json");
  require_hash(ae, config_hash, dir / "dynamic_kd.json");
  require_hash(gb, config_hash, dir / "static_op.json");
  if (f.value("format", "") != "kdop-fold" || f.value("version", 0) != 1)
    throw ParseError((dir / "fold.json").string() + ": unsupported format or version");
  FoldArtifacts a;
  f.at("rotation").get_to(a.rotation);
  f.at("dynamic_medians").get_to(a.dynamic_medians);
  f.at("static_medians").get_to(a.static_medians);
  a.dynamic_scaler = scaler_from_json(f.at("dynamic_scaler"));
  a.static_scaler = scaler_from_json(f.at("static_scaler"));
  f.at("gamma").get_to(a.gamma);
  f.at("dynamic_gamma").get_to(a.dynamic_gamma);
  f.at("error_min").get_to(a.error_min);
  f.at("error_max").get_to(a.error_max);
  const auto& p = f.at("provenance");
  p.at("dynamic_scaler").get_to(a.provenance.dynamic_scaler);
  p.at("static_scaler").get_to(a.provenance.static_scaler);
  p.at("autoencoder").get_to(a.provenance.autoencoder);
  p.at("threshold").get_to(a.provenance.threshold);
  std::tie(a.autoencoder, a.train_config) = dynamic_kd::from_checkpoint(ae);
  a.booster = static_op::from_checkpoint(gb);
  return a;
}

// Re-scores every rotation from saved checkpoints, re-checking provenance.
inline CvResult evaluate_checkpoints(const PreparedCohort& prep, const PipelineConfig& cfg,
                                     const std::filesystem::path& out) {
  const auto y = labels_for(prep, cfg);
  const std::string hash = cfg.hash();
  CvResult cv;
  for (std::size_t r = 0; r < prep.folds.k; ++r) {
    const auto roles = fold_roles(prep.folds, prep.cohort.ids, r);
    const FoldArtifacts a = load_fold(fold_dir(out, r), hash);
    check_provenance(a.provenance, roles, prep.cohort.ids, y);
    cv.folds.push_back(evaluate_fold(prep, y, roles, a));
  }
  aggregate(cv);
  return cv;
}

}  // namespace kdop::pipeline
