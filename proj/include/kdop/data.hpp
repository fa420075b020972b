#pragma once

// Cohort ingestion and preprocessing: CSV loading, interval aggregation with
// window-length search, per-patient imputation, min-max scaling fitted on
// training rows only, and the stratified grouped k-fold split.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kdop/error.hpp"
#include "kdop/numerics.hpp"

namespace kdop::data {

inline constexpr double kHorizonSeconds = 24.0 * 3600.0;
inline const double kMissing = std::numeric_limits<double>::quiet_NaN();

struct RawObservation {
  std::string patient_id;
  double timestamp = 0.0;  // seconds since admission
  std::string variable;
  double value = 0.0;
};

struct LabelKey {
  std::string outcome;
  int interval_days = 0;
  auto operator<=>(const LabelKey&) const = default;
};

struct RawCohort {
  std::vector<std::string> patient_ids;  // sorted
  std::vector<std::string> variables;    // sorted dynamic variable names
  std::map<std::string, std::vector<RawObservation>> observations;
  std::vector<std::string> static_names;
  std::map<std::string, std::vector<double>> statics;
  std::map<LabelKey, std::map<std::string, int>> labels;
  std::size_t dropped = 0;  // patients missing at least one view
};

struct PatientSeries {
  std::string patient_id;
  Mat matrix;              // T x v; NaN where no observation before imputation
  std::vector<bool> mask;  // T*v row-major, true where observed
  bool operator==(const PatientSeries&) const = default;
};

// Aligned, aggregated cohort. Everything is indexed by position in `ids`.
struct CohortDataset {
  std::vector<std::string> ids;
  std::vector<std::string> dynamic_names;
  std::vector<std::string> static_names;
  std::vector<PatientSeries> series;
  Mat statics;  // n x u
  std::map<LabelKey, std::vector<int>> labels;
  double window_minutes = 60.0;

  std::size_t size() const { return ids.size(); }
  const std::vector<int>& label_vector(const LabelKey& key) const {
    auto it = labels.find(key);
    if (it == labels.end())
      throw DataError("no labels for outcome '" + key.outcome + "' at interval " + std::to_string(key.interval_days));
    return it->second;
  }
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

inline double parse_number(std::string_view field, const std::string& path, std::size_t line_no) {
  double v = 0.0;
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v))
    throw ParseError(path + ":" + std::to_string(line_no) + ": expected a finite number, got '" + std::string(field) +
                     "'");
  return v;
}

template <typename RowFn>
void read_csv(const std::string& path, const std::vector<std::string>& expected_prefix, RowFn&& on_row,
              std::vector<std::string>* header_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: missing header");
  const auto header = split_csv(line);
  if (header.size() < expected_prefix.size()) throw ParseError(path + ":1: header too short");
  for (std::size_t i = 0; i < expected_prefix.size(); ++i)
    if (header[i] != expected_prefix[i])
      throw ParseError(path + ":1: expected column '" + expected_prefix[i] + "', got '" + std::string(header[i]) + "'");
  if (header_out) header_out->assign(header.begin(), header.end());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size())
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " fields, got " + std::to_string(fields.size()));
    on_row(fields, line_no);
  }
}

}  // namespace detail

// Loads the three views and keeps patients present in all of them.
inline RawCohort load_cohort(const std::string& dynamic_path, const std::string& static_path,
                             const std::string& labels_path) {
  RawCohort raw;
  std::map<std::string, std::vector<RawObservation>> obs;
  std::set<std::string> variables;
  detail::read_csv(dynamic_path, {"patient_id", "timestamp_s", "variable", "value"},
                   [&](const std::vector<std::string_view>& f, std::size_t line) {
                     RawObservation o;
                     o.patient_id = std::string(f[0]);
                     o.timestamp = detail::parse_number(f[1], dynamic_path, line);
                     o.variable = std::string(f[2]);
                     o.value = detail::parse_number(f[3], dynamic_path, line);
                     if (o.timestamp < 0)
                       throw ParseError(dynamic_path + ":" + std::to_string(line) + ": negative timestamp");
                     if (o.patient_id.empty() || o.variable.empty())
                       throw ParseError(dynamic_path + ":" + std::to_string(line) + ": empty identifier");
                     variables.insert(o.variable);
                     obs[o.patient_id].push_back(std::move(o));
                   });

  std::vector<std::string> header;
  std::map<std::string, std::vector<double>> statics;
  detail::read_csv(
      static_path, {"patient_id"},
      [&](const std::vector<std::string_view>& f, std::size_t line) {
        std::vector<double> values;
        for (std::size_t i = 1; i < f.size(); ++i) values.push_back(detail::parse_number(f[i], static_path, line));
        statics[std::string(f[0])] = std::move(values);
      },
      &header);
  raw.static_names.assign(header.begin() + 1, header.end());

  std::map<LabelKey, std::map<std::string, int>> labels;
  std::set<std::string> labelled;
  detail::read_csv(labels_path, {"patient_id", "outcome", "interval_days", "label"},
                   [&](const std::vector<std::string_view>& f, std::size_t line) {
                     const double interval = detail::parse_number(f[2], labels_path, line);
                     const double label = detail::parse_number(f[3], labels_path, line);
                     if (label != 0.0 && label != 1.0)
                       throw ParseError(labels_path + ":" + std::to_string(line) + ": label must be 0 or 1");
                     if (interval != std::floor(interval) || interval <= 0)
                       throw ParseError(labels_path + ":" + std::to_string(line) + ": interval_days must be a positive integer");
                     labels[{std::string(f[1]), static_cast<int>(interval)}][std::string(f[0])] = static_cast<int>(label);
                     labelled.insert(std::string(f[0]));
                   });

  std::set<std::string> all;
  for (const auto& [id, _] : obs) all.insert(id);
  for (const auto& [id, _] : statics) all.insert(id);
  all.insert(labelled.begin(), labelled.end());
  for (const auto& id : all) {
    if (obs.count(id) && statics.count(id) && labelled.count(id)) {
      raw.patient_ids.push_back(id);
    } else {
      ++raw.dropped;
    }
  }
  if (raw.patient_ids.empty()) throw DataError("load_cohort: no patient appears in all three files");
  for (const auto& id : raw.patient_ids) {
    raw.observations[id] = std::move(obs[id]);
    raw.statics[id] = std::move(statics[id]);
  }
  for (auto& [key, per_patient] : labels)
    for (const auto& id : raw.patient_ids)
      if (auto it = per_patient.find(id); it != per_patient.end()) raw.labels[key][id] = it->second;
  raw.variables.assign(variables.begin(), variables.end());
  return raw;
}

// ---------------------------------------------------------------------------
// Aggregation

enum class Aggregator { mean, min, max, last };

inline Aggregator parse_aggregator(const std::string& name) {
  if (name == "mean") return Aggregator::mean;
  if (name == "min") return Aggregator::min;
  if (name == "max") return Aggregator::max;
  if (name == "last") return Aggregator::last;
  throw ConfigError("unknown aggregator '" + name + "' (expected mean|min|max|last)");
}

inline std::size_t steps_for_window(double window_minutes) {
  if (!(window_minutes > 0)) throw DomainError("window length must be positive");
  const double steps = 24.0 * 60.0 / window_minutes;
  if (steps != std::floor(steps)) throw DomainError("window length must divide 24 hours evenly");
  return static_cast<std::size_t>(steps);
}

// Fraction of (patient, window, variable) cells holding at least one
// observation within the 24-hour horizon.
inline double completeness(const RawCohort& raw, double window_minutes) {
  const std::size_t steps = steps_for_window(window_minutes);
  const double window_s = window_minutes * 60.0;
  std::map<std::string, std::size_t> var_index;
  for (std::size_t i = 0; i < raw.variables.size(); ++i) var_index[raw.variables[i]] = i;
  std::size_t filled = 0;
  for (const auto& id : raw.patient_ids) {
    std::vector<bool> seen(steps * raw.variables.size(), false);
    for (const auto& o : raw.observations.at(id)) {
      if (o.timestamp >= kHorizonSeconds) continue;
      const auto t = static_cast<std::size_t>(o.timestamp / window_s);
      seen[t * raw.variables.size() + var_index.at(o.variable)] = true;
    }
    filled += static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
  }
  const double cells = static_cast<double>(raw.patient_ids.size() * steps * raw.variables.size());
  return cells > 0 ? static_cast<double>(filled) / cells : 0.0;
}

// Smallest candidate reaching the completeness target; otherwise the most
// complete candidate (earliest on ties).
inline double select_window_length(const RawCohort& raw, std::span<const double> candidates, double target) {
  if (candidates.empty()) throw DomainError("select_window_length: no candidate windows");
  if (!(target > 0.0 && target <= 1.0)) throw DomainError("select_window_length: target must lie in (0,1]");
  double best = candidates.front();
  double best_score = -1.0;
  for (double w : candidates) {
    const double c = completeness(raw, w);
    if (c >= target) return w;
    if (c > best_score) {
      best_score = c;
      best = w;
    }
  }
  return best;
}

inline std::vector<PatientSeries> aggregate(const RawCohort& raw, double window_minutes,
                                            const std::map<std::string, std::string>& aggregator_by_variable = {}) {
  const std::size_t steps = steps_for_window(window_minutes);
  const double window_s = window_minutes * 60.0;
  const std::size_t v = raw.variables.size();
  std::map<std::string, std::size_t> var_index;
  for (std::size_t i = 0; i < v; ++i) var_index[raw.variables[i]] = i;
  std::vector<Aggregator> agg(v, Aggregator::mean);
  for (const auto& [name, kind] : aggregator_by_variable) {
    auto it = var_index.find(name);
    if (it == var_index.end()) throw ConfigError("aggregator configured for unknown variable '" + name + "'");
    agg[it->second] = parse_aggregator(kind);
  }

  std::vector<PatientSeries> out;
  out.reserve(raw.patient_ids.size());
  for (const auto& id : raw.patient_ids) {
    PatientSeries s{id, Mat(steps, v, kMissing), std::vector<bool>(steps * v, false)};
    std::vector<double> sum(steps * v, 0.0), latest(steps * v, -1.0);
    std::vector<std::size_t> count(steps * v, 0);
    for (const auto& o : raw.observations.at(id)) {
      if (o.timestamp >= kHorizonSeconds) continue;
      const std::size_t cell = static_cast<std::size_t>(o.timestamp / window_s) * v + var_index.at(o.variable);
      double& slot = s.matrix.data[cell];
      switch (agg[cell % v]) {
        case Aggregator::mean: sum[cell] += o.value; break;
        case Aggregator::min: slot = count[cell] ? std::min(slot, o.value) : o.value; break;
        case Aggregator::max: slot = count[cell] ? std::max(slot, o.value) : o.value; break;
        case Aggregator::last:
          if (o.timestamp >= latest[cell]) {
            latest[cell] = o.timestamp;
            slot = o.value;
          }
          break;
      }
      ++count[cell];
    }
    for (std::size_t cell = 0; cell < steps * v; ++cell) {
      s.mask[cell] = count[cell] > 0;
      if (count[cell] && agg[cell % v] == Aggregator::mean)
        s.matrix.data[cell] = sum[cell] / static_cast<double>(count[cell]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Imputation

// Median of observed cells per feature across the given (training) patients;
// NaN for a feature never observed.
inline std::vector<double> training_medians(std::span<const PatientSeries> train) {
  if (train.empty()) return {};
  const std::size_t v = train.front().matrix.cols;
  std::vector<double> med(v, kMissing);
  for (std::size_t f = 0; f < v; ++f) {
    std::vector<double> vals;
    for (const auto& s : train)
      for (std::size_t t = 0; t < s.matrix.rows; ++t)
        if (s.mask[t * v + f]) vals.push_back(s.matrix(t, f));
    if (vals.empty()) continue;
    std::sort(vals.begin(), vals.end());
    const std::size_t n = vals.size();
    med[f] = n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
  }
  return med;
}

// Linear interpolation in time between observed cells, nearest-value
// extension at the edges. A feature with no observation for this patient is
// filled with the training median; the mask is left untouched.
inline PatientSeries impute(const PatientSeries& in, std::span<const double> fallback_medians = {},
                            std::span<const std::string> feature_names = {}) {
  PatientSeries s = in;
  const std::size_t steps = s.matrix.rows, v = s.matrix.cols;
  for (std::size_t f = 0; f < v; ++f) {
    std::vector<std::size_t> known;
    for (std::size_t t = 0; t < steps; ++t)
      if (s.mask[t * v + f]) known.push_back(t);
    if (known.empty()) {
      const double fill = f < fallback_medians.size() ? fallback_medians[f] : kMissing;
      if (std::isnan(fill)) {
        const std::string name = f < feature_names.size() ? feature_names[f] : "#" + std::to_string(f);
        throw DataError("impute: feature '" + name + "' is never observed in the training cohort");
      }
      for (std::size_t t = 0; t < steps; ++t) s.matrix(t, f) = fill;
      continue;
    }
    for (std::size_t t = 0; t < known.front(); ++t) s.matrix(t, f) = s.matrix(known.front(), f);
    for (std::size_t t = known.back() + 1; t < steps; ++t) s.matrix(t, f) = s.matrix(known.back(), f);
    for (std::size_t k = 0; k + 1 < known.size(); ++k) {
      const std::size_t a = known[k], b = known[k + 1];
      const double ya = s.matrix(a, f), yb = s.matrix(b, f);
      for (std::size_t t = a + 1; t < b; ++t)
        s.matrix(t, f) = ya + (yb - ya) * static_cast<double>(t - a) / static_cast<double>(b - a);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Scaling

struct ScalerParams {
  std::vector<double> min;
  std::vector<double> max;
  std::vector<std::string> provenance;  // patient ids whose rows were fitted
  bool operator==(const ScalerParams&) const = default;
};

// Rows of `rows` belong to the patients listed in `row_owner` (same length).
inline ScalerParams fit_scaler(const Mat& rows, std::span<const std::string> row_owner) {
  if (row_owner.size() != rows.rows) throw DimensionError("fit_scaler: one owner id per row required");
  if (rows.rows == 0) throw DataError("fit_scaler: no training rows");
  ScalerParams p{std::vector<double>(rows.cols, std::numeric_limits<double>::infinity()),
                 std::vector<double>(rows.cols, -std::numeric_limits<double>::infinity()),
                 {}};
  for (std::size_t r = 0; r < rows.rows; ++r)
    for (std::size_t c = 0; c < rows.cols; ++c) {
      const double x = rows(r, c);
      if (!std::isfinite(x)) throw DataError("fit_scaler: non-finite value");
      p.min[c] = std::min(p.min[c], x);
      p.max[c] = std::max(p.max[c], x);
    }
  std::set<std::string> owners(row_owner.begin(), row_owner.end());
  p.provenance.assign(owners.begin(), owners.end());
  return p;
}

// Maps into [0,1] and clamps out-of-range values; constant features map to 0.
inline double scale_value(const ScalerParams& p, std::size_t c, double x) {
  const double range = p.max[c] - p.min[c];
  if (range <= 0.0) return 0.0;
  return std::clamp((x - p.min[c]) / range, 0.0, 1.0);
}

inline Mat apply_scaler(const ScalerParams& p, const Mat& rows) {
  if (rows.cols != p.min.size())
    throw DimensionError("apply_scaler: " + std::to_string(rows.cols) + " columns vs " + std::to_string(p.min.size()));
  Mat out(rows.rows, rows.cols);
  for (std::size_t r = 0; r < rows.rows; ++r)
    for (std::size_t c = 0; c < rows.cols; ++c) out(r, c) = scale_value(p, c, rows(r, c));
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct FoldAssignment {
  std::size_t k = 3;
  std::map<std::string, std::size_t> fold_of;

  std::vector<std::string> members(std::size_t fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of)
      if (f == fold) out.push_back(id);
    return out;
  }
};

// Each patient is its own group. Within each class, patients are shuffled and
// handed one at a time to the fold with the largest remaining need for that
// class (ties: fewest patients overall, then lowest index).
inline FoldAssignment stratified_group_kfold(std::span<const int> labels, std::span<const std::string> patient_ids,
                                             std::size_t k, Rng& rng) {
  if (k < 2) throw ConfigError("split.k must be >= 2");
  if (labels.size() != patient_ids.size()) throw DimensionError("stratified_group_kfold: labels vs ids length");
  std::set<std::string> unique(patient_ids.begin(), patient_ids.end());
  if (unique.size() != patient_ids.size()) throw DataError("stratified_group_kfold: duplicate patient id");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DomainError("stratified_group_kfold: labels must be 0/1");
    by_class[labels[i]].push_back(i);
  }
  if (by_class[1].size() < k)
    throw DataError("stratification: " + std::to_string(by_class[1].size()) + " positive patients for k=" +
                    std::to_string(k));
  if (by_class[0].size() < k)
    throw DataError("stratification: " + std::to_string(by_class[0].size()) + " negative patients for k=" +
                    std::to_string(k));

  FoldAssignment out;
  out.k = k;
  std::vector<std::size_t> fold_size(k, 0);
  for (int cls : {1, 0}) {
    auto& members = by_class[cls];
    rng.shuffle(members);
    const double ideal = static_cast<double>(members.size()) / static_cast<double>(k);
    std::vector<std::size_t> taken(k, 0);
    for (std::size_t i : members) {
      std::size_t best = 0;
      for (std::size_t f = 1; f < k; ++f) {
        const double need_f = ideal - static_cast<double>(taken[f]);
        const double need_b = ideal - static_cast<double>(taken[best]);
        if (need_f > need_b || (need_f == need_b && fold_size[f] < fold_size[best])) best = f;
      }
      ++taken[best];
      ++fold_size[best];
      out.fold_of[patient_ids[i]] = best;
    }
  }
  return out;
}

// Positions (into `labels`) of label-0 patients.
inline std::vector<std::size_t> extract_negative_subset(std::span<const int> labels) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 0) out.push_back(i);
  if (out.empty()) throw TrainingError("extract_negative_subset: no negative-outcome patients in the training fold");
  return out;
}

}  // namespace kdop::data
