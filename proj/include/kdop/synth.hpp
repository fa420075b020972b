#pragma once

// Synthetic imbalanced cohorts with planted positive-outcome signatures.
//
// Negatives: per-patient random-phase sinusoids mixed by a fixed v x v
// coupling matrix, plus Gaussian noise. Positives additionally get a linear
// upward drift on ceil(v/3) randomly chosen features from the onset step to
// the end of the window, and a shift on the first two static features.
// A silent_fraction of positives skips the drift and carries only the static
// shift.
// One "sigma" is the per-feature signal scale of the latent process.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdop/data.hpp"
#include "kdop/error.hpp"
#include "kdop/numerics.hpp"

namespace kdop::synth {

struct SynthConfig {
  std::size_t n_patients = 400;
  std::size_t T = 24;
  std::size_t v = 6;
  std::size_t u = 5;
  double positive_rate = 0.1;
  double anomaly_onset = 0.5;          // fraction of T
  double drift_magnitude = 40.0;       // sigma units at the end of the window
  double severity_min = 1.0;           // per-positive severity ~ U(severity_min, 1)
  double silent_fraction = 0.3;        // positives with no dynamic drift
  double static_signal_strength = 3.0; // static sd units
  double noise_sd = 0.1;               // sigma units
  double observation_dropout = 0.0;    // fraction of dynamic cells left unobserved
  std::uint64_t seed = 42;

  void validate() const {
    if (!(positive_rate > 0.0 && positive_rate < 0.5)) throw ConfigError("synth.positive_rate must lie in (0,0.5)");
    if (static_cast<double>(n_patients) * positive_rate < 5.0)
      throw ConfigError("synth: n_patients * positive_rate must be >= 5");
    if (T < 8) throw ConfigError("synth.T must be >= 8");
    if (1440 % T != 0) throw ConfigError("synth.T must divide 1440 minutes evenly");
    if (v < 1) throw ConfigError("synth.v must be >= 1");
    if (u < 2) throw ConfigError("synth.u must be >= 2 (two static features carry the signal)");
    if (!(anomaly_onset >= 0.0 && anomaly_onset < 1.0)) throw ConfigError("synth.anomaly_onset must lie in [0,1)");
    if (!(drift_magnitude >= 0.0)) throw ConfigError("synth.drift_magnitude must be nonnegative");
    if (!(severity_min >= 0.0 && severity_min <= 1.0)) throw ConfigError("synth.severity_min must lie in [0,1]");
    if (!(silent_fraction >= 0.0 && silent_fraction <= 1.0)) throw ConfigError("synth.silent_fraction must lie in [0,1]");
    if (!(static_signal_strength >= 0.0)) throw ConfigError("synth.static_signal_strength must be nonnegative");
    if (!(noise_sd >= 0.0)) throw ConfigError("synth.noise_sd must be nonnegative");
    if (!(observation_dropout >= 0.0 && observation_dropout < 1.0))
      throw ConfigError("synth.observation_dropout must lie in [0,1)");
  }
};

struct GroundTruth {
  std::size_t onset_step = 0;
  std::vector<std::size_t> shifted_static_features{0, 1};
  std::map<std::string, std::vector<std::size_t>> drifted_features;  // positives only
  std::map<std::string, double> severity;                            // positives only
  std::vector<std::string> silent;                                   // positives without drift
};

struct SynthCohort {
  data::CohortDataset cohort;
  GroundTruth truth;
  std::vector<data::RawObservation> observations;
  std::string outcome = "mortality";
};

inline const std::vector<int>& synth_intervals() {
  static const std::vector<int> intervals{5, 7, 14, 30};
  return intervals;
}

inline std::size_t positive_count(const SynthConfig& cfg) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(cfg.n_patients) * cfg.positive_rate));
}

inline SynthCohort generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  const std::size_t n = cfg.n_patients, T = cfg.T, v = cfg.v, u = cfg.u;

  // Fixed cohort-level structure.
  Rng structure = root.split(0x5eed);
  Mat coupling(v, v);
  for (std::size_t a = 0; a < v; ++a)
    for (std::size_t b = 0; b < v; ++b) coupling(a, b) = a == b ? 1.0 : 0.3 * structure.normal();
  // Row-normalize so every mixed feature keeps unit latent scale.
  for (std::size_t a = 0; a < v; ++a) {
    double norm = 0.0;
    for (std::size_t b = 0; b < v; ++b) norm += coupling(a, b) * coupling(a, b);
    norm = std::sqrt(norm);
    for (std::size_t b = 0; b < v; ++b) coupling(a, b) /= norm;
  }
  std::vector<double> period(v), baseline(v), scale(v), static_mean(u), static_sd(u);
  for (std::size_t k = 0; k < v; ++k) {
    period[k] = static_cast<double>(T) / (1.0 + static_cast<double>(k % 3)) * structure.uniform(0.8, 1.2);
    baseline[k] = 60.0 + 15.0 * static_cast<double>(k);
    scale[k] = 4.0 + static_cast<double>(k % 4);
  }
  for (std::size_t k = 0; k < u; ++k) {
    static_mean[k] = 10.0 * static_cast<double>(k + 1);
    static_sd[k] = 1.0 + static_cast<double>(k % 3);
  }

  // Exactly round(n * rate) positives at random positions.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng picker = root.split(0x9051);
  picker.shuffle(order);
  std::vector<int> label(n, 0);
  std::vector<bool> silent(n, false);
  const std::size_t n_pos = positive_count(cfg);
  const auto n_silent = static_cast<std::size_t>(std::llround(static_cast<double>(n_pos) * cfg.silent_fraction));
  for (std::size_t i = 0; i < n_pos; ++i) {
    label[order[i]] = 1;
    silent[order[i]] = i < n_silent;
  }

  SynthCohort out;
  auto& c = out.cohort;
  c.window_minutes = 1440.0 / static_cast<double>(T);
  c.statics = Mat(n, u);
  for (std::size_t k = 0; k < v; ++k) c.dynamic_names.push_back("vital_" + std::to_string(k));
  for (std::size_t k = 0; k < u; ++k) c.static_names.push_back("static_" + std::to_string(k));
  out.truth.onset_step = static_cast<std::size_t>(std::floor(cfg.anomaly_onset * static_cast<double>(T)));
  const std::size_t drifted = (v + 2) / 3;
  const double window_s = c.window_minutes * 60.0;

  for (std::size_t p = 0; p < n; ++p) {
    Rng rng = root.split(1000 + p);
    char buf[32];
    std::snprintf(buf, sizeof buf, "P%05zu", p);
    const std::string id = buf;
    c.ids.push_back(id);

    std::vector<double> phase(v), amp(v);
    for (std::size_t k = 0; k < v; ++k) {
      phase[k] = rng.uniform(0.0, 2.0 * M_PI);
      amp[k] = std::sqrt(2.0) * rng.uniform(0.8, 1.2);
    }
    std::vector<double> drift_weight(v, 0.0);
    if (label[p] && silent[p]) {
      out.truth.silent.push_back(id);
    } else if (label[p]) {
      std::vector<std::size_t> feats(v);
      for (std::size_t k = 0; k < v; ++k) feats[k] = k;
      rng.shuffle(feats);
      feats.resize(drifted);
      std::sort(feats.begin(), feats.end());
      const double severity = rng.uniform(cfg.severity_min, 1.0);
      for (std::size_t k : feats) drift_weight[k] = severity;
      out.truth.drifted_features[id] = feats;
      out.truth.severity[id] = severity;
    }

    data::PatientSeries s{id, Mat(T, v), std::vector<bool>(T * v, true)};
    std::vector<double> latent(v);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < v; ++k)
        latent[k] = amp[k] * std::sin(2.0 * M_PI * static_cast<double>(t) / period[k] + phase[k]);
      for (std::size_t a = 0; a < v; ++a) {
        double mixed = 0.0;
        for (std::size_t b = 0; b < v; ++b) mixed += coupling(a, b) * latent[b];
        double drift = 0.0;
        if (drift_weight[a] > 0.0 && t >= out.truth.onset_step) {
          const double progress =
              static_cast<double>(t - out.truth.onset_step + 1) / static_cast<double>(T - out.truth.onset_step);
          drift = drift_weight[a] * cfg.drift_magnitude * progress;
        }
        const double value = baseline[a] + scale[a] * (mixed + drift + cfg.noise_sd * rng.normal());
        s.matrix(t, a) = value;
      }
    }
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < v; ++k) {
        const bool keep = cfg.observation_dropout <= 0.0 || rng.uniform() >= cfg.observation_dropout;
        if (keep) {
          out.observations.push_back({id, (static_cast<double>(t) + 0.5) * window_s, c.dynamic_names[k], s.matrix(t, k)});
        } else {
          s.mask[t * v + k] = false;
          s.matrix(t, k) = data::kMissing;
        }
      }
    for (std::size_t k = 0; k < u; ++k) {
      double z = rng.normal();
      if (label[p] && k < 2) z += cfg.static_signal_strength;
      c.statics(p, k) = static_mean[k] + static_sd[k] * z;
    }
    c.series.push_back(std::move(s));
  }
  for (int interval : synth_intervals()) c.labels[{out.outcome, interval}] = label;
  return out;
}

// ---------------------------------------------------------------------------
// CSV / ground-truth export in the loader's schema

inline std::string format_number(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

struct SynthPaths {
  std::string dynamic_csv, static_csv, labels_csv, truth_json;
};

inline SynthPaths write_files(const SynthCohort& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  SynthPaths paths{(dir / "dynamic.csv").string(), (dir / "static.csv").string(), (dir / "labels.csv").string(),
                   (dir / "ground_truth.json").string()};
  const auto& c = s.cohort;
  {
    std::ofstream f(paths.dynamic_csv);
    f << "patient_id,timestamp_s,variable,value\n";
    for (const auto& o : s.observations)
      f << o.patient_id << ',' << format_number(o.timestamp) << ',' << o.variable << ',' << format_number(o.value)
        << '\n';
  }
  {
    std::ofstream f(paths.static_csv);
    f << "patient_id";
    for (const auto& name : c.static_names) f << ',' << name;
    f << '\n';
    for (std::size_t p = 0; p < c.size(); ++p) {
      f << c.ids[p];
      for (std::size_t k = 0; k < c.statics.cols; ++k) f << ',' << format_number(c.statics(p, k));
      f << '\n';
    }
  }
  {
    std::ofstream f(paths.labels_csv);
    f << "patient_id,outcome,interval_days,label\n";
    for (const auto& [key, labels] : c.labels)
      for (std::size_t p = 0; p < c.size(); ++p)
        f << c.ids[p] << ',' << key.outcome << ',' << key.interval_days << ',' << labels[p] << '\n';
  }
  {
    nlohmann::json truth{{"onset_step", s.truth.onset_step},
                         {"shifted_static_features", s.truth.shifted_static_features},
                         {"drifted_features", s.truth.drifted_features},
                         {"severity", s.truth.severity},
                         {"silent", s.truth.silent}};
    std::ofstream f(paths.truth_json);
    f << truth.dump(2) << '\n';
  }
  return paths;
}

}  // namespace kdop::synth
