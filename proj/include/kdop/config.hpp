#pragma once

// Flat key-value pipeline configuration with dotted section keys:
//
//   # comment
//   train.lr = 0.001
//   data.window_candidates = 30,60,120
//   data.aggregator.heart_rate = max
//
// Every key has a default; `canonical()` prints the full effective
// configuration in a fixed order, and its hash tags every artifact.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kdop/dynamic_kd.hpp"
#include "kdop/error.hpp"
#include "kdop/static_op.hpp"
#include "kdop/synth.hpp"

namespace kdop {

struct PipelineConfig {
  // data
  std::string dynamic_path = "data/dynamic.csv";
  std::string static_path = "data/static.csv";
  std::string labels_path = "data/labels.csv";
  std::string outcome = "mortality";
  int interval_days = 5;
  std::vector<double> window_candidates{30, 60, 120};
  double completeness_target = 0.9;
  std::map<std::string, std::string> aggregators;
  // split
  std::size_t k = 3;
  // modules
  dynamic_kd::TrainConfig train;
  static_op::GbConfig gb;
  synth::SynthConfig synth;
  // output
  std::string out_dir = "out";
  std::size_t top_k = 10;
  std::uint64_t seed = 42;

  // The global seed drives the split, autoencoder and booster streams.
  void apply_seed(std::uint64_t s) {
    seed = s;
    train.seed = s;
    gb.seed = s;
  }

  void validate() const {
    train.validate();
    gb.validate();
    synth.validate();
    if (k < 2) throw ConfigError("split.k must be >= 2");
    if (interval_days <= 0) throw ConfigError("data.interval_days must be positive");
    if (window_candidates.empty()) throw ConfigError("data.window_candidates must not be empty");
    if (!std::is_sorted(window_candidates.begin(), window_candidates.end()))
      throw ConfigError("data.window_candidates must be ascending");
    if (!(completeness_target > 0.0 && completeness_target <= 1.0))
      throw ConfigError("data.completeness_target must lie in (0,1]");
    if (top_k == 0) throw ConfigError("explain.top_k must be >= 1");
  }

  std::string canonical() const;
  std::string hash() const;
};

namespace config_detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt(double x) { return synth::format_number(x); }

template <typename T>
T parse_as(const std::string& key, const std::string& value) {
  if constexpr (std::is_same_v<T, std::string>) {
    return value;
  } else {
    T v{};
    const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || p != value.data() + value.size() || value.empty())
      throw ConfigError(key + (std::is_floating_point_v<T> ? ": expected a number" : ": expected an integer"));
    return v;
  }
}

struct Field {
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

template <typename T>
Field field(T PipelineConfig::*member) {
  return {[member](const PipelineConfig& c) {
            if constexpr (std::is_same_v<T, std::string>) return c.*member;
            else if constexpr (std::is_same_v<T, double>) return fmt(c.*member);
            else return std::to_string(c.*member);
          },
          [member](PipelineConfig& c, const std::string& v) { c.*member = parse_as<T>("", v); }};
}

template <typename S, typename T>
Field nested(S PipelineConfig::*section, T S::*member) {
  return {[section, member](const PipelineConfig& c) {
            if constexpr (std::is_same_v<T, double>) return fmt(c.*section.*member);
            else return std::to_string(c.*section.*member);
          },
          [section, member](PipelineConfig& c, const std::string& v) { c.*section.*member = parse_as<T>("", v); }};
}

// Ordered key table; printing and parsing both walk it.
inline const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"data.dynamic", field(&PipelineConfig::dynamic_path)},
      {"data.static", field(&PipelineConfig::static_path)},
      {"data.labels", field(&PipelineConfig::labels_path)},
      {"data.outcome", field(&PipelineConfig::outcome)},
      {"data.interval_days", field(&PipelineConfig::interval_days)},
      {"data.window_candidates",
       {[](const PipelineConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.window_candidates.size(); ++i)
            s += (i ? "," : "") + fmt(c.window_candidates[i]);
          return s;
        },
        [](PipelineConfig& c, const std::string& v) {
          c.window_candidates.clear();
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ','))
            c.window_candidates.push_back(parse_as<double>("", trim(item)));
        }}},
      {"data.completeness_target", field(&PipelineConfig::completeness_target)},
      {"split.k", field(&PipelineConfig::k)},
      {"train.max_epochs", nested(&PipelineConfig::train, &dynamic_kd::TrainConfig::max_epochs)},
      {"train.patience", nested(&PipelineConfig::train, &dynamic_kd::TrainConfig::patience)},
      {"train.lr", nested(&PipelineConfig::train, &dynamic_kd::TrainConfig::lr)},
      {"train.dropout", nested(&PipelineConfig::train, &dynamic_kd::TrainConfig::dropout)},
      {"train.holdout_fraction", nested(&PipelineConfig::train, &dynamic_kd::TrainConfig::holdout_fraction)},
      {"train.batch_size", nested(&PipelineConfig::train, &dynamic_kd::TrainConfig::batch_size)},
      {"train.hidden", nested(&PipelineConfig::train, &dynamic_kd::TrainConfig::hidden)},
      {"train.min_delta", nested(&PipelineConfig::train, &dynamic_kd::TrainConfig::min_delta)},
      {"gb.n_trees", nested(&PipelineConfig::gb, &static_op::GbConfig::n_trees)},
      {"gb.max_depth", nested(&PipelineConfig::gb, &static_op::GbConfig::max_depth)},
      {"gb.learning_rate", nested(&PipelineConfig::gb, &static_op::GbConfig::learning_rate)},
      {"gb.min_samples_leaf", nested(&PipelineConfig::gb, &static_op::GbConfig::min_samples_leaf)},
      {"gb.subsample", nested(&PipelineConfig::gb, &static_op::GbConfig::subsample)},
      {"synth.n_patients", nested(&PipelineConfig::synth, &synth::SynthConfig::n_patients)},
      {"synth.T", nested(&PipelineConfig::synth, &synth::SynthConfig::T)},
      {"synth.v", nested(&PipelineConfig::synth, &synth::SynthConfig::v)},
      {"synth.u", nested(&PipelineConfig::synth, &synth::SynthConfig::u)},
      {"synth.positive_rate", nested(&PipelineConfig::synth, &synth::SynthConfig::positive_rate)},
      {"synth.anomaly_onset", nested(&PipelineConfig::synth, &synth::SynthConfig::anomaly_onset)},
      {"synth.drift_magnitude", nested(&PipelineConfig::synth, &synth::SynthConfig::drift_magnitude)},
      {"synth.severity_min", nested(&PipelineConfig::synth, &synth::SynthConfig::severity_min)},
      {"synth.silent_fraction", nested(&PipelineConfig::synth, &synth::SynthConfig::silent_fraction)},
      {"synth.static_signal_strength", nested(&PipelineConfig::synth, &synth::SynthConfig::static_signal_strength)},
      {"synth.noise_sd", nested(&PipelineConfig::synth, &synth::SynthConfig::noise_sd)},
      {"synth.observation_dropout", nested(&PipelineConfig::synth, &synth::SynthConfig::observation_dropout)},
      {"synth.seed", nested(&PipelineConfig::synth, &synth::SynthConfig::seed)},
      {"output.dir", field(&PipelineConfig::out_dir)},
      {"explain.top_k", field(&PipelineConfig::top_k)},
      {"seed",
       {[](const PipelineConfig& c) { return std::to_string(c.seed); },
        [](PipelineConfig& c, const std::string& v) { c.apply_seed(parse_as<std::uint64_t>("", v)); }}},
  };
  return table;
}

}  // namespace config_detail

inline std::string PipelineConfig::canonical() const {
  std::string out;
  for (const auto& [key, f] : config_detail::fields()) out += key + " = " + f.get(*this) + "\n";
  for (const auto& [var, agg] : aggregators) out += "data.aggregator." + var + " = " + agg + "\n";
  return out;
}

// FNV-1a over the canonical text; output paths are excluded so moving an
// output directory does not invalidate its checkpoints.
inline std::string PipelineConfig::hash() const {
  PipelineConfig c = *this;
  c.out_dir.clear();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : c.canonical()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  static const std::string agg_prefix = "data.aggregator.";
  if (key.rfind(agg_prefix, 0) == 0) {
    data::parse_aggregator(value);
    cfg.aggregators[key.substr(agg_prefix.size())] = value;
    return;
  }
  for (const auto& [name, f] : config_detail::fields())
    if (name == key) {
      try {
        f.set(cfg, value);
      } catch (const ConfigError& e) {
        throw ConfigError(key + e.what());
      }
      return;
    }
  throw ConfigError("unknown configuration key '" + key + "'");
}

inline PipelineConfig parse_config(std::istream& in, const std::string& origin = "config") {
  PipelineConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = config_detail::trim(line.substr(0, eq));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config(in, path);
}

}  // namespace kdop
