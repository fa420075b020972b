// kdop: synth | prepare | train | evaluate | explain
//
// Exit codes: 0 ok, 1 usage/config, 2 data, 3 training. Failures print one
// line to stderr: "kdop: error[<tag>]: <message>".

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "kdop/config.hpp"
#include "kdop/data.hpp"
#include "kdop/justify.hpp"
#include "kdop/pipeline.hpp"
#include "kdop/synth.hpp"

namespace fs = std::filesystem;
using namespace kdop;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> outcome;
  std::optional<int> interval;
  std::optional<std::string> out;
  bool print_config = false;
  std::vector<std::string> patients;
};

void add_common(CLI::App& app, Options& o) {
  app.add_option("--config", o.config_path, "pipeline config file (key = value)");
  app.add_option("--seed", o.seed, "override the global seed");
  app.add_option("--outcome", o.outcome, "outcome name in the labels file");
  app.add_option("--interval", o.interval, "outcome interval in days");
  app.add_option("--out", o.out, "output directory");
  app.add_flag("--print-config", o.print_config, "print the effective configuration and exit");
}

PipelineConfig resolve(const Options& o) {
  PipelineConfig cfg = o.config_path.empty() ? PipelineConfig{} : load_config(o.config_path);
  if (o.seed) cfg.apply_seed(*o.seed);
  if (o.outcome) cfg.outcome = *o.outcome;
  if (o.interval) cfg.interval_days = *o.interval;
  if (o.out) cfg.out_dir = *o.out;
  cfg.validate();
  return cfg;
}

pipeline::PreparedCohort load_prepared(const PipelineConfig& cfg) {
  const fs::path path = fs::path(cfg.out_dir) / "prepared.json";
  if (!fs::exists(path)) throw DataError(path.string() + " not found; run 'kdop prepare' first");
  return pipeline::prepared_from_json(pipeline::read_json(path));
}

void run_synth(const PipelineConfig& cfg, const Options& o) {
  const fs::path dir = o.out ? fs::path(*o.out) : fs::path(cfg.dynamic_path).parent_path();
  const auto cohort = synth::generate(cfg.synth);
  const auto paths = synth::write_files(cohort, dir.empty() ? fs::path(".") : dir);
  std::cout << "wrote " << paths.dynamic_csv << ", " << paths.static_csv << ", " << paths.labels_csv << ", "
            << paths.truth_json << '\n';
}

void run_prepare(const PipelineConfig& cfg) {
  const auto raw = data::load_cohort(cfg.dynamic_path, cfg.static_path, cfg.labels_path);
  const auto prep = pipeline::prepare(raw, cfg);
  const fs::path path = fs::path(cfg.out_dir) / "prepared.json";
  pipeline::write_json(path, pipeline::to_json(prep));
  std::cout << "prepared " << prep.cohort.size() << " patients (" << raw.dropped << " dropped), window "
            << prep.cohort.window_minutes << " min -> " << path.string() << '\n';
}

void print_summary(const pipeline::CvResult& cv) {
  for (const char* m : {"pr_auc", "macro_recall"})
    std::cout << m << ": dynamic_kd " << cv.dynamic_kd.at(m).mean << ", kd_op " << cv.kd_op.at(m).mean << '\n';
}

void run_train(const PipelineConfig& cfg) {
  const auto prep = load_prepared(cfg);
  const auto cv = pipeline::cross_validate(prep, cfg);
  const fs::path out(cfg.out_dir);
  const std::string hash = cfg.hash();
  for (const auto& f : cv.folds) pipeline::save_fold(pipeline::fold_dir(out, f.rotation), f.artifacts, hash);
  pipeline::write_json(out / "report.json", pipeline::report_json(cv, cfg, true));
  print_summary(cv);
  std::cout << "wrote " << (out / "report.json").string() << '\n';
}

void run_evaluate(const PipelineConfig& cfg) {
  const auto prep = load_prepared(cfg);
  const fs::path out(cfg.out_dir);
  const auto cv = pipeline::evaluate_checkpoints(prep, cfg, out);
  pipeline::write_json(out / "evaluation.json", pipeline::report_json(cv, cfg, false));
  print_summary(cv);
  std::cout << "wrote " << (out / "evaluation.json").string() << '\n';
}

void run_explain(const PipelineConfig& cfg, const Options& o) {
  if (o.patients.empty()) throw ConfigError("explain: pass at least one --patient ID");
  const auto prep = load_prepared(cfg);
  const fs::path out(cfg.out_dir);
  const auto cv = pipeline::evaluate_checkpoints(prep, cfg, out);
  for (const auto& id : o.patients) {
    const auto report = pipeline::explain(id, prep, cv.folds, cfg.top_k);
    pipeline::write_json(out / "explain" / (id + ".json"), pipeline::to_json(report));
    std::ofstream svg(out / "explain" / (id + ".svg"));
    svg << pipeline::render_svg(report);
    std::cout << "wrote " << (out / "explain" / (id + ".json")).string() << '\n';
  }
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return 1;
    case ErrorKind::data: return 2;
    case ErrorKind::training: return 3;
  }
  return 3;
}

int fail(const std::string& tag, std::string msg, int code) {
  for (char& c : msg)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "kdop: error[" << tag << "]: " << msg << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KD-OP: stacked outlier-weighted outcome prediction"};
  app.require_subcommand(0, 1);
  Options opts;
  add_common(app, opts);
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic cohort as CSV files");
  auto* prepare_cmd = app.add_subcommand("prepare", "aggregate, split and write the prepared cohort");
  auto* train_cmd = app.add_subcommand("train", "cross-validate and write checkpoints and report.json");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "re-score the test folds from checkpoints");
  auto* explain_cmd = app.add_subcommand("explain", "write justification JSON and SVG per patient");
  for (auto* sub : {synth_cmd, prepare_cmd, train_cmd, evaluate_cmd, explain_cmd}) add_common(*sub, opts);
  explain_cmd->add_option("--patient", opts.patients, "patient id to explain (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 1);
  }

  try {
    const PipelineConfig cfg = resolve(opts);
    if (opts.print_config) {
      std::cout << cfg.canonical();
      return 0;
    }
    if (*synth_cmd) run_synth(cfg, opts);
    else if (*prepare_cmd) run_prepare(cfg);
    else if (*train_cmd) run_train(cfg);
    else if (*evaluate_cmd) run_evaluate(cfg);
    else if (*explain_cmd) run_explain(cfg, opts);
    else return fail("usage", "a subcommand is required (synth|prepare|train|evaluate|explain)", 1);
  } catch (const Error& e) {
    return fail(e.tag(), e.what(), exit_code(e.kind()));
  } catch (const nlohmann::json::exception& e) {
    return fail("parse", e.what(), 2);
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", e.what(), 2);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 3);
  }
  return 0;
}
