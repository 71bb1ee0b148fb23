// protoosr: train / eval / sweep-openness / export-features / aggregate.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "protoosr/harness.hpp"

namespace fs = std::filesystem;
using namespace protoosr;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint_path;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_checkpoint) {
  cmd->add_option("--config", c.config_path, "Run configuration file");
  cmd->add_option("--set", c.overrides, "Override one key, e.g. --set loss.variant=GCPL")->take_all();
  if (with_checkpoint) {
    cmd->add_option("--checkpoint", c.checkpoint_path, "Checkpoint file (default: <output_dir>/checkpoint.bin)");
  }
  cmd->add_flag("--quiet", c.quiet, "No per-epoch progress on stdout");
}

RunConfig resolve(const Common& c, const RunConfig* fallback = nullptr) {
  RunConfig config = !c.config_path.empty() ? load_config(c.config_path) : fallback ? *fallback : RunConfig{};
  for (const auto& o : c.overrides) apply_override(config, o);
  apply_environment(config);
  config.validate();
  return config;
}

std::string json_number(double v) { return std::isfinite(v) ? nlohmann::json(v).dump() : "null"; }

std::string epoch_line(const EpochLog& e) {
  return "{\"record\":\"epoch\",\"epoch\":" + std::to_string(e.epoch) + ",\"lr\":" + json_number(e.learning_rate) +
         ",\"loss\":" + json_number(e.total) + ",\"ce\":" + json_number(e.ce) + ",\"pl\":" + json_number(e.pl) +
         ",\"slc\":" + json_number(e.slc) + ",\"grad_norm\":" + json_number(e.grad_norm) +
         ",\"val_accuracy\":" + json_number(e.val_accuracy) + "}";
}

std::ofstream open_out(const fs::path& path, bool append = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

Checkpoint train_and_save(const RunConfig& config, const RunData& data, bool quiet) {
  const fs::path dir = config.output_dir;
  auto log = open_out(dir / "train_log.jsonl");
  auto checkpoint = train(config, data, [&](const EpochLog& e) {
    const auto line = epoch_line(e);
    log << line << '\n' << std::flush;
    if (!quiet) std::cout << line << std::endl;
  });
  save_checkpoint(checkpoint, dir / "checkpoint.bin");
  std::cerr << "wrote " << (dir / "checkpoint.bin").string() << '\n';
  return checkpoint;
}

// Config for commands working from a checkpoint: the file's own config unless
// --config is given, then --set overrides and the environment.
std::pair<Checkpoint, RunConfig> load_model(const Common& c) {
  fs::path path = c.checkpoint_path;
  if (path.empty()) path = fs::path(resolve(c).output_dir) / "checkpoint.bin";
  auto checkpoint = load_checkpoint(path);
  auto config = resolve(c, &checkpoint.config);
  // protocol and evaluation settings may change; the model stays as trained
  checkpoint.config.eval = config.eval;
  return {std::move(checkpoint), config};
}

int run_train(const Common& c) {
  const auto config = resolve(c);
  const auto data = prepare_data(config);
  train_and_save(config, data, c.quiet);
  return 0;
}

int run_eval(const Common& c) {
  auto [checkpoint, config] = load_model(c);
  const auto data = prepare_data(config);
  const auto line = report_json(evaluate(checkpoint, data), config);
  open_out(fs::path(config.output_dir) / "report.jsonl", true) << line << '\n';
  std::cout << line << std::endl;
  return 0;
}

int run_sweep(const Common& c) {
  std::optional<Checkpoint> checkpoint;
  RunConfig config;
  if (!c.checkpoint_path.empty()) {
    auto loaded = load_model(c);
    checkpoint = std::move(loaded.first);
    config = loaded.second;
  } else {
    config = resolve(c);
  }
  if (config.split.style != SplitStyle::kOpennessSweep && config.split.style != SplitStyle::kWithin) {
    throw ConfigError("sweep-openness needs split.style = openness-sweep or within");
  }
  const auto data = prepare_data(config);
  if (!checkpoint) checkpoint = train_and_save(config, data, c.quiet);
  const auto points = sweep_openness(*checkpoint, data, config.eval.sweep_unknown_counts);
  auto out = open_out(fs::path(config.output_dir) / "sweep.csv");
  write_sweep_csv(points, out);
  write_sweep_csv(points, std::cout);
  return 0;
}

int run_export(const Common& c) {
  auto [checkpoint, config] = load_model(c);
  const auto data = prepare_data(config);
  const auto path = fs::path(config.output_dir) / "features.csv";
  auto out = open_out(path);
  export_features(checkpoint, data, out);
  std::cerr << "wrote " << path.string() << '\n';
  return 0;
}

int run_aggregate(const std::vector<std::string>& files) {
  std::vector<std::string> lines;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw FormatError("cannot read " + f, 0);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
  }
  std::cout << aggregate_reports(lines) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-based open-set recognition: PL, GCPL and SLCPL"};
  app.require_subcommand(1);

  Common common;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write <output_dir>/checkpoint.bin");
  add_common(train_cmd, common, false);
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; appends to <output_dir>/report.jsonl");
  add_common(eval_cmd, common, true);
  auto* sweep_cmd = app.add_subcommand(
      "sweep-openness", "macro-F1 against openness; trains unless --checkpoint is given");
  add_common(sweep_cmd, common, true);
  auto* export_cmd = app.add_subcommand("export-features", "Write <output_dir>/features.csv");
  add_common(export_cmd, common, true);
  std::vector<std::string> report_files;
  auto* agg_cmd = app.add_subcommand("aggregate", "Mean and std of eval records across report files");
  agg_cmd->add_option("reports", report_files, "report.jsonl files")->required();
  auto* keys_cmd = app.add_subcommand("config", "Print the effective configuration");
  add_common(keys_cmd, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (*train_cmd) return run_train(common);
    if (*eval_cmd) return run_eval(common);
    if (*sweep_cmd) return run_sweep(common);
    if (*export_cmd) return run_export(common);
    if (*agg_cmd) return run_aggregate(report_files);
    if (*keys_cmd) {
      std::cout << to_text(resolve(common));
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kUnexpected);
  }
  return static_cast<int>(ExitCode::kUsage);
}
