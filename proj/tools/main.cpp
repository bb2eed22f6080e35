#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stainlab/config.hpp"
#include "stainlab/error.hpp"
#include "stainlab/experiments.hpp"
#include "stainlab/splits.hpp"
#include "stainlab/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stainlab;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kNumeric = 4 };

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::MissingAugmentation:
    case ErrorCode::MissingStainTarget:
      return kConfig;
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::NonFiniteValue:
      return kNumeric;
    default:
      return kData;
  }
}

struct Common {
  std::string config;
  std::string data;
  std::string out;
  std::string seeds;
  std::string variant;
};

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = std::min(s.find(',', pos), s.size());
    const std::string item = s.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorCode::ConfigInvalid, "--seeds: '" + item + "' is not a non-negative integer");
    }
    pos = comma + 1;
  }
  return out;
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (!c.seeds.empty()) cfg.seeds = parse_seeds(c.seeds);
  if (!c.variant.empty()) {
    try {
      cfg.model.variant = variant_from_string(c.variant);
    } catch (const Error& e) {
      fail(ErrorCode::ConfigInvalid, std::string("--variant: ") + e.what());
    }
  }
  validate(cfg);
  return cfg;
}

DatasetSplits data_for(const Common& c, const ExperimentConfig& cfg) {
  if (c.data.empty()) {
    std::cerr << "no --data given; generating splits in memory from the config\n";
    return generate_dataset(cfg);
  }
  return read_dataset(c.data);
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json manifest(const std::string& command, const ExperimentConfig& cfg, const json& artifacts, double seconds) {
  return {{"command", command},
          {"config", to_json(cfg)},
          {"config_hash", config_hash(cfg)},
          {"seeds", cfg.seeds},
          {"artifacts", artifacts},
          {"timings", {{"total_seconds", seconds}}}};
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// A run directory (holding checkpoints/best) or a checkpoint directory.
fs::path checkpoint_path(const fs::path& p) {
  if (fs::exists(p / "checkpoints" / "best" / "manifest.json")) return p / "checkpoints" / "best";
  return p;
}

int cmd_synth(const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = load(c);
  write_dataset(c.out, cfg);
  json artifacts = json::array();
  for (const char* s : {"train", "val", "test_source", "test_shifted"}) artifacts.push_back((fs::path(c.out) / s).string());
  write_json_file(fs::path(c.out) / "manifest.json", manifest("synth", cfg, artifacts, since(t0)));
  std::printf("wrote %zu train / %zu val / %zu test_source / %zu test_shifted samples to %s\n", cfg.data.n_train,
              cfg.data.n_val, cfg.data.n_test, cfg.data.n_test, c.out.c_str());
  return kOk;
}

int cmd_train(const Common& c, bool resume) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = load(c);
  const DatasetSplits data = data_for(c, cfg);
  json artifacts = json::array();
  for (std::uint64_t seed : cfg.seeds) {
    TrainOptions opts;
    opts.out_dir = fs::path(c.out) / ("seed-" + std::to_string(seed));
    opts.resume = resume;
    opts.on_epoch = [seed](const EpochRecord& e) {
      std::fprintf(stderr, "seed %llu epoch %zu: task %.4f stain %.4f val dice %.4f (%.1fs)\n",
                   static_cast<unsigned long long>(seed), e.epoch, e.task_loss, e.stain_loss, e.val.dice, e.seconds);
    };
    const RunReport r = train_run(cfg, seed, data, opts);
    std::printf("seed %llu: best epoch %zu val dice %.4f, test_source %.4f, test_shifted %.4f\n",
                static_cast<unsigned long long>(seed), r.best_epoch, r.best_val_dice, r.final.test_source.dice,
                r.final.test_shifted.dice);
    artifacts.push_back(opts.out_dir.string());
  }
  write_json_file(fs::path(c.out) / "manifest.json", manifest("train", cfg, artifacts, since(t0)));
  return kOk;
}

int cmd_eval(const Common& c, const std::vector<std::string>& checkpoints) {
  if (c.data.empty()) fail(ErrorCode::ConfigInvalid, "eval needs --data");
  const DatasetSplits data = read_dataset(c.data);
  std::vector<fs::path> paths;
  for (const auto& p : checkpoints) paths.push_back(checkpoint_path(p));
  const json result = evaluate_checkpoints(paths, data);
  if (c.out.empty()) {
    std::cout << result.dump(2) << '\n';
  } else {
    write_json_file(c.out, result);
  }
  const auto& s = result["summary"];
  std::fprintf(stderr, "val dice %.4f +- %.4f, test_shifted dice %.4f +- %.4f over %zu checkpoint(s)\n",
               s["val"]["dice"]["mean"].get<double>(), s["val"]["dice"]["std"].get<double>(),
               s["test_shifted"]["dice"]["mean"].get<double>(), s["test_shifted"]["dice"]["std"].get<double>(),
               paths.size());
  return kOk;
}

int cmd_ablate(const Common& c, const std::string& axis_name) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = load(c);
  const AblationAxis axis = ablation_axis_from_string(axis_name);
  const DatasetSplits data = data_for(c, cfg);
  const fs::path out(c.out);
  const auto rows = run_ablation(cfg, axis, data, out / "runs", thread_budget());
  const fs::path table = out / ("ablation_" + axis_name + ".csv");
  write_ablation_csv(table, rows);
  json artifacts = {table.string()};
  for (const auto& row : rows)
    for (const auto& r : row.runs) artifacts.push_back(run_dir(out / "runs", row.config, data, r.seed).string());
  write_json_file(out / ("manifest_" + axis_name + ".json"), manifest("ablate " + axis_name, cfg, artifacts, since(t0)));
  std::ifstream in(table);
  std::cout << in.rdbuf();
  return kOk;
}

int cmd_analyze(const Common& c, const std::string& checkpoint) {
  if (c.data.empty()) fail(ErrorCode::ConfigInvalid, "analyze needs --data");
  const DatasetSplits data = read_dataset(c.data);
  auto [cfg, model] = load_trained(checkpoint_path(checkpoint));
  const std::uint64_t seed = c.seeds.empty() ? 0 : parse_seeds(c.seeds).front();
  const AnalysisReport rep = analyze(model, cfg, data, seed);
  write_analysis(c.out, rep);
  for (std::size_t s = 0; s < rep.divergence_shifted.size(); ++s)
    std::printf("stage %zu divergence %.6f\n", s + 1, rep.divergence_shifted[s]);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stain-invariant segmentation experiments on synthetic stained tissue"};
  app.require_subcommand(1);
  Common common;
  bool resume = false;
  std::string axis;
  std::vector<std::string> checkpoints;
  std::string checkpoint;

  auto* synth = app.add_subcommand("synth", "generate train/val/test splits");
  synth->add_option("--config", common.config, "experiment config (.toml or .json)");
  synth->add_option("--out", common.out, "dataset directory")->required();

  auto* train = app.add_subcommand("train", "train one model per seed");
  train->add_option("--config", common.config, "experiment config (.toml or .json)");
  train->add_option("--data", common.data, "dataset directory from `synth`");
  train->add_option("--out", common.out, "run directory")->required();
  train->add_option("--seeds", common.seeds, "comma-separated seeds, overrides the config");
  train->add_option("--variant", common.variant, "BASELINE, STINV or STINV_CA, overrides the config");
  train->add_flag("--resume", resume, "continue from checkpoints/last");

  auto* eval = app.add_subcommand("eval", "score checkpoints on every split");
  eval->add_option("checkpoints", checkpoints, "checkpoint or run directories")->required();
  eval->add_option("--data", common.data, "dataset directory")->required();
  eval->add_option("--out", common.out, "metrics JSON path (stdout when omitted)");

  auto* ablate = app.add_subcommand("ablate", "sweep one axis over all seeds");
  ablate->add_option("--axis", axis, "stage, downsample or ca_onoff")->required();
  ablate->add_option("--config", common.config, "base experiment config");
  ablate->add_option("--data", common.data, "dataset directory from `synth`");
  ablate->add_option("--out", common.out, "output directory (runs are cached under runs/)")->required();
  ablate->add_option("--seeds", common.seeds, "comma-separated seeds, overrides the config");
  ablate->add_option("--variant", common.variant, "base variant (rows override it)");

  auto* analyze = app.add_subcommand("analyze", "feature divergence and covariance matrices");
  analyze->add_option("checkpoint", checkpoint, "checkpoint or run directory")->required();
  analyze->add_option("--data", common.data, "dataset directory")->required();
  analyze->add_option("--out", common.out, "report directory")->required();
  analyze->add_option("--seeds", common.seeds, "seed for the augmented views (first value used)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*synth) return cmd_synth(common);
    if (*train) return cmd_train(common, resume);
    if (*eval) return cmd_eval(common, checkpoints);
    if (*ablate) return cmd_ablate(common, axis);
    if (*analyze) return cmd_analyze(common, checkpoint);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
