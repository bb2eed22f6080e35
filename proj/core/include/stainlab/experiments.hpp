#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stainlab/train.hpp"

namespace stainlab {

/// Worker-thread cap from STAINLAB_THREADS (default 1, minimum 1).
std::size_t thread_budget();

/// Runs `tasks` on up to `threads` workers. The first exception (in task
/// order) is rethrown after every worker has finished.
void run_parallel(const std::vector<std::function<void()>>& tasks, std::size_t threads);

/// `<root>/<config_hash>-<data fingerprint>/seed-<seed>`.
std::filesystem::path run_dir(const std::filesystem::path& root, const ExperimentConfig& cfg,
                              const DatasetSplits& data, std::uint64_t seed);

/// Trains unless run_dir already holds a finished report for the same config
/// hash and seed, in which case that report is returned.
RunReport cached_run(const ExperimentConfig& cfg, std::uint64_t seed, const DatasetSplits& data,
                     const std::filesystem::path& root, bool force = false);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};
MeanStd mean_std(const std::vector<double>& values);

/// Per-domain Dice/precision/recall of each checkpoint plus mean and std
/// across checkpoints.
nlohmann::json evaluate_checkpoints(const std::vector<std::filesystem::path>& checkpoints,
                                    const DatasetSplits& data, std::size_t batch = 8);

enum class AblationAxis { Stage, Downsample, CaOnOff };
AblationAxis ablation_axis_from_string(const std::string& s);
const char* to_string(AblationAxis a);

struct AblationRow {
  std::string label;
  ExperimentConfig config;
  std::vector<RunReport> runs;  // one per seed
};

/// Configs for every row of the axis, derived from `base`:
///   stage:      BASELINE, then STINV_CA attached at stages 1..depth
///   downsample: STINV_CA with MAX, AVG, SCONV
///   ca_onoff:   STINV, STINV_CA
std::vector<std::pair<std::string, ExperimentConfig>> ablation_rows(const ExperimentConfig& base, AblationAxis axis);

std::vector<AblationRow> run_ablation(const ExperimentConfig& base, AblationAxis axis, const DatasetSplits& data,
                                      const std::filesystem::path& runs_root, std::size_t threads);

/// label, variant, attach_stage, downsample, per-seed shifted Dice, mean/std
/// of shifted, source-test and val Dice.
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

struct AnalysisReport {
  std::size_t attach_stage = 0;
  std::vector<double> divergence_shifted;  // per encoder stage
  std::vector<double> divergence_identity; // test_source against itself
  MeanMatrices matrices;
};

/// Per-stage divergence of test_source against test_shifted (and against
/// itself), plus mean covariance and variance matrices at the attachment
/// stage against strong stain augmentations seeded by `seed`.
AnalysisReport analyze(SegModel& model, const ExperimentConfig& cfg, const DatasetSplits& data, std::uint64_t seed);

/// analysis.json, covariance.csv/.png and variance.csv/.png under `dir`.
void write_analysis(const std::filesystem::path& dir, const AnalysisReport& report);

}  // namespace stainlab
