#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stainlab/config.hpp"
#include "stainlab/metrics.hpp"
#include "stainlab/splits.hpp"

namespace stainlab {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t steps = 0;
  double task_loss = 0.0;   // mean over the epoch's batches
  double stain_loss = 0.0;  // branch RMSE as a plain predictor; 0 for BASELINE
  double total_loss = 0.0;
  SegMetrics val;
  double seconds = 0.0;
};

struct DomainScores {
  SegMetrics train, val, test_source, test_shifted;
};

struct RunReport {
  std::string config_hash;
  std::uint64_t seed = 0;
  Variant variant = Variant::Baseline;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_dice = 0.0;
  DomainScores final;
  /// Per-stage divergence between test_source and test_shifted features.
  std::vector<double> divergence;
  double seconds = 0.0;
};

nlohmann::json to_json(const RunReport& r);
RunReport run_report_from_json(const nlohmann::json& j);
/// One row per epoch.
void write_epochs_csv(const std::filesystem::path& path, const RunReport& r);

struct TrainOptions {
  /// Receives checkpoints/best, checkpoints/last, report.json and epochs.csv.
  std::filesystem::path out_dir;
  /// Continue from checkpoints/last when present.
  bool resume = false;
  /// Stop after this many epochs in total (for staged runs); the report then
  /// has no final section.
  std::optional<std::size_t> stop_after;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Macenko estimate per image; failures fall back to the normalised mean of
/// the successful estimates. DegenerateStain when none succeed.
std::vector<StainMatrix> estimate_targets(const std::vector<LabeledImage>& images);

/// Trains `cfg.model` with `seed` on `data`. Throws NonFiniteLoss (leaving
/// existing checkpoints untouched) when the loss or any update turns
/// non-finite.
RunReport train_run(const ExperimentConfig& cfg, std::uint64_t seed, const DatasetSplits& data,
                    const TrainOptions& opts);

/// Builds the model for `cfg` and loads the parameters stored in `dir`.
SegModel load_model(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Rebuilds config and model from a checkpoint written by train_run.
std::pair<ExperimentConfig, SegModel> load_trained(const std::filesystem::path& dir);

DomainScores score_domains(SegModel& model, const DatasetSplits& data, std::size_t batch);

/// Final evaluation of a trained model: domain scores and per-stage divergence.
void finalize_report(RunReport& report, SegModel& model, const DatasetSplits& data, std::size_t batch);

}  // namespace stainlab
