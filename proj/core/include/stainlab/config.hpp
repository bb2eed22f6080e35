#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stainlab/model.hpp"
#include "stainlab/optim.hpp"
#include "stainlab/stain.hpp"
#include "stainlab/synth.hpp"

namespace stainlab {

/// Stain shift of the held-out domain: rotation about the gray axis, then
/// element-wise factors on the row-major 3x2 matrix.
struct ShiftConfig {
  double rotation_deg = 15.0;
  /// Stain 0 loses red absorbance and gains green; stain 1 is left as is.
  std::array<double, 6> elementwise{0.85, 1.0, 1.2, 1.0, 1.0, 1.0};
};

struct DataConfig {
  std::size_t n_train = 200;
  std::size_t n_val = 50;
  std::size_t n_test = 50;
  ShiftConfig shift;
};

enum class AugKind { None, Light, Strong, Hsv };
const char* to_string(AugKind k);
AugKind aug_kind_from_string(const std::string& s);

struct HsvRanges {
  double hue_shift_deg = 8.0;
  std::array<double, 2> sat_scale{0.8, 1.2};
  std::array<double, 2> val_scale{0.9, 1.1};
};

struct AugmentConfig {
  bool flips = true;
  /// Augmentation of the training input itself (applied with `input_prob`).
  AugKind input = AugKind::None;
  double input_prob = 0.5;
  /// Perturbation producing the second view for covariance attention.
  AugKind attention = AugKind::Strong;
  StainAugmentRanges ranges;
  HsvRanges hsv;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  AdamWConfig optim;
  double alpha = 0.5;
  AugmentConfig augment;
  std::size_t eval_batch = 8;
  /// Appends every batch's predicted and target stain matrices to a CSV.
  bool log_stain_predictions = false;
};

struct ExperimentConfig {
  SynthConfig synth;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

/// Throws ConfigInvalid naming the offending field.
void validate(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Strict: unknown keys and wrong types are ConfigInvalid with a dotted path.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// TOML (by extension .toml) or JSON. ConfigInvalid when the file is absent.
ExperimentConfig load_config(const std::filesystem::path& path);
/// Parses TOML text into the equivalent JSON document.
nlohmann::json toml_to_json(const std::string& text, const std::string& source = "<string>");

/// Content hash of everything that influences a training run except the seed list.
std::string config_hash(const ExperimentConfig& cfg);

StainMatrix shift_matrix(const ExperimentConfig& cfg);

}  // namespace stainlab
