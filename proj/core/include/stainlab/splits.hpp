#pragma once

#include <filesystem>
#include <vector>

#include "stainlab/config.hpp"
#include "stainlab/dataset.hpp"

namespace stainlab {

/// The four splits of an experiment. `test_source` and `test_shifted` share
/// layouts index by index and differ only in the stain matrix.
struct DatasetSplits {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> val;
  std::vector<LabeledImage> test_source;
  std::vector<LabeledImage> test_shifted;
  /// dataset_hash of the generating config (as recorded in split.json).
  std::string fingerprint;
};

/// Deterministic in synth.seed; each split draws from its own child stream so
/// changing one count never reshuffles the others.
DatasetSplits generate_dataset(const ExperimentConfig& cfg);

/// Writes train/, val/, test_source/ and test_shifted/ under `dir`.
void write_dataset(const std::filesystem::path& dir, const ExperimentConfig& cfg);

/// DataMissing when a split directory or any listed file is absent.
DatasetSplits read_dataset(const std::filesystem::path& dir);

/// Hash of the settings that determine the generated data.
std::string dataset_hash(const ExperimentConfig& cfg);

std::vector<const RgbImage*> image_ptrs(const std::vector<LabeledImage>& set);
std::vector<const BinaryMask*> mask_ptrs(const std::vector<LabeledImage>& set);

}  // namespace stainlab
