#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stainlab/image.hpp"
#include "stainlab/stain.hpp"
#include "stainlab/synth.hpp"

namespace stainlab {

/// One training or evaluation example as read from disk.
struct LabeledImage {
  std::string id;
  RgbImage image;
  BinaryMask mask;
  std::optional<StainMatrix> true_S;
};

/// Writes `<dir>/images/NNNN.png`, `<dir>/masks/NNNN.png`, a sidecar
/// `<dir>/meta/NNNN.json` ({index, true_S, seed, config_hash}) per sample and
/// `<dir>/split.json` describing the whole split.
void write_split(const std::filesystem::path& dir, const std::vector<SynthSample>& samples,
                 const nlohmann::json& config, std::uint64_t seed, const std::string& name);

/// Loads every sample listed in split.json. DataMissing when the directory or
/// a listed file is absent, EmptySet when the split has no samples.
std::vector<LabeledImage> read_split(const std::filesystem::path& dir);

std::vector<LabeledImage> to_labeled(const std::vector<SynthSample>& samples, const std::string& prefix);

}  // namespace stainlab
