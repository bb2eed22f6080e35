#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "stainlab/image.hpp"
#include "stainlab/rng.hpp"
#include "stainlab/stain.hpp"

namespace stainlab {

/// Synthetic stained-tissue generator settings.
///
/// Target structures are smooth blobs (thresholded sums of Gaussians) stained
/// almost purely with stain 0; the surrounding tissue carries a smooth stain-1
/// texture sprinkled with small stain-0 "nuclei" that are not part of the mask.
/// Decoys share the blob geometry but mix both stains and are background, so
/// telling them apart from targets takes colour, not shape.
struct SynthConfig {
  std::size_t image_size = 96;
  std::array<int, 2> n_blobs{2, 4};
  std::array<double, 2> blob_radius{0.07, 0.14};  // fraction of image_size
  std::array<int, 2> n_nuclei{8, 20};
  std::array<int, 2> n_decoys{1, 3};
  /// Stain-0 concentration of decoys relative to targets; they also carry stain 1.
  double decoy_stain0 = 0.45;
  StainMatrix stain_matrix = default_he_matrix();
  std::array<double, 2> concentration_scale{1.0, 0.6};
  /// Per-sample multiplicative jitter of every matrix entry, U[1-j, 1+j].
  double stain_jitter = 0.05;
  double noise_sigma = 1.0;  // pixel levels
  std::uint64_t seed = 0;
};

/// Throws ConfigInvalid with the offending field name.
void validate(const SynthConfig& cfg);

nlohmann::json to_json(const SynthConfig& cfg);
/// Strict: unknown keys are ConfigInvalid. `path` prefixes error messages.
SynthConfig synth_config_from_json(const nlohmann::json& j, const std::string& path = "synth");

struct SynthSample {
  RgbImage image;
  BinaryMask mask;
  StainMatrix true_S;
  ConcentrationMap true_C;
};

/// Stain-independent part of a sample: concentrations, mask, per-sample
/// matrix jitter and the noise stream.
struct SynthLayout {
  ConcentrationMap conc;
  BinaryMask mask;
  StrongPerturbation jitter;
  std::uint64_t noise_seed = 0;
};

SynthLayout sample_layout(const SynthConfig& cfg, Rng& rng);
/// Renders a layout through `base` (jittered per the layout) with pixel noise.
SynthSample render_layout(const SynthLayout& layout, const StainMatrix& base, const SynthConfig& cfg);

SynthSample generate(const SynthConfig& cfg, Rng& rng);

struct DomainPair {
  std::vector<SynthSample> source;
  std::vector<SynthSample> shifted;
};

/// `count` layouts rendered twice: through cfg.stain_matrix and through
/// `shift`. Sample i of both sets shares concentrations, mask and noise.
DomainPair make_domain_pair(const SynthConfig& cfg, const StainMatrix& shift, Rng& rng,
                            std::size_t count);

/// Rotation about the gray axis followed by an element-wise factor, clipped
/// and renormalised.
StainMatrix shifted_stain_matrix(const StainMatrix& base, double rotation_deg,
                                 const std::array<double, 6>& elementwise);

}  // namespace stainlab
