#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <nlohmann/json.hpp>

#include "stainlab/image.hpp"
#include "stainlab/rng.hpp"

namespace stainlab {

using Vec3 = std::array<double, 3>;

/// 3x2 stain matrix: row i is colour channel (R, G, B), column j is stain j.
/// Valid matrices have unit-norm nonnegative columns; column 0 is the
/// hematoxylin-like stain (the one with the larger red OD component).
class StainMatrix {
 public:
  StainMatrix() = default;
  /// Row-major: {r0, r1, g0, g1, b0, b1}.
  explicit StainMatrix(const std::array<double, 6>& row_major) : m_(row_major) {}
  static StainMatrix from_columns(const Vec3& stain0, const Vec3& stain1);

  double operator()(std::size_t row, std::size_t col) const { return m_[row * 2 + col]; }
  double& operator()(std::size_t row, std::size_t col) { return m_[row * 2 + col]; }
  Vec3 column(std::size_t j) const { return {m_[j], m_[2 + j], m_[4 + j]}; }
  const std::array<double, 6>& row_major() const { return m_; }

  /// Clips negatives to zero and scales each column to unit norm.
  StainMatrix normalized() const;
  /// Unit norm within `tol`, nonnegative entries.
  bool is_valid(double tol = 1e-5) const;

  bool operator==(const StainMatrix&) const = default;

 private:
  std::array<double, 6> m_{};
};

/// Canonical H&E-like defaults, normalised.
StainMatrix default_he_matrix();

/// Serialised as a 6-number row-major JSON array.
nlohmann::json to_json(const StainMatrix& s);
StainMatrix stain_matrix_from_json(const nlohmann::json& j);

/// Angle in degrees between two directions.
double angle_deg(const Vec3& a, const Vec3& b);
/// Largest per-column angle between two stain matrices, in degrees.
double max_column_angle_deg(const StainMatrix& a, const StainMatrix& b);

/// Per-pixel optical densities, three per pixel, all >= 0.
struct OdImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> od;
};

/// Stain concentrations, stain-major: c[j * pixels + p], all >= 0.
struct ConcentrationMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> c;

  std::size_t pixels() const { return width * height; }
  double at(std::size_t stain, std::size_t pixel) const { return c[stain * pixels() + pixel]; }
  double& at(std::size_t stain, std::size_t pixel) { return c[stain * pixels() + pixel]; }
};

struct MacenkoParams {
  double beta = 0.15;        // OD threshold below which a pixel counts as background
  double alpha_pct = 1.0;    // robust extreme-angle percentile
  double i0 = 255.0;         // reference white
  std::size_t min_tissue_pixels = 100;
};

/// od = -log10(max(pixel, 1) / i0), clamped at zero.
OdImage rgb_to_od(const RgbImage& img, double i0 = 255.0);

/// Macenko stain-vector estimation.
/// Throws InsufficientTissue when fewer than `min_tissue_pixels` pixels have
/// any OD channel above `beta`, and DegenerateStain when the OD scatter is
/// effectively rank one (second eigenvalue < 1e-8 of the first).
StainMatrix estimate_stain_matrix(const RgbImage& img, const MacenkoParams& params = {});

/// Least-squares concentrations per pixel, negatives clipped to zero.
ConcentrationMap deconvolve(const RgbImage& img, const StainMatrix& s, double i0 = 255.0);

/// Beer-Lambert rendering: pixel = round(i0 * 10^(-S c)), clamped to [0,255].
/// `s` need not have unit columns (a column norm scales that stain's density).
RgbImage render(const ConcentrationMap& conc, const StainMatrix& s, double i0 = 255.0);

/// Per-stain percentile of concentrations (default the 99th).
std::array<double, 2> max_concentrations(const ConcentrationMap& conc, double pct = 99.0);

/// Re-renders `img` through `ref`, matching each stain's 99th-percentile
/// concentration to `ref_maxc`.
RgbImage normalize_to_reference(const RgbImage& img, const StainMatrix& ref,
                                const std::array<double, 2>& ref_maxc,
                                const MacenkoParams& params = {});

// ---- stain augmentation -------------------------------------------------

struct StainAugmentRanges {
  std::array<double, 2> light_scale{0.95, 1.05};
  std::array<double, 2> light_shift{-0.05, 0.05};
  std::array<double, 2> strong_factor{0.8, 1.2};
};

/// One scale and one additive shift per stain vector.
struct LightPerturbation {
  std::array<double, 2> scale{1.0, 1.0};
  std::array<double, 2> shift{0.0, 0.0};
};

/// Independent multiplicative factor per matrix entry (row-major).
struct StrongPerturbation {
  std::array<double, 6> factor{1, 1, 1, 1, 1, 1};
};

struct StainAugmentResult {
  RgbImage image;
  StainMatrix matrix;  // unit-norm, nonnegative matrix the image was re-rendered with
};

LightPerturbation sample_light(Rng& rng, const StainAugmentRanges& ranges = {});
StrongPerturbation sample_strong(Rng& rng, const StainAugmentRanges& ranges = {});

/// Perturbed (unnormalised, clipped to >= 0) stain vectors.
StainMatrix perturb(const StainMatrix& s, const LightPerturbation& p);
StainMatrix perturb(const StainMatrix& s, const StrongPerturbation& p);

/// Deconvolves `img` with `s` and re-renders the concentrations through the
/// perturbed vectors. The returned matrix is the perturbation with columns
/// renormalised; each column's norm is carried by the concentrations, so the
/// scale component stays visible in the image.
StainAugmentResult apply_stain_perturbation(const RgbImage& img, const StainMatrix& s,
                                            const StainMatrix& perturbed, double i0 = 255.0);

StainAugmentResult augment_stain_light(const RgbImage& img, const StainMatrix& s, Rng& rng,
                                       const StainAugmentRanges& ranges = {});
StainAugmentResult augment_stain_strong(const RgbImage& img, const StainMatrix& s, Rng& rng,
                                        const StainAugmentRanges& ranges = {});
/// Convenience overloads that estimate the image's own matrix first.
StainAugmentResult augment_stain_light(const RgbImage& img, Rng& rng,
                                       const StainAugmentRanges& ranges = {},
                                       const MacenkoParams& params = {});
StainAugmentResult augment_stain_strong(const RgbImage& img, Rng& rng,
                                        const StainAugmentRanges& ranges = {},
                                        const MacenkoParams& params = {});

struct HsvJitter {
  double hue_shift_deg = 0.0;
  double sat_scale = 1.0;
  double val_scale = 1.0;
};

/// RGB -> HSV, shift hue, scale saturation and value, HSV -> RGB, clamp.
RgbImage apply_hsv(const RgbImage& img, const HsvJitter& jitter);
/// Samples hue shift in [-h_shift, h_shift] degrees and scales in the given ranges.
RgbImage augment_hsv(const RgbImage& img, Rng& rng, double h_shift,
                     std::array<double, 2> s_scale, std::array<double, 2> v_scale);

// ---- stain-space transforms used to build shifted domains ----------------

/// Rotates every stain vector by `degrees` about the gray axis (1,1,1)/sqrt(3),
/// then clips to nonnegative and renormalises.
StainMatrix rotate_about_gray(const StainMatrix& s, double degrees);

}  // namespace stainlab
