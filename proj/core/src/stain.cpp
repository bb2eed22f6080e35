#include "stainlab/stain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stainlab/error.hpp"
#include "stainlab/numeric.hpp"

namespace stainlab {

namespace {

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }
double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 clip_normalize(Vec3 v) {
  for (double& x : v) x = std::max(x, 0.0);
  const double n = norm3(v);
  if (n <= 0.0) fail(ErrorCode::DegenerateStain, "stain vector vanished after clipping");
  for (double& x : v) x /= n;
  return v;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

StainMatrix StainMatrix::from_columns(const Vec3& stain0, const Vec3& stain1) {
  return StainMatrix({stain0[0], stain1[0], stain0[1], stain1[1], stain0[2], stain1[2]});
}

StainMatrix StainMatrix::normalized() const {
  return from_columns(clip_normalize(column(0)), clip_normalize(column(1)));
}

bool StainMatrix::is_valid(double tol) const {
  for (double v : m_) {
    if (!(v >= 0.0) || !std::isfinite(v)) return false;
  }
  return std::abs(norm3(column(0)) - 1.0) <= tol && std::abs(norm3(column(1)) - 1.0) <= tol;
}

StainMatrix default_he_matrix() {
  return StainMatrix::from_columns({0.65, 0.70, 0.29}, {0.07, 0.99, 0.11}).normalized();
}

nlohmann::json to_json(const StainMatrix& s) { return s.row_major(); }

StainMatrix stain_matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 6) {
    fail(ErrorCode::ConfigInvalid, "stain matrix must be a 6-number row-major array");
  }
  std::array<double, 6> v{};
  for (std::size_t i = 0; i < 6; ++i) {
    if (!j[i].is_number()) fail(ErrorCode::ConfigInvalid, "stain matrix entries must be numbers");
    v[i] = j[i].get<double>();
  }
  return StainMatrix(v);
}

double angle_deg(const Vec3& a, const Vec3& b) {
  const double c = std::clamp(dot3(a, b) / (norm3(a) * norm3(b)), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

double max_column_angle_deg(const StainMatrix& a, const StainMatrix& b) {
  return std::max(angle_deg(a.column(0), b.column(0)), angle_deg(a.column(1), b.column(1)));
}

OdImage rgb_to_od(const RgbImage& img, double i0) {
  validate(img);
  if (!(i0 > 0.0)) fail(ErrorCode::ConfigInvalid, "reference white must be positive");
  OdImage out{img.width, img.height, std::vector<double>(img.data.size())};
  std::array<double, 256> table{};
  for (int v = 0; v < 256; ++v) table[v] = std::max(0.0, -std::log10(std::max(v, 1) / i0));
  std::transform(img.data.begin(), img.data.end(), out.od.begin(), [&](auto v) { return table[v]; });
  return out;
}

StainMatrix estimate_stain_matrix(const RgbImage& img, const MacenkoParams& params) {
  const OdImage od = rgb_to_od(img, params.i0);
  const std::size_t n = od.width * od.height;
  std::vector<Vec3> tissue;
  tissue.reserve(n);
  for (std::size_t p = 0; p < n; ++p) {
    const Vec3 v{od.od[3 * p], od.od[3 * p + 1], od.od[3 * p + 2]};
    if (v[0] > params.beta || v[1] > params.beta || v[2] > params.beta) tissue.push_back(v);
  }
  if (tissue.size() < params.min_tissue_pixels) {
    fail(ErrorCode::InsufficientTissue, std::to_string(tissue.size()) + " tissue pixels, need " +
                                            std::to_string(params.min_tissue_pixels));
  }

  Vec3 mu{0, 0, 0};
  for (const auto& v : tissue)
    for (int i = 0; i < 3; ++i) mu[i] += v[i];
  for (double& m : mu) m /= static_cast<double>(tissue.size());
  std::array<double, 9> cov{};
  for (const auto& v : tissue)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) cov[i * 3 + j] += (v[i] - mu[i]) * (v[j] - mu[j]);
  for (double& c : cov) c /= static_cast<double>(tissue.size() - 1);

  const SymEigen3 eig = eigen_symmetric3(cov);
  if (!(eig.values[0] > 0.0) || eig.values[1] < 1e-8 * eig.values[0]) {
    fail(ErrorCode::DegenerateStain, "OD scatter is effectively rank one");
  }
  Vec3 e0 = eig.vectors[0];
  Vec3 e1 = eig.vectors[1];
  // Fix eigenvector signs so angles are reproducible.
  if (e0[0] + e0[1] + e0[2] < 0) for (double& x : e0) x = -x;
  if (e1[0] < 0 || (e1[0] == 0 && e1[1] + e1[2] < 0)) for (double& x : e1) x = -x;

  std::vector<double> phi(tissue.size());
  for (std::size_t i = 0; i < tissue.size(); ++i) {
    phi[i] = std::atan2(dot3(tissue[i], e1), dot3(tissue[i], e0));
  }
  const double lo = percentile(phi, params.alpha_pct);
  const double hi = percentile(phi, 100.0 - params.alpha_pct);
  auto direction = [&](double a) {
    Vec3 v{};
    for (int i = 0; i < 3; ++i) v[i] = std::cos(a) * e0[i] + std::sin(a) * e1[i];
    if (v[0] + v[1] + v[2] < 0) for (double& x : v) x = -x;
    return clip_normalize(v);
  };
  Vec3 a = direction(lo);
  Vec3 b = direction(hi);
  if (a[0] < b[0]) std::swap(a, b);
  return StainMatrix::from_columns(a, b);
}

ConcentrationMap deconvolve(const RgbImage& img, const StainMatrix& s, double i0) {
  const OdImage od = rgb_to_od(img, i0);
  const Vec3 s0 = s.column(0), s1 = s.column(1);
  const double g00 = dot3(s0, s0), g01 = dot3(s0, s1), g11 = dot3(s1, s1);
  const double det = g00 * g11 - g01 * g01;
  if (std::abs(det) < 1e-12) fail(ErrorCode::DegenerateStain, "stain vectors are collinear");
  ConcentrationMap out{img.width, img.height, std::vector<double>(2 * img.pixels())};
  const std::size_t n = img.pixels();
  for (std::size_t p = 0; p < n; ++p) {
    const Vec3 v{od.od[3 * p], od.od[3 * p + 1], od.od[3 * p + 2]};
    const double r0 = dot3(s0, v), r1 = dot3(s1, v);
    out.c[p] = std::max(0.0, (g11 * r0 - g01 * r1) / det);
    out.c[n + p] = std::max(0.0, (g00 * r1 - g01 * r0) / det);
  }
  return out;
}

RgbImage render(const ConcentrationMap& conc, const StainMatrix& s, double i0) {
  RgbImage out(conc.width, conc.height);
  const std::size_t n = conc.pixels();
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double od = s(ch, 0) * conc.c[p] + s(ch, 1) * conc.c[n + p];
      out.data[3 * p + ch] = to_byte(i0 * std::pow(10.0, -od));
    }
  }
  return out;
}

std::array<double, 2> max_concentrations(const ConcentrationMap& conc, double pct) {
  const std::size_t n = conc.pixels();
  std::array<double, 2> out{};
  for (std::size_t j = 0; j < 2; ++j) {
    out[j] = percentile(std::vector<double>(conc.c.begin() + static_cast<std::ptrdiff_t>(j * n),
                                            conc.c.begin() + static_cast<std::ptrdiff_t>((j + 1) * n)),
                        pct);
  }
  return out;
}

RgbImage normalize_to_reference(const RgbImage& img, const StainMatrix& ref,
                                const std::array<double, 2>& ref_maxc, const MacenkoParams& params) {
  const StainMatrix own = estimate_stain_matrix(img, params);
  ConcentrationMap conc = deconvolve(img, own, params.i0);
  const auto maxc = max_concentrations(conc);
  const std::size_t n = conc.pixels();
  for (std::size_t j = 0; j < 2; ++j) {
    if (maxc[j] <= 0.0) continue;
    const double factor = ref_maxc[j] / maxc[j];
    for (std::size_t p = 0; p < n; ++p) conc.c[j * n + p] *= factor;
  }
  return render(conc, ref, params.i0);
}

LightPerturbation sample_light(Rng& rng, const StainAugmentRanges& r) {
  LightPerturbation p;
  for (std::size_t j = 0; j < 2; ++j) {
    p.scale[j] = rng.uniform(r.light_scale[0], r.light_scale[1]);
    p.shift[j] = rng.uniform(r.light_shift[0], r.light_shift[1]);
  }
  return p;
}

StrongPerturbation sample_strong(Rng& rng, const StainAugmentRanges& r) {
  StrongPerturbation p;
  for (double& f : p.factor) f = rng.uniform(r.strong_factor[0], r.strong_factor[1]);
  return p;
}

StainMatrix perturb(const StainMatrix& s, const LightPerturbation& p) {
  StainMatrix out = s;
  for (std::size_t row = 0; row < 3; ++row)
    for (std::size_t j = 0; j < 2; ++j) out(row, j) = std::max(0.0, p.scale[j] * s(row, j) + p.shift[j]);
  return out;
}

StainMatrix perturb(const StainMatrix& s, const StrongPerturbation& p) {
  StainMatrix out = s;
  for (std::size_t row = 0; row < 3; ++row)
    for (std::size_t j = 0; j < 2; ++j) out(row, j) = std::max(0.0, p.factor[row * 2 + j] * s(row, j));
  return out;
}

StainAugmentResult apply_stain_perturbation(const RgbImage& img, const StainMatrix& s,
                                            const StainMatrix& perturbed, double i0) {
  const ConcentrationMap conc = deconvolve(img, s, i0);
  return {render(conc, perturbed, i0), perturbed.normalized()};
}

StainAugmentResult augment_stain_light(const RgbImage& img, const StainMatrix& s, Rng& rng,
                                       const StainAugmentRanges& ranges) {
  return apply_stain_perturbation(img, s, perturb(s, sample_light(rng, ranges)));
}

StainAugmentResult augment_stain_strong(const RgbImage& img, const StainMatrix& s, Rng& rng,
                                        const StainAugmentRanges& ranges) {
  return apply_stain_perturbation(img, s, perturb(s, sample_strong(rng, ranges)));
}

StainAugmentResult augment_stain_light(const RgbImage& img, Rng& rng,
                                       const StainAugmentRanges& ranges, const MacenkoParams& params) {
  return augment_stain_light(img, estimate_stain_matrix(img, params), rng, ranges);
}

StainAugmentResult augment_stain_strong(const RgbImage& img, Rng& rng,
                                        const StainAugmentRanges& ranges, const MacenkoParams& params) {
  return augment_stain_strong(img, estimate_stain_matrix(img, params), rng, ranges);
}

RgbImage apply_hsv(const RgbImage& img, const HsvJitter& jitter) {
  validate(img);
  if (jitter.hue_shift_deg == 0.0 && jitter.sat_scale == 1.0 && jitter.val_scale == 1.0) return img;
  RgbImage out = img;
  for (std::size_t p = 0; p < img.pixels(); ++p) {
    const double r = img.data[3 * p] / 255.0, g = img.data[3 * p + 1] / 255.0,
                 b = img.data[3 * p + 2] / 255.0;
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double delta = mx - mn;
    double h = 0.0;
    if (delta > 0.0) {
      if (mx == r) h = 60.0 * std::fmod((g - b) / delta, 6.0);
      else if (mx == g) h = 60.0 * ((b - r) / delta + 2.0);
      else h = 60.0 * ((r - g) / delta + 4.0);
    }
    double s = mx > 0.0 ? delta / mx : 0.0;
    double v = mx;
    h = std::fmod(h + jitter.hue_shift_deg, 360.0);
    if (h < 0.0) h += 360.0;
    s = std::clamp(s * jitter.sat_scale, 0.0, 1.0);
    v = std::clamp(v * jitter.val_scale, 0.0, 1.0);

    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r1 = 0, g1 = 0, b1 = 0;
    switch (static_cast<int>(hp) % 6) {
      case 0: r1 = c; g1 = x; break;
      case 1: r1 = x; g1 = c; break;
      case 2: g1 = c; b1 = x; break;
      case 3: g1 = x; b1 = c; break;
      case 4: r1 = x; b1 = c; break;
      default: r1 = c; b1 = x; break;
    }
    const double m = v - c;
    out.data[3 * p] = to_byte((r1 + m) * 255.0);
    out.data[3 * p + 1] = to_byte((g1 + m) * 255.0);
    out.data[3 * p + 2] = to_byte((b1 + m) * 255.0);
  }
  return out;
}

RgbImage augment_hsv(const RgbImage& img, Rng& rng, double h_shift, std::array<double, 2> s_scale,
                     std::array<double, 2> v_scale) {
  HsvJitter j;
  j.hue_shift_deg = rng.uniform(-h_shift, h_shift);
  j.sat_scale = rng.uniform(s_scale[0], s_scale[1]);
  j.val_scale = rng.uniform(v_scale[0], v_scale[1]);
  return apply_hsv(img, j);
}

StainMatrix rotate_about_gray(const StainMatrix& s, double degrees) {
  const double t = degrees * std::numbers::pi / 180.0;
  const double k = 1.0 / std::sqrt(3.0);
  const Vec3 axis{k, k, k};
  auto rotate = [&](const Vec3& v) {
    // Rodrigues: v cos t + (axis x v) sin t + axis (axis . v)(1 - cos t)
    const Vec3 cross{axis[1] * v[2] - axis[2] * v[1], axis[2] * v[0] - axis[0] * v[2],
                     axis[0] * v[1] - axis[1] * v[0]};
    const double d = dot3(axis, v);
    Vec3 out{};
    for (int i = 0; i < 3; ++i) {
      out[i] = v[i] * std::cos(t) + cross[i] * std::sin(t) + axis[i] * d * (1.0 - std::cos(t));
    }
    return out;
  };
  return StainMatrix::from_columns(rotate(s.column(0)), rotate(s.column(1))).normalized();
}

}  // namespace stainlab
