#include "stainlab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stainlab/error.hpp"
#include "stainlab/json_reader.hpp"

namespace stainlab {

namespace {

struct Wave {
  double fx, fy, phase, amp;
};

std::vector<Wave> sample_waves(Rng& rng, std::size_t count, double max_freq) {
  std::vector<Wave> waves(count);
  for (auto& w : waves) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double freq = rng.uniform(0.5, max_freq);
    w = {freq * std::cos(angle), freq * std::sin(angle), rng.uniform(0.0, 2.0 * std::numbers::pi),
         rng.uniform(0.5, 1.0)};
  }
  return waves;
}

// Smooth field in [0,1] from a handful of low-frequency plane waves.
double texture(const std::vector<Wave>& waves, double u, double v) {
  double acc = 0.0, norm = 0.0;
  for (const auto& w : waves) {
    acc += w.amp * std::cos(2.0 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
    norm += w.amp;
  }
  return 0.5 + 0.5 * acc / norm;
}

void require(bool ok, const char* field, const std::string& why) {
  if (!ok) fail(ErrorCode::ConfigInvalid, std::string("synth.") + field + ": " + why);
}

}  // namespace

void validate(const SynthConfig& cfg) {
  require(cfg.image_size >= 16, "image_size", "must be >= 16");
  require(cfg.n_blobs[0] >= 1 && cfg.n_blobs[0] <= cfg.n_blobs[1], "n_blobs", "need 1 <= min <= max");
  require(cfg.n_nuclei[0] >= 0 && cfg.n_nuclei[0] <= cfg.n_nuclei[1], "n_nuclei", "need 0 <= min <= max");
  require(cfg.n_decoys[0] >= 0 && cfg.n_decoys[0] <= cfg.n_decoys[1], "n_decoys", "need 0 <= min <= max");
  require(cfg.decoy_stain0 >= 0.0, "decoy_stain0", "must be >= 0");
  require(cfg.blob_radius[0] > 0.0 && cfg.blob_radius[0] <= cfg.blob_radius[1], "blob_radius",
          "need 0 < min <= max");
  require(cfg.stain_matrix.is_valid(1e-3), "stain_matrix", "columns must be unit-norm and nonnegative");
  require(cfg.concentration_scale[0] > 0.0 && cfg.concentration_scale[1] > 0.0, "concentration_scale",
          "must be positive");
  require(cfg.stain_jitter >= 0.0 && cfg.stain_jitter < 1.0, "stain_jitter", "must lie in [0,1)");
  require(cfg.noise_sigma >= 0.0, "noise_sigma", "must be >= 0");
}

nlohmann::json to_json(const SynthConfig& cfg) {
  return {{"image_size", cfg.image_size},
          {"n_blobs", cfg.n_blobs},
          {"blob_radius", cfg.blob_radius},
          {"n_nuclei", cfg.n_nuclei},
          {"n_decoys", cfg.n_decoys},
          {"decoy_stain0", cfg.decoy_stain0},
          {"stain_matrix", to_json(cfg.stain_matrix)},
          {"concentration_scale", cfg.concentration_scale},
          {"stain_jitter", cfg.stain_jitter},
          {"noise_sigma", cfg.noise_sigma},
          {"seed", cfg.seed}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j, const std::string& path) {
  SynthConfig cfg;
  ObjectReader r(j, path);
  r.get("image_size", cfg.image_size);
  r.get("n_blobs", cfg.n_blobs);
  r.get("blob_radius", cfg.blob_radius);
  r.get("n_nuclei", cfg.n_nuclei);
  r.get("n_decoys", cfg.n_decoys);
  r.get("decoy_stain0", cfg.decoy_stain0);
  if (const auto* s = r.raw("stain_matrix")) {
    const StainMatrix m = stain_matrix_from_json(*s);
    for (double v : m.row_major())
      if (!(v >= 0.0)) fail(ErrorCode::ConfigInvalid, r.field("stain_matrix") + ": entries must be nonnegative");
    // Renormalising an already unit-norm matrix would perturb the last bit and the config hash.
    cfg.stain_matrix = m.is_valid(1e-12) ? m : m.normalized();
  }
  r.get("concentration_scale", cfg.concentration_scale);
  r.get("stain_jitter", cfg.stain_jitter);
  r.get("noise_sigma", cfg.noise_sigma);
  r.get("seed", cfg.seed);
  r.finish();
  validate(cfg);
  return cfg;
}

SynthLayout sample_layout(const SynthConfig& cfg, Rng& rng) {
  validate(cfg);
  const std::size_t size = cfg.image_size;
  const double sz = static_cast<double>(size);
  SynthLayout out;
  out.conc = ConcentrationMap{size, size, std::vector<double>(2 * size * size, 0.0)};
  out.mask = BinaryMask(size, size);

  struct Blob {
    double cx, cy, sigma;
  };
  std::vector<Blob> blobs(static_cast<std::size_t>(rng.uniform_int(cfg.n_blobs[0], cfg.n_blobs[1])));
  for (auto& b : blobs) {
    b.sigma = rng.uniform(cfg.blob_radius[0], cfg.blob_radius[1]) * sz;
    b.cx = rng.uniform(0.15 * sz, 0.85 * sz);
    b.cy = rng.uniform(0.15 * sz, 0.85 * sz);
  }
  std::vector<Blob> nuclei(static_cast<std::size_t>(rng.uniform_int(cfg.n_nuclei[0], cfg.n_nuclei[1])));
  for (auto& b : nuclei) {
    b.sigma = rng.uniform(0.012, 0.02) * sz;
    b.cx = rng.uniform(0.0, sz);
    b.cy = rng.uniform(0.0, sz);
  }
  std::vector<Blob> decoys(static_cast<std::size_t>(rng.uniform_int(cfg.n_decoys[0], cfg.n_decoys[1])));
  for (auto& b : decoys) {
    b.sigma = rng.uniform(cfg.blob_radius[0], cfg.blob_radius[1]) * sz;
    b.cx = rng.uniform(0.15 * sz, 0.85 * sz);
    b.cy = rng.uniform(0.15 * sz, 0.85 * sz);
  }
  const auto blob_texture = sample_waves(rng, 4, 6.0);
  const auto tissue_texture = sample_waves(rng, 5, 3.0);
  for (double& f : out.jitter.factor) f = rng.uniform(1.0 - cfg.stain_jitter, 1.0 + cfg.stain_jitter);
  out.noise_seed = static_cast<std::uint64_t>(rng.engine()());

  const std::size_t n = size * size;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      double field = 0.0;
      for (const auto& b : blobs) {
        const double d2 = (px - b.cx) * (px - b.cx) + (py - b.cy) * (py - b.cy);
        field += std::exp(-d2 / (2.0 * b.sigma * b.sigma));
      }
      const std::size_t p = y * size + x;
      out.mask.data[p] = field > 0.5 ? 1 : 0;
      const double inside = std::clamp((field - 0.35) / 0.3, 0.0, 1.0);
      double decoy_field = 0.0;
      for (const auto& b : decoys) {
        const double d2 = (px - b.cx) * (px - b.cx) + (py - b.cy) * (py - b.cy);
        decoy_field += std::exp(-d2 / (2.0 * b.sigma * b.sigma));
      }
      const double decoy = (1.0 - inside) * std::clamp((decoy_field - 0.35) / 0.3, 0.0, 1.0);
      double nucleus = 0.0;
      for (const auto& b : nuclei) {
        const double d2 = (px - b.cx) * (px - b.cx) + (py - b.cy) * (py - b.cy);
        nucleus = std::max(nucleus, std::exp(-d2 / (2.0 * b.sigma * b.sigma)));
      }
      const double u = px / sz, v = py / sz;
      const double blob_tex = 0.7 + 0.3 * texture(blob_texture, u, v);
      const double c0 = cfg.concentration_scale[0] *
                        (inside * blob_tex + decoy * cfg.decoy_stain0 * blob_tex +
                         (1.0 - inside - decoy) * 0.9 * nucleus);
      const double c1 = cfg.concentration_scale[1] *
                        ((1.0 - inside - decoy) * (1.0 - nucleus) * (0.1 + 0.9 * texture(tissue_texture, u, v)) +
                         decoy * (0.8 + 0.2 * blob_tex));
      out.conc.c[p] = c0;
      out.conc.c[n + p] = c1;
    }
  }
  return out;
}

SynthSample render_layout(const SynthLayout& layout, const StainMatrix& base, const SynthConfig& cfg) {
  SynthSample s;
  s.true_S = perturb(base, layout.jitter).normalized();
  s.true_C = layout.conc;
  s.mask = layout.mask;
  const std::size_t n = layout.conc.pixels();
  s.image = RgbImage(layout.conc.width, layout.conc.height);
  Rng noise(layout.noise_seed);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double od = s.true_S(ch, 0) * layout.conc.c[p] + s.true_S(ch, 1) * layout.conc.c[n + p];
      double value = 255.0 * std::pow(10.0, -od);
      if (cfg.noise_sigma > 0.0) value += noise.normal(0.0, cfg.noise_sigma);
      s.image.data[3 * p + ch] = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
    }
  }
  return s;
}

SynthSample generate(const SynthConfig& cfg, Rng& rng) {
  return render_layout(sample_layout(cfg, rng), cfg.stain_matrix, cfg);
}

DomainPair make_domain_pair(const SynthConfig& cfg, const StainMatrix& shift, Rng& rng,
                            std::size_t count) {
  if (!shift.is_valid(1e-3)) fail(ErrorCode::ConfigInvalid, "shift matrix must be unit-norm and nonnegative");
  DomainPair pair;
  pair.source.reserve(count);
  pair.shifted.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const SynthLayout layout = sample_layout(cfg, rng);
    pair.source.push_back(render_layout(layout, cfg.stain_matrix, cfg));
    pair.shifted.push_back(render_layout(layout, shift, cfg));
  }
  return pair;
}

StainMatrix shifted_stain_matrix(const StainMatrix& base, double rotation_deg,
                                 const std::array<double, 6>& elementwise) {
  StrongPerturbation p;
  p.factor = elementwise;
  return perturb(rotate_about_gray(base, rotation_deg), p).normalized();
}

}  // namespace stainlab
