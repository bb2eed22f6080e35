#include "stainlab/dataset.hpp"

#include <cstdio>
#include <fstream>

#include "stainlab/error.hpp"
#include "stainlab/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace stainlab {

namespace {

std::string stem(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::DataMissing, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::DataMissing, path.string() + ": " + e.what());
  }
}

}  // namespace

void write_split(const fs::path& dir, const std::vector<SynthSample>& samples, const json& config,
                 std::uint64_t seed, const std::string& name) {
  for (const char* sub : {"images", "masks", "meta"}) fs::create_directories(dir / sub);
  const std::string hash = json_hash(config);
  json entries = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string id = stem(i);
    write_png_rgb(dir / "images" / (id + ".png"), samples[i].image);
    write_png_mask(dir / "masks" / (id + ".png"), samples[i].mask);
    write_json(dir / "meta" / (id + ".json"),
               {{"index", i}, {"true_S", to_json(samples[i].true_S)}, {"seed", seed}, {"config_hash", hash}});
    entries.push_back(id);
  }
  write_json(dir / "split.json", {{"format", "stainlab-split"},
                                  {"version", 1},
                                  {"name", name},
                                  {"seed", seed},
                                  {"config_hash", hash},
                                  {"config", config},
                                  {"samples", entries}});
}

std::vector<LabeledImage> read_split(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::DataMissing, "dataset directory not found: " + dir.string());
  const json split = read_json(dir / "split.json");
  if (!split.contains("samples") || !split["samples"].is_array()) {
    fail(ErrorCode::DataMissing, (dir / "split.json").string() + ": missing sample list");
  }
  std::vector<LabeledImage> out;
  for (const auto& entry : split["samples"]) {
    const std::string id = entry.get<std::string>();
    LabeledImage li;
    li.id = id;
    li.image = read_png_rgb(dir / "images" / (id + ".png"));
    li.mask = read_png_mask(dir / "masks" / (id + ".png"));
    if (li.mask.width != li.image.width || li.mask.height != li.image.height) {
      fail(ErrorCode::ShapeMismatch, "mask and image sizes differ for sample " + id);
    }
    const fs::path meta = dir / "meta" / (id + ".json");
    if (fs::exists(meta)) {
      const json m = read_json(meta);
      if (m.contains("true_S")) li.true_S = stain_matrix_from_json(m["true_S"]);
    }
    out.push_back(std::move(li));
  }
  if (out.empty()) fail(ErrorCode::EmptySet, "split " + dir.string() + " has no samples");
  return out;
}

std::vector<LabeledImage> to_labeled(const std::vector<SynthSample>& samples, const std::string& prefix) {
  std::vector<LabeledImage> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.push_back({prefix + stem(i), samples[i].image, samples[i].mask, samples[i].true_S});
  }
  return out;
}

}  // namespace stainlab
