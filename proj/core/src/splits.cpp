#include "stainlab/splits.hpp"

#include <fstream>

#include "stainlab/error.hpp"
#include "stainlab/hash.hpp"

namespace fs = std::filesystem;

namespace stainlab {

namespace {

struct RawSplits {
  std::vector<SynthSample> train, val;
  DomainPair test;
};

RawSplits generate_raw(const ExperimentConfig& cfg) {
  validate(cfg);
  Rng root(cfg.synth.seed);
  Rng train_rng = root.split(), val_rng = root.split(), test_rng = root.split();
  RawSplits out;
  for (std::size_t i = 0; i < cfg.data.n_train; ++i) out.train.push_back(generate(cfg.synth, train_rng));
  for (std::size_t i = 0; i < cfg.data.n_val; ++i) out.val.push_back(generate(cfg.synth, val_rng));
  out.test = make_domain_pair(cfg.synth, shift_matrix(cfg), test_rng, cfg.data.n_test);
  return out;
}

nlohmann::json data_json(const ExperimentConfig& cfg) {
  const nlohmann::json full = to_json(cfg);
  return {{"synth", full["synth"]}, {"data", full["data"]}};
}

}  // namespace

std::string dataset_hash(const ExperimentConfig& cfg) { return json_hash(data_json(cfg)); }

DatasetSplits generate_dataset(const ExperimentConfig& cfg) {
  const RawSplits raw = generate_raw(cfg);
  return {to_labeled(raw.train, "train/"), to_labeled(raw.val, "val/"),
          to_labeled(raw.test.source, "test_source/"), to_labeled(raw.test.shifted, "test_shifted/"),
          dataset_hash(cfg)};
}

void write_dataset(const fs::path& dir, const ExperimentConfig& cfg) {
  const RawSplits raw = generate_raw(cfg);
  const auto meta = data_json(cfg);
  write_split(dir / "train", raw.train, meta, cfg.synth.seed, "train");
  write_split(dir / "val", raw.val, meta, cfg.synth.seed, "val");
  write_split(dir / "test_source", raw.test.source, meta, cfg.synth.seed, "test_source");
  write_split(dir / "test_shifted", raw.test.shifted, meta, cfg.synth.seed, "test_shifted");
}

DatasetSplits read_dataset(const fs::path& dir) {
  DatasetSplits out{read_split(dir / "train"), read_split(dir / "val"), read_split(dir / "test_source"),
                    read_split(dir / "test_shifted"), ""};
  if (out.test_source.size() != out.test_shifted.size()) {
    fail(ErrorCode::ShapeMismatch, "test_source and test_shifted differ in size under " + dir.string());
  }
  std::ifstream in(dir / "train" / "split.json");
  out.fingerprint = nlohmann::json::parse(in).value("config_hash", std::string("unknown"));
  return out;
}

std::vector<const RgbImage*> image_ptrs(const std::vector<LabeledImage>& set) {
  std::vector<const RgbImage*> out;
  out.reserve(set.size());
  for (const auto& s : set) out.push_back(&s.image);
  return out;
}

std::vector<const BinaryMask*> mask_ptrs(const std::vector<LabeledImage>& set) {
  std::vector<const BinaryMask*> out;
  out.reserve(set.size());
  for (const auto& s : set) out.push_back(&s.mask);
  return out;
}

}  // namespace stainlab
