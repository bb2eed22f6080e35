#include "stainlab/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "stainlab/checkpoint.hpp"
#include "stainlab/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace stainlab {

namespace {

json metrics_json(const SegMetrics& m) {
  return {{"dice", m.dice}, {"precision", m.precision}, {"recall", m.recall}, {"count", m.count}};
}

SegMetrics metrics_from_json(const json& j) {
  return {j.at("dice").get<double>(), j.at("precision").get<double>(), j.at("recall").get<double>(),
          j.at("count").get<std::size_t>()};
}

json epoch_json(const EpochRecord& e) {
  return {{"epoch", e.epoch},         {"steps", e.steps},           {"task_loss", e.task_loss},
          {"stain_loss", e.stain_loss}, {"total_loss", e.total_loss}, {"val", metrics_json(e.val)},
          {"seconds", e.seconds}};
}

EpochRecord epoch_from_json(const json& j) {
  EpochRecord e;
  e.epoch = j.at("epoch").get<std::size_t>();
  e.steps = j.at("steps").get<std::size_t>();
  e.task_loss = j.at("task_loss").get<double>();
  e.stain_loss = j.at("stain_loss").get<double>();
  e.total_loss = j.at("total_loss").get<double>();
  e.val = metrics_from_json(j.at("val"));
  e.seconds = j.at("seconds").get<double>();
  return e;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void require_finite_params(const ParamStore& store, std::size_t epoch) {
  for (const auto& [name, entry] : store.entries())
    for (float v : entry.tensor.data())
      if (!std::isfinite(v))
        fail(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ": parameter " + name + " is not finite");
}

RgbImage stain_augment(AugKind kind, const RgbImage& img, const StainMatrix& s, const AugmentConfig& aug,
                       Rng& rng, StainMatrix* target) {
  switch (kind) {
    case AugKind::Light: {
      auto r = augment_stain_light(img, s, rng, aug.ranges);
      if (target) *target = r.matrix;
      return std::move(r.image);
    }
    case AugKind::Strong: {
      auto r = augment_stain_strong(img, s, rng, aug.ranges);
      if (target) *target = r.matrix;
      return std::move(r.image);
    }
    case AugKind::Hsv:
      return augment_hsv(img, rng, aug.hsv.hue_shift_deg, aug.hsv.sat_scale, aug.hsv.val_scale);
    case AugKind::None:
      break;
  }
  return img;
}

struct Batch {
  std::vector<RgbImage> images, augmented;
  std::vector<BinaryMask> masks;
  std::vector<StainMatrix> targets;
};

Batch assemble(const ExperimentConfig& cfg, const std::vector<LabeledImage>& train,
               const std::vector<StainMatrix>& targets, const std::size_t* idx, std::size_t n, Rng& rng) {
  const auto& aug = cfg.train.augment;
  Batch b;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& src = train[idx[k]];
    RgbImage img = src.image;
    BinaryMask mask = src.mask;
    StainMatrix s = targets[idx[k]];
    if (aug.flips) {
      if (rng.bernoulli(0.5)) {
        img = flip_horizontal(img);
        mask = flip_horizontal(mask);
      }
      if (rng.bernoulli(0.5)) {
        img = flip_vertical(img);
        mask = flip_vertical(mask);
      }
    }
    if (aug.input != AugKind::None && rng.bernoulli(aug.input_prob)) img = stain_augment(aug.input, img, s, aug, rng, &s);
    if (cfg.model.variant == Variant::StinvCa) b.augmented.push_back(stain_augment(aug.attention, img, s, aug, rng, nullptr));
    b.images.push_back(std::move(img));
    b.masks.push_back(std::move(mask));
    b.targets.push_back(s);
  }
  return b;
}

template <typename V>
std::vector<const V*> pointers(const std::vector<V>& v) {
  std::vector<const V*> out;
  for (const auto& x : v) out.push_back(&x);
  return out;
}

void save_report(const fs::path& dir, const RunReport& r) {
  std::ofstream out(dir / "report.json");
  if (!out) fail(ErrorCode::IoError, "cannot write " + (dir / "report.json").string());
  out << to_json(r).dump(2) << '\n';
  write_epochs_csv(dir / "epochs.csv", r);
}

}  // namespace

json to_json(const RunReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) epochs.push_back(epoch_json(e));
  json j = {{"config_hash", r.config_hash},
            {"seed", r.seed},
            {"variant", to_string(r.variant)},
            {"epochs", epochs},
            {"best_epoch", r.best_epoch},
            {"best_val_dice", r.best_val_dice},
            {"seconds", r.seconds}};
  if (!r.divergence.empty()) {
    j["final"] = {{"domains",
                   {{"train", metrics_json(r.final.train)},
                    {"val", metrics_json(r.final.val)},
                    {"test_source", metrics_json(r.final.test_source)},
                    {"test_shifted", metrics_json(r.final.test_shifted)}}},
                  {"divergence", r.divergence}};
  }
  return j;
}

RunReport run_report_from_json(const json& j) {
  RunReport r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.variant = variant_from_string(j.at("variant").get<std::string>());
  for (const auto& e : j.at("epochs")) r.epochs.push_back(epoch_from_json(e));
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.best_val_dice = j.at("best_val_dice").get<double>();
  r.seconds = j.at("seconds").get<double>();
  if (j.contains("final")) {
    const auto& d = j["final"].at("domains");
    r.final = {metrics_from_json(d.at("train")), metrics_from_json(d.at("val")),
               metrics_from_json(d.at("test_source")), metrics_from_json(d.at("test_shifted"))};
    r.divergence = j["final"].at("divergence").get<std::vector<double>>();
  }
  return r;
}

void write_epochs_csv(const fs::path& path, const RunReport& r) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << "epoch,steps,task_loss,stain_loss,total_loss,val_dice,val_precision,val_recall,seconds\n";
  char buf[256];
  for (const auto& e : r.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f\n", e.epoch, e.steps, e.task_loss,
                  e.stain_loss, e.total_loss, e.val.dice, e.val.precision, e.val.recall, e.seconds);
    out << buf;
  }
}

std::vector<StainMatrix> estimate_targets(const std::vector<LabeledImage>& images) {
  std::vector<std::optional<StainMatrix>> est(images.size());
  std::array<double, 6> sum{};
  std::size_t ok = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    try {
      est[i] = estimate_stain_matrix(images[i].image);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientTissue && e.code() != ErrorCode::DegenerateStain) throw;
      continue;
    }
    for (std::size_t k = 0; k < 6; ++k) sum[k] += est[i]->row_major()[k];
    ++ok;
  }
  if (ok == 0) fail(ErrorCode::DegenerateStain, "stain estimation failed for every training image");
  const StainMatrix fallback = StainMatrix(sum).normalized();
  std::vector<StainMatrix> out;
  out.reserve(images.size());
  for (const auto& e : est) out.push_back(e ? *e : fallback);
  return out;
}

SegModel load_model(const ExperimentConfig& cfg, const fs::path& dir) {
  Rng rng(0);
  SegModel model = SegModel::build(cfg.model, rng);
  load_checkpoint(dir, model.params(), nullptr);
  return model;
}

std::pair<ExperimentConfig, SegModel> load_trained(const fs::path& dir) {
  const json manifest = read_checkpoint_manifest(dir);
  const json* extra = manifest.contains("meta") ? &manifest["meta"] : nullptr;
  if (!extra || !extra->contains("config")) {
    fail(ErrorCode::DataMissing, "checkpoint " + dir.string() + " does not record its experiment config");
  }
  ExperimentConfig cfg = config_from_json((*extra)["config"]);
  SegModel model = load_model(cfg, dir);
  return {std::move(cfg), std::move(model)};
}

DomainScores score_domains(SegModel& model, const DatasetSplits& data, std::size_t batch) {
  auto score = [&](const std::vector<LabeledImage>& set) {
    return evaluate_segmentation(model, image_ptrs(set), mask_ptrs(set), batch);
  };
  return {score(data.train), score(data.val), score(data.test_source), score(data.test_shifted)};
}

void finalize_report(RunReport& report, SegModel& model, const DatasetSplits& data, std::size_t batch) {
  report.final = score_domains(model, data, batch);
  report.divergence =
      feature_divergence_all_stages(model, image_ptrs(data.test_source), image_ptrs(data.test_shifted), batch);
}

RunReport train_run(const ExperimentConfig& cfg, std::uint64_t seed, const DatasetSplits& data,
                    const TrainOptions& opts) {
  validate(cfg);
  const auto& tc = cfg.train;
  if (data.train.size() < 2) fail(ErrorCode::EmptySet, "training split needs at least 2 samples");
  if (data.val.empty()) fail(ErrorCode::EmptySet, "validation split is empty");
  for (const auto* set : {&data.train, &data.val, &data.test_source, &data.test_shifted})
    for (const auto& s : *set)
      if (s.image.width != cfg.model.input_size || s.image.height != cfg.model.input_size)
        fail(ErrorCode::ShapeMismatch, "sample " + s.id + " does not match model.input_size " +
                                           std::to_string(cfg.model.input_size));

  const fs::path best_dir = opts.out_dir / "checkpoints" / "best";
  const fs::path last_dir = opts.out_dir / "checkpoints" / "last";
  fs::create_directories(opts.out_dir / "checkpoints");

  Rng root(seed);
  Rng init_rng = root.split();
  Rng rng = root.split();
  SegModel model = SegModel::build(cfg.model, init_rng);
  AdamW optim(tc.optim);

  RunReport report;
  report.config_hash = config_hash(cfg);
  report.seed = seed;
  report.variant = cfg.model.variant;

  if (opts.resume && fs::exists(last_dir / "manifest.json")) {
    const CheckpointMeta meta = load_checkpoint(last_dir, model.params(), &optim);
    if (meta.config_hash != report.config_hash) {
      fail(ErrorCode::ConfigInvalid, "checkpoint " + last_dir.string() + " was written for config " +
                                         meta.config_hash + ", not " + report.config_hash);
    }
    if (meta.extra.value("seed", seed) != seed) fail(ErrorCode::ConfigInvalid, "checkpoint seed differs from --seeds");
    rng.restore(meta.extra.at("rng").get<std::string>());
    for (const auto& e : meta.extra.at("history")) report.epochs.push_back(epoch_from_json(e));
    report.best_epoch = meta.extra.at("best_epoch").get<std::size_t>();
    report.best_val_dice = meta.extra.at("best_val_dice").get<double>();
  }

  const bool branch = cfg.model.variant != Variant::Baseline;
  const std::vector<StainMatrix> targets =
      branch ? estimate_targets(data.train) : std::vector<StainMatrix>(data.train.size(), StainMatrix{});

  if (branch && report.epochs.empty()) {
    std::array<double, 6> mean{};
    for (const auto& t : targets)
      for (std::size_t k = 0; k < 6; ++k) mean[k] += t.row_major()[k] / static_cast<double>(targets.size());
    model.init_stain_head(StainMatrix(mean));
  }

  std::ofstream stain_log;
  if (tc.log_stain_predictions && branch) {
    const fs::path p = opts.out_dir / "stain_predictions.csv";
    const bool fresh = report.epochs.empty() || !fs::exists(p);
    stain_log.open(p, fresh ? std::ios::trunc : std::ios::app);
    if (fresh) stain_log << "epoch,step,sample,pred0,pred1,pred2,pred3,pred4,pred5,target0,target1,target2,target3,target4,target5\n";
  }

  std::vector<std::size_t> order(data.train.size());
  const std::size_t end_epoch = std::min(tc.epochs, opts.stop_after.value_or(tc.epochs));
  for (std::size_t epoch = report.epochs.size() + 1; epoch <= end_epoch; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());

    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t start = 0; start + 2 <= order.size(); start += tc.batch_size) {
      const std::size_t n = std::min(tc.batch_size, order.size() - start);
      if (n < 2) break;  // batch normalisation needs two samples
      Batch b = assemble(cfg, data.train, targets, order.data() + start, n, rng);

      BasicTrainBatch<float> tb;
      tb.images = images_to_tensor<float>(pointers(b.images));
      tb.masks = masks_to_tensor<float>(pointers(b.masks));
      if (cfg.model.variant == Variant::StinvCa) tb.augmented = images_to_tensor<float>(pointers(b.augmented));
      if (branch) tb.stain_targets = stain_targets<float>(b.targets);

      Tape tape;
      model.params().zero_grad();
      const double lambda = cfg.model.grl.lambda_at(static_cast<std::size_t>(optim.steps()));
      auto [outputs, losses] = model.forward_train(tape, tb, tc.alpha, lambda, rng);
      const double total = losses.total.item();
      if (!std::isfinite(total)) {
        fail(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + " step " +
                                           std::to_string(optim.steps() + 1) + ": total loss is " +
                                           std::to_string(total) + "; lower train.optim.lr");
      }
      tape.backward(losses.total);
      try {
        optim.step(model.params());
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteValue) throw;
        fail(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ": " + e.what());
      }

      rec.task_loss += losses.task.item();
      if (losses.stain) rec.stain_loss += losses.stain->item();
      rec.total_loss += total;
      ++rec.steps;

      if (stain_log.is_open() && outputs.s_hat) {
        const auto pred = outputs.s_hat->data();
        for (std::size_t k = 0; k < n; ++k) {
          stain_log << epoch << ',' << optim.steps() << ',' << data.train[order[start + k]].id;
          for (std::size_t e = 0; e < 6; ++e) stain_log << ',' << pred[6 * k + e];
          for (double v : b.targets[k].row_major()) stain_log << ',' << v;
          stain_log << '\n';
        }
      }
    }
    if (rec.steps > 0) {
      const double inv = 1.0 / static_cast<double>(rec.steps);
      rec.task_loss *= inv;
      rec.stain_loss *= inv;
      rec.total_loss *= inv;
    }
    require_finite_params(model.params(), epoch);
    rec.val = evaluate_segmentation(model, image_ptrs(data.val), mask_ptrs(data.val), tc.eval_batch);
    rec.seconds = seconds_since(t_epoch);
    report.epochs.push_back(rec);

    if (report.best_epoch == 0 || rec.val.dice > report.best_val_dice) {
      report.best_epoch = epoch;
      report.best_val_dice = rec.val.dice;
      save_checkpoint(best_dir, model.params(), nullptr,
                      {report.config_hash, {{"kind", "best"},
                        {"seed", seed},
                        {"epoch", epoch},
                        {"val_dice", rec.val.dice},
                        {"config", to_json(cfg)}}});
    }
    json history = json::array();
    for (const auto& e : report.epochs) history.push_back(epoch_json(e));
    save_checkpoint(last_dir, model.params(), &optim,
                    {report.config_hash,
                     {{"kind", "last"},
                      {"seed", seed},
                      {"epoch", epoch},
                      {"rng", rng.state()},
                      {"history", history},
                      {"best_epoch", report.best_epoch},
                      {"best_val_dice", report.best_val_dice},
                      {"config", to_json(cfg)}}});
    if (opts.on_epoch) opts.on_epoch(rec);
  }

  const auto t_final = std::chrono::steady_clock::now();
  if (report.epochs.size() >= tc.epochs) {
    SegModel best = load_model(cfg, best_dir);
    finalize_report(report, best, data, tc.eval_batch);
  }
  // Wall time accumulated over all sessions of a resumed run.
  report.seconds = seconds_since(t_final);
  for (const auto& e : report.epochs) report.seconds += e.seconds;
  save_report(opts.out_dir, report);
  return report;
}

}  // namespace stainlab
