#include "stainlab/experiments.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <thread>

#include "stainlab/attention.hpp"
#include "stainlab/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace stainlab {

std::size_t thread_budget() {
  const char* env = std::getenv("STAINLAB_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) fail(ErrorCode::ConfigInvalid, std::string("STAINLAB_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

void run_parallel(const std::vector<std::function<void()>>& tasks, std::size_t threads) {
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        tasks[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::min(std::max<std::size_t>(threads, 1), tasks.size());
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

fs::path run_dir(const fs::path& root, const ExperimentConfig& cfg, const DatasetSplits& data, std::uint64_t seed) {
  return root / (config_hash(cfg) + "-" + data.fingerprint.substr(0, 8)) / ("seed-" + std::to_string(seed));
}

RunReport cached_run(const ExperimentConfig& cfg, std::uint64_t seed, const DatasetSplits& data, const fs::path& root,
                     bool force) {
  const fs::path dir = run_dir(root, cfg, data, seed);
  if (force) fs::remove_all(dir);
  const fs::path report_path = dir / "report.json";
  if (fs::exists(report_path)) {
    std::ifstream in(report_path);
    const json j = json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.contains("final") && j.value("config_hash", "") == config_hash(cfg) &&
        j.value("seed", ~std::uint64_t{0}) == seed) {
      return run_report_from_json(j);
    }
  }
  TrainOptions opts;
  opts.out_dir = dir;
  opts.resume = true;
  return train_run(cfg, seed, data, opts);
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

json evaluate_checkpoints(const std::vector<fs::path>& checkpoints, const DatasetSplits& data, std::size_t batch) {
  if (checkpoints.empty()) fail(ErrorCode::EmptySet, "no checkpoints to evaluate");
  const char* domains[] = {"train", "val", "test_source", "test_shifted"};
  const char* metrics[] = {"dice", "precision", "recall"};
  std::map<std::string, std::map<std::string, std::vector<double>>> collected;
  json runs = json::array();
  for (const auto& ckpt : checkpoints) {
    auto [cfg, model] = load_trained(ckpt);
    const DomainScores s = score_domains(model, data, batch);
    const SegMetrics* per[] = {&s.train, &s.val, &s.test_source, &s.test_shifted};
    json row = {{"checkpoint", ckpt.string()}, {"variant", to_string(cfg.model.variant)}, {"config_hash", config_hash(cfg)}};
    for (std::size_t d = 0; d < 4; ++d) {
      const double vals[] = {per[d]->dice, per[d]->precision, per[d]->recall};
      for (std::size_t m = 0; m < 3; ++m) {
        row[domains[d]][metrics[m]] = vals[m];
        collected[domains[d]][metrics[m]].push_back(vals[m]);
      }
      row[domains[d]]["count"] = per[d]->count;
    }
    runs.push_back(row);
  }
  json summary;
  for (const char* d : domains)
    for (const char* m : metrics) {
      const MeanStd ms = mean_std(collected[d][m]);
      summary[d][m] = {{"mean", ms.mean}, {"std", ms.std}};
    }
  return {{"checkpoints", runs}, {"summary", summary}};
}

AblationAxis ablation_axis_from_string(const std::string& s) {
  if (s == "stage") return AblationAxis::Stage;
  if (s == "downsample") return AblationAxis::Downsample;
  if (s == "ca_onoff") return AblationAxis::CaOnOff;
  fail(ErrorCode::ConfigInvalid, "unknown ablation axis '" + s + "' (stage, downsample, ca_onoff)");
}

const char* to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::Stage: return "stage";
    case AblationAxis::Downsample: return "downsample";
    case AblationAxis::CaOnOff: return "ca_onoff";
  }
  return "?";
}

std::vector<std::pair<std::string, ExperimentConfig>> ablation_rows(const ExperimentConfig& base, AblationAxis axis) {
  std::vector<std::pair<std::string, ExperimentConfig>> rows;
  auto with = [&](Variant v) {
    ExperimentConfig c = base;
    c.model.variant = v;
    return c;
  };
  switch (axis) {
    case AblationAxis::Stage:
      rows.emplace_back("baseline", with(Variant::Baseline));
      for (std::size_t s = 1; s <= base.model.encoder_channels.size(); ++s) {
        ExperimentConfig c = with(Variant::StinvCa);
        c.model.attach_stage = s;
        rows.emplace_back("stage" + std::to_string(s), c);
      }
      break;
    case AblationAxis::Downsample:
      for (DownsampleMode m : {DownsampleMode::Max, DownsampleMode::Avg, DownsampleMode::SConv}) {
        ExperimentConfig c = with(Variant::StinvCa);
        c.model.branch.downsample_mode = m;
        rows.emplace_back(to_string(m), c);
      }
      break;
    case AblationAxis::CaOnOff:
      rows.emplace_back("STINV", with(Variant::Stinv));
      rows.emplace_back("STINV_CA", with(Variant::StinvCa));
      break;
  }
  for (auto& [label, c] : rows) validate(c);
  return rows;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& base, AblationAxis axis, const DatasetSplits& data,
                                      const fs::path& runs_root, std::size_t threads) {
  std::vector<AblationRow> rows;
  for (auto& [label, c] : ablation_rows(base, axis)) {
    rows.push_back({label, c, std::vector<RunReport>(base.seeds.size())});
  }
  std::vector<std::function<void()>> tasks;
  for (auto& row : rows)
    for (std::size_t k = 0; k < base.seeds.size(); ++k)
      tasks.push_back([&row, k, &data, &runs_root, &base] {
        row.runs[k] = cached_run(row.config, base.seeds[k], data, runs_root);
      });
  run_parallel(tasks, threads);
  return rows;
}

void write_ablation_csv(const fs::path& path, const std::vector<AblationRow>& rows) {
  if (rows.empty()) fail(ErrorCode::EmptySet, "ablation has no rows");
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << "label,variant,attach_stage,downsample";
  for (const auto& r : rows.front().runs) out << ",shifted_dice_seed" << r.seed;
  out << ",shifted_dice_mean,shifted_dice_std,source_dice_mean,source_dice_std,val_dice_mean,val_dice_std\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& row : rows) {
    const bool branch = row.config.model.variant != Variant::Baseline;
    out << row.label << ',' << to_string(row.config.model.variant) << ','
        << (branch ? std::to_string(row.config.model.attach_stage) : "") << ','
        << (branch ? to_string(row.config.model.branch.downsample_mode) : "");
    std::vector<double> shifted, source, val;
    for (const auto& r : row.runs) {
      shifted.push_back(r.final.test_shifted.dice);
      source.push_back(r.final.test_source.dice);
      val.push_back(r.final.val.dice);
      out << ',' << num(r.final.test_shifted.dice);
    }
    for (const auto* v : {&shifted, &source, &val}) {
      const MeanStd ms = mean_std(*v);
      out << ',' << num(ms.mean) << ',' << num(ms.std);
    }
    out << '\n';
  }
}

AnalysisReport analyze(SegModel& model, const ExperimentConfig& cfg, const DatasetSplits& data, std::uint64_t seed) {
  const std::size_t batch = cfg.train.eval_batch;
  AnalysisReport rep;
  rep.attach_stage = cfg.model.attach_stage;
  const auto source = image_ptrs(data.test_source);
  rep.divergence_shifted = feature_divergence_all_stages(model, source, image_ptrs(data.test_shifted), batch);
  rep.divergence_identity = feature_divergence_all_stages(model, source, source, batch);

  const std::vector<StainMatrix> stains = estimate_targets(data.test_source);
  Rng rng(seed);
  std::vector<RgbImage> augmented;
  augmented.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i)
    augmented.push_back(augment_stain_strong(*source[i], stains[i], rng, cfg.train.augment.ranges).image);
  std::vector<const RgbImage*> aug_ptrs;
  for (const auto& a : augmented) aug_ptrs.push_back(&a);
  rep.matrices = mean_matrices(model, source, aug_ptrs, cfg.model.attach_stage, cfg.model.centered_covariance, batch);
  return rep;
}

void write_analysis(const fs::path& dir, const AnalysisReport& r) {
  fs::create_directories(dir);
  const std::size_t c = r.matrices.channels;
  write_matrix_csv(dir / "covariance.csv", r.matrices.covariance, c);
  write_matrix_csv(dir / "variance.csv", r.matrices.variance, c);
  write_matrix_heatmap(dir / "covariance.png", r.matrices.covariance, c);
  write_matrix_heatmap(dir / "variance.png", r.matrices.variance, c);
  json stages = json::array();
  for (std::size_t s = 0; s < r.divergence_shifted.size(); ++s)
    stages.push_back({{"stage", s + 1}, {"test_shifted", r.divergence_shifted[s]}, {"identity", r.divergence_identity[s]}});
  const json j = {{"attach_stage", r.attach_stage},
                  {"stages", stages},
                  {"matrices",
                   {{"channels", c},
                    {"covariance_csv", "covariance.csv"},
                    {"variance_csv", "variance.csv"},
                    {"covariance_png", "covariance.png"},
                    {"variance_png", "variance.png"}}}};
  std::ofstream out(dir / "analysis.json");
  if (!out) fail(ErrorCode::IoError, "cannot write " + (dir / "analysis.json").string());
  out << j.dump(2) << '\n';
}

}  // namespace stainlab
