#include "stainlab/config.hpp"

#include <fstream>
#include <sstream>

#include <toml.hpp>

#include "stainlab/error.hpp"
#include "stainlab/hash.hpp"
#include "stainlab/json_reader.hpp"

using nlohmann::json;

namespace stainlab {

const char* to_string(AugKind k) {
  switch (k) {
    case AugKind::None: return "none";
    case AugKind::Light: return "light";
    case AugKind::Strong: return "strong";
    case AugKind::Hsv: return "hsv";
  }
  return "?";
}

AugKind aug_kind_from_string(const std::string& s) {
  if (s == "none") return AugKind::None;
  if (s == "light") return AugKind::Light;
  if (s == "strong") return AugKind::Strong;
  if (s == "hsv") return AugKind::Hsv;
  fail(ErrorCode::ConfigInvalid, "unknown augmentation '" + s + "' (none, light, strong, hsv)");
}

namespace {

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) fail(ErrorCode::ConfigInvalid, field + ": " + why);
}

void require_range(const std::array<double, 2>& r, const std::string& field) {
  require(r[0] <= r[1], field, "need min <= max");
}

template <typename E, typename Parse>
void get_enum(ObjectReader& r, const std::string& key, E& out, Parse parse) {
  std::string s;
  if (!r.has(key)) return;
  r.get(key, s);
  try {
    out = parse(s);
  } catch (const Error& e) {
    fail(ErrorCode::ConfigInvalid, r.field(key) + ": " + e.what());
  }
}

ShiftConfig shift_from_json(const json& j, const std::string& path) {
  ShiftConfig s;
  ObjectReader r(j, path);
  r.get("rotation_deg", s.rotation_deg);
  r.get("elementwise", s.elementwise);
  r.finish();
  return s;
}

DataConfig data_from_json(const json& j) {
  DataConfig d;
  ObjectReader r(j, "data");
  r.get("n_train", d.n_train);
  r.get("n_val", d.n_val);
  r.get("n_test", d.n_test);
  if (const auto* s = r.raw("shift")) d.shift = shift_from_json(*s, "data.shift");
  r.finish();
  return d;
}

BranchConfig branch_from_json(const json& j) {
  BranchConfig b;
  ObjectReader r(j, "model.branch");
  get_enum(r, "downsample_mode", b.downsample_mode, downsample_mode_from_string);
  r.get("target_spatial", b.target_spatial);
  r.get("embed_dim", b.embed_dim);
  r.get("dropout_p", b.dropout_p);
  r.finish();
  return b;
}

GrlConfig grl_from_json(const json& j) {
  GrlConfig g;
  ObjectReader r(j, "model.grl");
  r.get("lambda", g.lambda);
  r.get("warmup_steps", g.warmup_steps);
  r.finish();
  return g;
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  ObjectReader r(j, "model");
  get_enum(r, "variant", m.variant, variant_from_string);
  r.get("attach_stage", m.attach_stage);
  r.get("encoder_channels", m.encoder_channels);
  r.get("input_size", m.input_size);
  if (const auto* b = r.raw("branch")) m.branch = branch_from_json(*b);
  if (const auto* g = r.raw("grl")) m.grl = grl_from_json(*g);
  r.get("centered_covariance", m.centered_covariance);
  get_enum(r, "task_loss", m.task_loss, [](const std::string& s) {
    if (s == "bce") return TaskLoss::Bce;
    if (s == "dice") return TaskLoss::Dice;
    fail(ErrorCode::ConfigInvalid, "unknown task loss '" + s + "' (bce, dice)");
  });
  r.finish();
  return m;
}

AugmentConfig augment_from_json(const json& j) {
  AugmentConfig a;
  ObjectReader r(j, "train.augment");
  r.get("flips", a.flips);
  get_enum(r, "input", a.input, aug_kind_from_string);
  r.get("input_prob", a.input_prob);
  get_enum(r, "attention", a.attention, aug_kind_from_string);
  r.get("light_scale", a.ranges.light_scale);
  r.get("light_shift", a.ranges.light_shift);
  r.get("strong_factor", a.ranges.strong_factor);
  r.get("hsv_hue_shift_deg", a.hsv.hue_shift_deg);
  r.get("hsv_sat_scale", a.hsv.sat_scale);
  r.get("hsv_val_scale", a.hsv.val_scale);
  r.finish();
  return a;
}

AdamWConfig optim_from_json(const json& j) {
  AdamWConfig o;
  ObjectReader r(j, "train.optim");
  r.get("lr", o.lr);
  r.get("weight_decay", o.weight_decay);
  r.get("beta1", o.beta1);
  r.get("beta2", o.beta2);
  r.get("eps", o.eps);
  r.finish();
  return o;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  ObjectReader r(j, "train");
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  if (const auto* o = r.raw("optim")) t.optim = optim_from_json(*o);
  r.get("alpha", t.alpha);
  if (const auto* a = r.raw("augment")) t.augment = augment_from_json(*a);
  r.get("eval_batch", t.eval_batch);
  r.get("log_stain_predictions", t.log_stain_predictions);
  r.finish();
  return t;
}

json toml_node_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json out = json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_node_to_json(v);
    return out;
  }
  if (const auto* a = node.as_array()) {
    json out = json::array();
    for (const auto& v : *a) out.push_back(toml_node_to_json(v));
    return out;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  fail(ErrorCode::ConfigInvalid, "unsupported TOML value (dates and times are not used by any field)");
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  validate(cfg.synth);
  validate(cfg.model);
  require(cfg.synth.image_size == cfg.model.input_size, "model.input_size", "must equal synth.image_size");
  require(cfg.data.n_train >= 2, "data.n_train", "need at least 2 samples");
  require(cfg.data.n_val >= 1, "data.n_val", "need at least 1 sample");
  require(cfg.data.n_test >= 1, "data.n_test", "need at least 1 sample");
  for (double f : cfg.data.shift.elementwise) require(f > 0.0, "data.shift.elementwise", "factors must be positive");
  const auto& t = cfg.train;
  require(t.epochs >= 1, "train.epochs", "must be >= 1");
  require(t.batch_size >= 2, "train.batch_size", "must be >= 2 (batch normalisation)");
  require(t.batch_size <= cfg.data.n_train, "train.batch_size", "exceeds data.n_train");
  require(t.optim.lr > 0.0, "train.optim.lr", "must be positive");
  require(t.optim.weight_decay >= 0.0, "train.optim.weight_decay", "must be >= 0");
  require(t.optim.beta1 >= 0.0 && t.optim.beta1 < 1.0, "train.optim.beta1", "must lie in [0,1)");
  require(t.optim.beta2 >= 0.0 && t.optim.beta2 < 1.0, "train.optim.beta2", "must lie in [0,1)");
  require(t.optim.eps > 0.0, "train.optim.eps", "must be positive");
  require(t.alpha >= 0.0, "train.alpha", "must be >= 0");
  require(t.eval_batch >= 1, "train.eval_batch", "must be >= 1");
  require(t.augment.input_prob >= 0.0 && t.augment.input_prob <= 1.0, "train.augment.input_prob",
          "must lie in [0,1]");
  require(t.augment.attention != AugKind::None || cfg.model.variant != Variant::StinvCa, "train.augment.attention",
          "STINV_CA needs an augmentation");
  require_range(t.augment.ranges.light_scale, "train.augment.light_scale");
  require_range(t.augment.ranges.light_shift, "train.augment.light_shift");
  require_range(t.augment.ranges.strong_factor, "train.augment.strong_factor");
  require_range(t.augment.hsv.sat_scale, "train.augment.hsv_sat_scale");
  require_range(t.augment.hsv.val_scale, "train.augment.hsv_val_scale");
  require(!cfg.seeds.empty(), "seeds", "need at least one seed");
}

json to_json(const ExperimentConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  return {
      {"synth", to_json(c.synth)},
      {"data",
       {{"n_train", c.data.n_train},
        {"n_val", c.data.n_val},
        {"n_test", c.data.n_test},
        {"shift", {{"rotation_deg", c.data.shift.rotation_deg}, {"elementwise", c.data.shift.elementwise}}}}},
      {"model",
       {{"variant", to_string(m.variant)},
        {"attach_stage", m.attach_stage},
        {"encoder_channels", m.encoder_channels},
        {"input_size", m.input_size},
        {"branch",
         {{"downsample_mode", to_string(m.branch.downsample_mode)},
          {"target_spatial", m.branch.target_spatial},
          {"embed_dim", m.branch.embed_dim},
          {"dropout_p", m.branch.dropout_p}}},
        {"grl", {{"lambda", m.grl.lambda}, {"warmup_steps", m.grl.warmup_steps}}},
        {"centered_covariance", m.centered_covariance},
        {"task_loss", m.task_loss == TaskLoss::Bce ? "bce" : "dice"}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"optim",
         {{"lr", t.optim.lr},
          {"weight_decay", t.optim.weight_decay},
          {"beta1", t.optim.beta1},
          {"beta2", t.optim.beta2},
          {"eps", t.optim.eps}}},
        {"alpha", t.alpha},
        {"augment",
         {{"flips", t.augment.flips},
          {"input", to_string(t.augment.input)},
          {"input_prob", t.augment.input_prob},
          {"attention", to_string(t.augment.attention)},
          {"light_scale", t.augment.ranges.light_scale},
          {"light_shift", t.augment.ranges.light_shift},
          {"strong_factor", t.augment.ranges.strong_factor},
          {"hsv_hue_shift_deg", t.augment.hsv.hue_shift_deg},
          {"hsv_sat_scale", t.augment.hsv.sat_scale},
          {"hsv_val_scale", t.augment.hsv.val_scale}}},
        {"eval_batch", t.eval_batch},
        {"log_stain_predictions", t.log_stain_predictions}}},
      {"seeds", c.seeds},
  };
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  ObjectReader r(j, "");
  if (const auto* s = r.raw("synth")) c.synth = synth_config_from_json(*s, "synth");
  if (const auto* d = r.raw("data")) c.data = data_from_json(*d);
  if (const auto* m = r.raw("model")) c.model = model_from_json(*m);
  if (const auto* t = r.raw("train")) c.train = train_from_json(*t);
  r.get("seeds", c.seeds);
  r.finish();
  validate(c);
  return c;
}

json toml_to_json(const std::string& text, const std::string& source) {
  try {
    return toml_node_to_json(toml::parse(text, source));
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ": " << e.description();
    fail(ErrorCode::ConfigInvalid, msg.str());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigInvalid, "config file not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.extension() == ".toml") return config_from_json(toml_to_json(buf.str(), path.string()));
  try {
    return config_from_json(json::parse(buf.str()));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("seeds");
  return json_hash(j);
}

StainMatrix shift_matrix(const ExperimentConfig& cfg) {
  return shifted_stain_matrix(cfg.synth.stain_matrix, cfg.data.shift.rotation_deg, cfg.data.shift.elementwise);
}

}  // namespace stainlab
