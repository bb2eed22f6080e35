#include "stainlab/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "stainlab/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace stainlab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in native order and must be little-endian");

namespace {

std::string blob_name(std::size_t index) {
  std::ostringstream out;
  out << "tensors/" << std::setw(4) << std::setfill('0') << index << ".f32";
  return out.str();
}

void write_blob(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

std::vector<float> read_blob(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) fail(ErrorCode::DataMissing, "missing tensor blob " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != count * sizeof(float)) {
    fail(ErrorCode::IoError, path.string() + " holds " + std::to_string(bytes) +
                                 " bytes, expected " + std::to_string(count * sizeof(float)));
  }
  in.seekg(0);
  std::vector<float> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  return values;
}

json tensor_entry(const std::string& name, const Shape& shape, const std::string& file,
                  const char* kind) {
  return json{{"name", name}, {"shape", shape}, {"dtype", "float32"}, {"file", file},
              {"kind", kind}};
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ParamStore& params, const AdamW* optimizer,
                     const CheckpointMeta& meta) {
  const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(parent, ec);
  const fs::path tmp = parent / (dir.filename().string() + ".tmp");
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp / "tensors", ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + tmp.string() + ": " + ec.message());

  json tensors = json::array();
  std::size_t index = 0;
  for (const auto& [name, entry] : params.entries()) {
    const std::string file = blob_name(index++);
    write_blob(tmp / file, entry.tensor.data());
    tensors.push_back(tensor_entry(name, entry.tensor.shape(), file,
                                   entry.trainable ? "parameter" : "buffer"));
  }
  json opt = nullptr;
  if (optimizer) {
    json keys = json::array();
    for (const auto& [name, mom] : optimizer->state()) {
      const Shape shape{mom.m.size()};
      for (const auto& [prefix, values] :
           {std::pair{"adamw.m/", &mom.m}, std::pair{"adamw.v/", &mom.v}}) {
        const std::string key = std::string(prefix) + name;
        const std::string file = blob_name(index++);
        write_blob(tmp / file, *values);
        tensors.push_back(tensor_entry(key, shape, file, "optimizer"));
        keys.push_back(key);
      }
    }
    const auto& c = optimizer->config();
    opt = json{{"type", "adamw"},       {"steps", optimizer->steps()},
               {"lr", c.lr},            {"weight_decay", c.weight_decay},
               {"beta1", c.beta1},      {"beta2", c.beta2},
               {"eps", c.eps},          {"state_keys", keys}};
  }
  json manifest{{"format", "stainlab-checkpoint"},
                {"version", 1},
                {"byte_order", "little"},
                {"config_hash", meta.config_hash},
                {"tensors", tensors},
                {"optimizer", opt},
                {"meta", meta.extra}};
  {
    std::ofstream out(tmp / "manifest.json");
    if (!out) fail(ErrorCode::IoError, "cannot write manifest in " + tmp.string());
    out << manifest.dump(2) << "\n";
  }
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot move checkpoint into " + dir.string() + ": " + ec.message());
}

json read_checkpoint_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorCode::DataMissing, "no manifest.json in " + dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, "malformed manifest in " + dir.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "stainlab-checkpoint") {
    fail(ErrorCode::IoError, dir.string() + " is not a stainlab checkpoint");
  }
  return manifest;
}

CheckpointMeta load_checkpoint(const fs::path& dir, ParamStore& params, AdamW* optimizer) {
  const json manifest = read_checkpoint_manifest(dir);
  std::map<std::string, std::vector<float>> optimizer_blobs;
  std::size_t restored = 0;
  for (const auto& t : manifest.at("tensors")) {
    const std::string name = t.at("name");
    const Shape shape = t.at("shape").get<Shape>();
    std::vector<float> values = read_blob(dir / t.at("file").get<std::string>(), shape_numel(shape));
    if (t.at("kind") == "optimizer") {
      optimizer_blobs[name] = std::move(values);
      continue;
    }
    if (!params.contains(name)) {
      fail(ErrorCode::ConfigInvalid, "checkpoint tensor '" + name + "' not present in model");
    }
    Tensor& dst = params.at(name);
    if (dst.shape() != shape) {
      fail(ErrorCode::ShapeMismatch, "checkpoint tensor '" + name + "' has shape " +
                                         shape_str(shape) + ", model expects " +
                                         shape_str(dst.shape()));
    }
    std::copy(values.begin(), values.end(), dst.data().begin());
    ++restored;
  }
  if (restored != params.entries().size()) {
    fail(ErrorCode::ConfigInvalid, "checkpoint covers " + std::to_string(restored) + " of " +
                                       std::to_string(params.entries().size()) + " tensors");
  }
  if (optimizer && !manifest.at("optimizer").is_null()) {
    const json& opt = manifest.at("optimizer");
    optimizer->state().clear();
    for (const auto& name : params.trainable_names()) {
      auto m = optimizer_blobs.find("adamw.m/" + name);
      auto v = optimizer_blobs.find("adamw.v/" + name);
      if (m == optimizer_blobs.end() || v == optimizer_blobs.end()) continue;
      optimizer->state()[name] = {std::move(m->second), std::move(v->second)};
    }
    optimizer->set_steps(opt.at("steps").get<std::int64_t>());
  }
  CheckpointMeta meta;
  meta.config_hash = manifest.value("config_hash", "");
  meta.extra = manifest.value("meta", json::object());
  return meta;
}

}  // namespace stainlab
