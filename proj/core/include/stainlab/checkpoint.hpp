#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "stainlab/optim.hpp"
#include "stainlab/params.hpp"

namespace stainlab {

/// On-disk layout:
///   <dir>/manifest.json   names, shapes, dtypes, blob files, optimizer keys,
///                         config hash and free-form metadata
///   <dir>/tensors/NNNN.f32  raw little-endian float32, one per tensor
///
/// Optimizer moments are stored as tensors named "adamw.m/<param>" and
/// "adamw.v/<param>". Values round-trip bit-exactly.
struct CheckpointMeta {
  std::string config_hash;
  nlohmann::json extra = nlohmann::json::object();
};

/// Writes into a sibling temporary directory and renames it over `dir`, so an
/// interrupted save never leaves a half-written checkpoint in place.
void save_checkpoint(const std::filesystem::path& dir, const ParamStore& params,
                     const AdamW* optimizer, const CheckpointMeta& meta);

/// Loads into an already-built store: every stored parameter must exist with
/// the same shape, and every store entry must be present in the checkpoint.
CheckpointMeta load_checkpoint(const std::filesystem::path& dir, ParamStore& params,
                               AdamW* optimizer);

/// Manifest only; for inspecting config hashes and metadata.
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& dir);

}  // namespace stainlab
