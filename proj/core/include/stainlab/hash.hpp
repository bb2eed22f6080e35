#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace stainlab {

std::uint64_t fnv1a64(std::string_view bytes);
/// 16 hex digits of fnv1a64 over the compact dump of `j` (object keys sorted).
std::string json_hash(const nlohmann::json& j);

}  // namespace stainlab
