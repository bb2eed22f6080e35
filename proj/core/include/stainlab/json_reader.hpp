#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "stainlab/error.hpp"

namespace stainlab {

/// Strict reader for one JSON object: missing keys keep their defaults,
/// type errors and leftover (unknown) keys raise ConfigInvalid naming the path.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorCode::ConfigInvalid, path_ + ": expected a table/object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const nlohmann::json* raw(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    const nlohmann::json* v = raw(key);
    if (!v) return;
    try {
      out = v->get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ConfigInvalid, field(key) + ": " + e.what());
    }
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) fail(ErrorCode::ConfigInvalid, "unknown key " + field(key));
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace stainlab
