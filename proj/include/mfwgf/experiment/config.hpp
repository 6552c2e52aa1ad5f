#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfwgf/cloud_io.hpp"
#include "mfwgf/core/error.hpp"
#include "mfwgf/core/rng.hpp"

namespace mfwgf::cli {

using nlohmann::json;

inline constexpr const char* kArtifactName = "mfwgf";
inline constexpr const char* kArtifactVersion = "1.0.0";

inline std::string qualified(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

inline void check_keys(const json& j, const std::string& where, std::initializer_list<std::string_view> allowed) {
  require(j.is_object(), ErrorCode::kConfig, (where.empty() ? std::string("config") : where) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (auto a : allowed) ok = ok || it.key() == a;
    require(ok, ErrorCode::kConfig, "unknown key '" + qualified(where, it.key()) + "'");
  }
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kConfig, qualified(where, key) + ": value " + j.at(key).dump() + " has the wrong type");
  }
}

template <class T>
T get_required(const json& j, const std::string& key, const std::string& where) {
  require(j.is_object() && j.contains(key) && !j.at(key).is_null(), ErrorCode::kConfig,
          "missing required key '" + qualified(where, key) + "'");
  return get_or<T>(j, key, T{}, where);
}

/// Child object, or an empty object when absent.
inline const json& sub(const json& j, const std::string& key) {
  static const json empty = json::object();
  return j.is_object() && j.contains(key) && !j.at(key).is_null() ? j.at(key) : empty;
}

inline std::vector<std::string> split_path(const std::string& dotted) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : dotted) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  for (const auto& p : parts) require(!p.empty(), ErrorCode::kConfig, "malformed parameter path '" + dotted + "'");
  return parts;
}

inline void set_path(json& j, const std::string& dotted, const json& value) {
  json* cur = &j;
  const auto parts = split_path(dotted);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*cur)[parts[i]];
    if (next.is_null()) next = json::object();
    require(next.is_object(), ErrorCode::kConfig, "parameter path '" + dotted + "' crosses a non-object value");
    cur = &next;
  }
  (*cur)[parts.back()] = value;
}

inline const json* find_path(const json& j, const std::string& dotted) {
  const json* cur = &j;
  for (const auto& p : split_path(dotted)) {
    if (!cur->is_object() || !cur->contains(p)) return nullptr;
    cur = &cur->at(p);
  }
  return cur;
}

inline void validate_top_level(const json& cfg) {
  check_keys(cfg, "",
             {"name", "description", "seed", "model", "data", "engine", "init", "metrics", "sweep", "gibbs", "flowlab",
              "check", "output"});
  if (cfg.contains("output")) check_keys(cfg.at("output"), "output", {"dir", "save_snapshots"});
}

inline json load_config(const std::string& path) {
  json cfg;
  try {
    cfg = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfig, "config " + path + ": " + e.what());
  }
  validate_top_level(cfg);
  return cfg;
}

/// Replaces the root seed and drops per-block seeds so everything re-derives from it.
inline void apply_seed(json& cfg, std::uint64_t seed) {
  cfg["seed"] = seed;
  for (const char* b : {"engine", "init", "gibbs"})
    if (cfg.contains(b) && cfg[b].is_object()) cfg[b].erase("seed");
  if (cfg.contains("data") && cfg["data"].is_object() && cfg["data"].contains("generate") &&
      cfg["data"]["generate"].is_object())
    cfg["data"]["generate"].erase("seed");
}

struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

inline json apply_overrides(json cfg, const Overrides& o) {
  if (o.seed) apply_seed(cfg, *o.seed);
  if (o.threads) {
    require(*o.threads >= 1, ErrorCode::kConfig, "--threads must be >= 1");
    cfg["engine"]["threads"] = *o.threads;
    if (cfg.contains("flowlab")) cfg["flowlab"]["threads"] = *o.threads;
  }
  if (o.out) cfg["output"]["dir"] = *o.out;
  return cfg;
}

struct Seeds {
  std::uint64_t root = 0;
  std::uint64_t data = 0;
  std::uint64_t engine = 0;
  std::uint64_t init = 0;
  std::uint64_t gibbs = 0;

  [[nodiscard]] json to_json() const {
    return {{"root", root}, {"data", data}, {"engine", engine}, {"init", init}, {"gibbs", gibbs}};
  }
};

inline Seeds resolve_seeds(const json& cfg) {
  Seeds s;
  s.root = get_or<std::uint64_t>(cfg, "seed", 0, "");
  s.data = get_or<std::uint64_t>(sub(sub(cfg, "data"), "generate"), "seed", derive_seed(s.root, 0xDA7A),
                                 "data.generate");
  s.engine = get_or<std::uint64_t>(sub(cfg, "engine"), "seed", derive_seed(s.root, 0xE691), "engine");
  s.init = get_or<std::uint64_t>(sub(cfg, "init"), "seed", derive_seed(s.root, 0x1417), "init");
  s.gibbs = get_or<std::uint64_t>(sub(cfg, "gibbs"), "seed", derive_seed(s.root, 0x6B55), "gibbs");
  return s;
}

}  // namespace mfwgf::cli
