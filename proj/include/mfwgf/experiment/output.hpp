#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfwgf/cloud_io.hpp"
#include "mfwgf/core/error.hpp"
#include "mfwgf/experiment/config.hpp"

namespace mfwgf::cli {

/// Round-trip decimal; NaN becomes an empty field.
inline std::string num(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json num_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

/// RFC-4180 rows with CRLF terminators.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) { row(header); }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os_ << ',';
      os_ << escape(cells[i]);
    }
    os_ << "\r\n";
  }

  [[nodiscard]] std::string str() const { return os_.str(); }

  static std::string escape(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  }

 private:
  std::ostringstream os_;
};

/// Output directory that refuses to reuse a non-empty location unless forced,
/// and records a content hash for every file it writes.
class OutputDir {
 public:
  OutputDir(std::filesystem::path dir, bool force) : dir_(std::move(dir)) {
    namespace fs = std::filesystem;
    if (fs::exists(dir_)) {
      require(fs::is_directory(dir_), ErrorCode::kIo, "output path '" + dir_.string() + "' is not a directory");
      require(force || fs::is_empty(dir_), ErrorCode::kIo,
              "output directory '" + dir_.string() + "' is not empty; pass --force to overwrite");
    }
    std::error_code ec;
    fs::create_directories(dir_, ec);
    require(!ec, ErrorCode::kIo, "cannot create output directory '" + dir_.string() + "': " + ec.message());
  }

  [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }
  [[nodiscard]] std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& bytes) {
    const auto full = dir_ / name;
    if (full.has_parent_path()) std::filesystem::create_directories(full.parent_path());
    write_file(full.string(), bytes);
    hashes_[name] = content_hash(bytes);
  }

  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  [[nodiscard]] json hashes() const { return json(hashes_); }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> hashes_;
};

inline std::string output_dir_of(const json& cfg) {
  const auto dir = get_or<std::string>(sub(cfg, "output"), "dir", "", "output");
  require(!dir.empty(), ErrorCode::kConfig, "no output directory: set output.dir or pass --out");
  return dir;
}

inline json make_manifest(const std::string& command, const json& cfg, const Seeds& seeds, const json& inputs,
                          const json& outputs, const std::vector<std::string>& warnings) {
  return {{"artifact", kArtifactName}, {"version", kArtifactVersion}, {"command", command}, {"config", cfg},
          {"seeds", seeds.to_json()},   {"inputs", inputs},                {"outputs", outputs},
          {"warnings", warnings}};
}

/// Directory-safe label.
inline std::string safe_label(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return out.empty() ? "run" : out;
}

}  // namespace mfwgf::cli
