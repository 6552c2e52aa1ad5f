#pragma once

// Cloud container, version 1 (all integers and floats little-endian):
//
//   offset  size  field
//   0       8     magic "MFWGFCL1"
//   8       4     uint32 version (= 1)
//   12      4     uint32 flags (bit 0: weights column present; always set)
//   16      8     uint64 B (particles)
//   24      8     uint64 p (dimension)
//   32      8*B*p p columns, column j holds coordinate j of particles 0..B-1
//   ...     8*B   weights column
//
// CSV form: header theta_0,...,theta_{p-1},weight; one particle per row;
// values printed with 17 significant digits.

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mfwgf/core/error.hpp"
#include "mfwgf/particle_cloud.hpp"

namespace mfwgf {

static_assert(std::endian::native == std::endian::little, "cloud container assumes a little-endian host");

inline constexpr char kCloudMagic[8] = {'M', 'F', 'W', 'G', 'F', 'C', 'L', '1'};

inline std::string encode_cloud(const ParticleCloud& cloud) {
  const std::uint64_t B = cloud.size(), p = cloud.dim();
  const std::uint32_t version = 1, flags = 1;
  std::string out;
  out.reserve(32 + 8 * B * (p + 1));
  out.append(kCloudMagic, 8);
  auto put = [&out](const void* src, std::size_t n) { out.append(static_cast<const char*>(src), n); };
  put(&version, 4);
  put(&flags, 4);
  put(&B, 8);
  put(&p, 8);
  for (std::uint64_t j = 0; j < p; ++j)
    for (std::uint64_t b = 0; b < B; ++b) {
      const double v = cloud.data()[b * p + j];
      put(&v, 8);
    }
  for (std::uint64_t b = 0; b < B; ++b) {
    const double w = cloud.weight(b);
    put(&w, 8);
  }
  return out;
}

inline ParticleCloud decode_cloud(const std::string& bytes) {
  require(bytes.size() >= 32 && std::memcmp(bytes.data(), kCloudMagic, 8) == 0, ErrorCode::kIo,
          "cloud container: bad magic");
  std::uint32_t version = 0, flags = 0;
  std::uint64_t B = 0, p = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&flags, bytes.data() + 12, 4);
  std::memcpy(&B, bytes.data() + 16, 8);
  std::memcpy(&p, bytes.data() + 24, 8);
  require(version == 1, ErrorCode::kIo, "cloud container: unsupported version " + std::to_string(version));
  const bool has_w = (flags & 1U) != 0;
  const std::uint64_t expect = 32 + 8 * B * p + (has_w ? 8 * B : 0);
  require(bytes.size() == expect, ErrorCode::kIo, "cloud container: truncated or oversized payload");
  std::vector<double> pts(B * p), w;
  const char* cur = bytes.data() + 32;
  for (std::uint64_t j = 0; j < p; ++j)
    for (std::uint64_t b = 0; b < B; ++b, cur += 8) std::memcpy(&pts[b * p + j], cur, 8);
  if (!has_w) return ParticleCloud(p, std::move(pts));
  w.resize(B);
  for (std::uint64_t b = 0; b < B; ++b, cur += 8) std::memcpy(&w[b], cur, 8);
  return ParticleCloud(p, std::move(pts), std::move(w));
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorCode::kIo, "write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void save_cloud(const std::string& path, const ParticleCloud& cloud) { write_file(path, encode_cloud(cloud)); }
inline ParticleCloud load_cloud(const std::string& path) { return decode_cloud(read_file(path)); }

inline std::string cloud_to_csv(const ParticleCloud& cloud) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t j = 0; j < cloud.dim(); ++j) os << "theta_" << j << ',';
  os << "weight\r\n";
  for (std::size_t b = 0; b < cloud.size(); ++b) {
    for (double v : cloud.point(b)) os << v << ',';
    os << cloud.weight(b) << "\r\n";
  }
  return os.str();
}

/// Parses a numeric CSV with a header row; returns rows of doubles.
inline std::vector<std::vector<double>> parse_numeric_csv(const std::string& text, std::vector<std::string>* header) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (first) {
      first = false;
      if (header) *header = cells;
      continue;
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      // strtod rather than stod: subnormals set ERANGE but are valid values
      errno = 0;
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      require(end != c.c_str(), ErrorCode::kIo, "csv: not a number: '" + c + "'");
      require(*end == '\0', ErrorCode::kIo, "csv: trailing characters in '" + c + "'");
      require(!(errno == ERANGE && std::isinf(v)), ErrorCode::kIo, "csv: value out of range: '" + c + "'");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ParticleCloud cloud_from_csv(const std::string& text) {
  std::vector<std::string> header;
  auto rows = parse_numeric_csv(text, &header);
  require(!header.empty() && header.back() == "weight", ErrorCode::kIo, "cloud csv: last column must be weight");
  require(!rows.empty(), ErrorCode::kIo, "cloud csv: no particles");
  const std::size_t p = header.size() - 1;
  std::vector<double> pts, w;
  for (const auto& r : rows) {
    require(r.size() == p + 1, ErrorCode::kIo, "cloud csv: ragged row");
    pts.insert(pts.end(), r.begin(), r.end() - 1);
    w.push_back(r.back());
  }
  // keep already-normalized weights bit-exact; rescale anything else
  try {
    return ParticleCloud(p, pts, w);
  } catch (const Error&) {
    return ParticleCloud::with_unnormalized_weights(p, std::move(pts), std::move(w));
  }
}

/// FNV-1a 64-bit content hash, hex encoded.
inline std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace mfwgf
