#pragma once

// Dataset files: <stem>.csv holds one observation per row (RFC-4180, CRLF,
// 17 significant digits); <stem>.json is the sidecar with model name,
// generator config, seed and the generating labels.

#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfwgf/cloud_io.hpp"
#include "mfwgf/model.hpp"

namespace mfwgf {

/// Row codec per observation type. Specialized next to each model.
template <class Obs>
struct ObservationCodec;

/// Plain vector observation (mixture models): columns x_0..x_{d-1}.
template <>
struct ObservationCodec<std::vector<double>> {
  static std::vector<std::string> header(std::size_t d) {
    std::vector<std::string> h;
    for (std::size_t j = 0; j < d; ++j) h.push_back("x_" + std::to_string(j));
    return h;
  }
  static std::size_t dim(const std::vector<double>& x) { return x.size(); }
  static std::vector<double> to_row(const std::vector<double>& x) { return x; }
  static std::vector<double> from_row(const std::vector<double>& row) { return row; }
};

template <class Obs>
std::string dataset_to_csv(const Dataset<Obs>& data, std::size_t dim) {
  using C = ObservationCodec<Obs>;
  std::ostringstream os;
  os << std::setprecision(17);
  const auto h = C::header(dim);
  for (std::size_t j = 0; j < h.size(); ++j) os << (j ? "," : "") << h[j];
  os << "\r\n";
  for (const auto& obs : data.observations) {
    const auto row = C::to_row(obs);
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << row[j];
    os << "\r\n";
  }
  return os.str();
}

template <class Obs>
Dataset<Obs> dataset_from_csv(const std::string& text) {
  using C = ObservationCodec<Obs>;
  std::vector<std::string> header;
  auto rows = parse_numeric_csv(text, &header);
  Dataset<Obs> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].size() == header.size(), ErrorCode::kIo, "dataset csv: row " + std::to_string(i) + " is ragged");
    out.observations.push_back(C::from_row(rows[i]));
  }
  return out;
}

inline std::string dataset_sidecar(const nlohmann::json& provenance, const std::vector<int>& labels) {
  nlohmann::json j = provenance;
  j["labels"] = labels;
  return j.dump(2) + "\n";
}

template <class Obs>
void save_dataset(const std::string& stem, const Dataset<Obs>& data, std::size_t dim) {
  write_file(stem + ".csv", dataset_to_csv(data, dim));
  write_file(stem + ".json", dataset_sidecar(data.provenance, data.labels));
}

/// Loads <path> (a .csv); a sibling .json sidecar is read when present.
template <class Obs>
Dataset<Obs> load_dataset(const std::string& path) {
  auto data = dataset_from_csv<Obs>(read_file(path));
  std::filesystem::path side(path);
  side.replace_extension(".json");
  if (std::filesystem::exists(side)) {
    auto j = nlohmann::json::parse(read_file(side.string()));
    if (j.contains("labels")) {
      data.labels = j["labels"].get<std::vector<int>>();
      j.erase("labels");
    }
    data.provenance = j;
  }
  data.provenance["source_path"] = path;
  return data;
}

}  // namespace mfwgf
