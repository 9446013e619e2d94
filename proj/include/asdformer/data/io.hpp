#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "asdformer/data/csv.hpp"
#include "asdformer/data/dataset.hpp"
#include "asdformer/data/pearson.hpp"
#include "json.hpp"

namespace asdformer::data {

inline constexpr int kManifestFormatVersion = 1;
inline constexpr double kSymmetryTolerance = 1e-6;

inline CommunityMap load_communities(const std::filesystem::path& path, std::size_t n_rois) {
  const auto lines = read_lines(path);
  if (lines.size() != n_rois) {
    throw DataError(path.filename().string() + ": expected " + std::to_string(n_rois) + " lines, got " +
                    std::to_string(lines.size()));
  }
  CommunityMap map;
  map.assignment.assign(n_rois, kNumCommunities);
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const std::string where = path.filename().string() + " line " + std::to_string(r + 1);
    const auto comma = lines[r].find(',');
    if (comma == std::string::npos) throw DataError(where + ": expected roi_index,community_name");
    const double idx = parse_double(std::string_view(lines[r]).substr(0, comma), where);
    if (idx < 0 || idx != std::floor(idx) || idx >= static_cast<double>(n_rois)) {
      throw DataError(where + ": ROI index out of range");
    }
    const auto roi = static_cast<std::size_t>(idx);
    if (map.assignment[roi] != kNumCommunities) throw DataError(where + ": ROI " + std::to_string(roi) + " listed twice");
    map.assignment[roi] = community_index(trim(std::string_view(lines[r]).substr(comma + 1)));
  }
  return map;
}

/// Reads an FC matrix, symmetrising small asymmetries and rejecting the rest.
inline Tensor load_fc_csv(const std::filesystem::path& path, std::size_t n, const std::string& id) {
  const auto rows = read_numeric_csv(path);
  if (rows.size() != n || rows.front().size() != n) {
    throw DataError("subject " + id + ": FC file has " + std::to_string(rows.size()) + "x" +
                    std::to_string(rows.empty() ? 0 : rows.front().size()) + " entries, expected " +
                    std::to_string(n) + "x" + std::to_string(n));
  }
  std::vector<double> m(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double a = rows[i][j], b = rows[j][i];
      if (!std::isfinite(a)) throw DataError("subject " + id + ": non-finite FC entry");
      if (std::abs(a) > 1.0 + 1e-9) {
        throw DataError("subject " + id + ": FC entry (" + std::to_string(i) + ", " + std::to_string(j) +
                        ") = " + format_double(a) + " outside [-1, 1]");
      }
      if (std::abs(a - b) > kSymmetryTolerance) {
        throw DataError("subject " + id + ": FC asymmetry " + format_double(std::abs(a - b)) + " at (" +
                        std::to_string(i) + ", " + std::to_string(j) + ") exceeds 1e-6");
      }
      m[i * n + j] = i == j ? a : std::clamp(0.5 * (a + b), -1.0, 1.0);
    }
    if (std::abs(m[i * n + i] - 1.0) > kSymmetryTolerance) {
      throw DataError("subject " + id + ": FC diagonal entry " + std::to_string(i) + " is not 1");
    }
    m[i * n + i] = 1.0;
  }
  return Tensor::from({n, n}, std::move(m));
}

inline Tensor load_timeseries_fc(const std::filesystem::path& path, std::size_t n, const std::string& id) {
  const auto rows = read_numeric_csv(path);
  if (rows.empty() || rows.front().size() != n) {
    throw DataError("subject " + id + ": time series must have " + std::to_string(n) + " columns");
  }
  std::vector<double> v;
  for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
  try {
    return pearson_fc(Tensor::from({rows.size(), n}, std::move(v)));
  } catch (const DataError& e) {
    throw DataError("subject " + id + ": " + e.what());
  }
}

inline ConnectomeDataset load_dataset(const std::filesystem::path& manifest_path) {
  const std::string text = read_text(manifest_path);
  const auto base = manifest_path.parent_path();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  ConnectomeDataset ds;
  try {
    if (j.at("format_version").get<int>() != kManifestFormatVersion) {
      throw DataError("unsupported manifest format_version " + j.at("format_version").dump());
    }
    const auto n = j.at("n_rois").get<long long>();
    if (n < 1) throw DataError("n_rois must be positive");
    ds.n_rois = static_cast<std::size_t>(n);
    ds.communities = load_communities(base / j.at("community_file").get<std::string>(), ds.n_rois);
    const auto& subjects = j.at("subjects");
    if (!subjects.is_array() || subjects.empty()) throw DataError("dataset has no subjects");
    std::set<std::string> seen;
    for (const auto& s : subjects) {
      Subject subject;
      subject.id = s.at("id").get<std::string>();
      if (subject.id.empty()) throw DataError("subject with empty id");
      if (!seen.insert(subject.id).second) throw DataError("duplicate subject id " + subject.id);
      const auto& label = s.at("label");
      if (!label.is_number_integer() || (label.get<long long>() != 0 && label.get<long long>() != 1)) {
        throw DataError("subject " + subject.id + ": invalid label " + label.dump());
      }
      subject.label = label.get<int>();
      const bool has_fc = s.contains("fc_csv"), has_ts = s.contains("ts_csv");
      if (has_fc == has_ts) throw DataError("subject " + subject.id + ": give exactly one of fc_csv, ts_csv");
      subject.fc = has_fc ? load_fc_csv(base / s.at("fc_csv").get<std::string>(), ds.n_rois, subject.id)
                          : load_timeseries_fc(base / s.at("ts_csv").get<std::string>(), ds.n_rois, subject.id);
      ds.subjects.push_back(std::move(subject));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

/// Writes manifest.json, communities.csv and fc/<id>.csv under `dir`; returns
/// the manifest path. Values are written in shortest round-trip form.
inline std::filesystem::path save_dataset(const ConnectomeDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  for (const auto& s : ds.subjects) {
    const bool ok = std::all_of(s.id.begin(), s.id.end(), [](char c) {
      return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    });
    if (!ok || s.id.front() == '.') throw ArgumentError("subject id '" + s.id + "' is not usable as a file name");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir / "fc", ec);
  if (ec) throw IoError("cannot create " + (dir / "fc").string() + ": " + ec.message());

  std::string communities;
  for (std::size_t i = 0; i < ds.n_rois; ++i) {
    communities += std::to_string(i) + "," + std::string(ds.communities.name_of(i)) + "\n";
  }
  write_text(dir / "communities.csv", communities);

  nlohmann::ordered_json manifest;
  manifest["format_version"] = kManifestFormatVersion;
  manifest["n_rois"] = ds.n_rois;
  manifest["community_file"] = "communities.csv";
  manifest["subjects"] = nlohmann::ordered_json::array();
  const std::size_t n = ds.n_rois;
  for (const auto& s : ds.subjects) {
    std::string text;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j) text += ',';
        text += format_double(s.fc[i * n + j]);
      }
      text += '\n';
    }
    const std::string rel = "fc/" + s.id + ".csv";
    write_text(dir / rel, text);
    manifest["subjects"].push_back({{"id", s.id}, {"label", s.label}, {"fc_csv", rel}});
  }
  const auto path = dir / "manifest.json";
  write_text(path, manifest.dump(2) + "\n");
  return path;
}

}  // namespace asdformer::data
