#pragma once

#include <filesystem>
#include <string>

#include "asdformer/data/csv.hpp"
#include "asdformer/interpret/report.hpp"
#include "json.hpp"

namespace asdformer::interpret {

namespace detail {

inline std::string community_name(std::size_t c) { return std::string(data::kCommunityNames.at(c)); }

inline nlohmann::ordered_json community_object(const CommunityValues& v) {
  nlohmann::ordered_json o = nlohmann::ordered_json::object();
  for (const auto& [c, value] : v.entries) o[community_name(c)] = value;
  return o;
}

inline CommunityValues community_values_from(const nlohmann::json& o) {
  CommunityValues v;
  for (std::size_t c = 0; c < data::kNumCommunities; ++c) {
    const auto name = community_name(c);
    if (o.contains(name)) v.entries.emplace_back(c, o.at(name).get<double>());
  }
  return v;
}

inline void require_selection(const InterpretReport& r) {
  if (r.experts.empty()) throw ContractError("report for " + r.subject_id + " has no experts");
  for (const auto& e : r.experts) {
    if (e.rois.empty()) {
      throw ContractError("report for " + r.subject_id + ": expert " + std::to_string(e.index) + " has no ROIs");
    }
  }
}

}  // namespace detail

/// Full report; numbers keep full double precision.
inline nlohmann::ordered_json report_to_json(const InterpretReport& r) {
  detail::require_selection(r);
  nlohmann::ordered_json j;
  j["subject_id"] = r.subject_id;
  j["prediction"] = {{"label", r.predicted_label}, {"prob_asd", r.prob_asd}, {"prob_hc", r.prob_hc}};
  j["gate_probs"] = r.gate_probs;
  j["experts"] = nlohmann::ordered_json::array();
  for (const auto& e : r.experts) {
    nlohmann::ordered_json rois = nlohmann::ordered_json::array();
    for (const auto& s : e.rois) {
      rois.push_back({{"roi", s.roi},
                      {"community", detail::community_name(r.roi_community.at(s.roi))},
                      {"weight", s.weight},
                      {"score", s.score}});
    }
    j["experts"].push_back({{"index", e.index}, {"k", e.k}, {"rois", std::move(rois)}});
  }
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.attention.size(); ++i) {
    nlohmann::ordered_json row;
    row["roi"] = r.attention[i].roi;
    if (r.attention[i].head) row["head"] = *r.attention[i].head;
    row["by_community"] = detail::community_object(r.attention_by_community.at(i));
    rows.push_back(std::move(row));
  }
  j["attention"] = {{"mode", to_string(r.mode)}, {"layer", r.layer}, {"rows", std::move(rows)}};
  nlohmann::ordered_json rollup = nlohmann::ordered_json::object();
  for (const auto& row : r.rollup) rollup[detail::community_name(row.source)] = detail::community_object(row.targets);
  j["rollup"] = std::move(rollup);
  return j;
}

/// Inverse of report_to_json. Full attention rows are not serialised, so
/// `attention[i].values` comes back empty.
inline InterpretReport report_from_json(const nlohmann::json& j) {
  try {
    InterpretReport r;
    r.subject_id = j.at("subject_id").get<std::string>();
    const auto& p = j.at("prediction");
    r.predicted_label = p.at("label").get<int>();
    r.prob_asd = p.at("prob_asd").get<double>();
    r.prob_hc = p.at("prob_hc").get<double>();
    r.gate_probs = j.at("gate_probs").get<std::vector<double>>();
    for (const auto& e : j.at("experts")) {
      ExpertScores s{e.at("index").get<std::size_t>(), e.at("k").get<std::size_t>(), {}};
      for (const auto& roi : e.at("rois")) {
        const auto idx = roi.at("roi").get<std::size_t>();
        if (r.roi_community.size() <= idx) r.roi_community.resize(idx + 1, data::kNumCommunities);
        r.roi_community[idx] = data::community_index(roi.at("community").get<std::string>());
        s.rois.push_back({idx, roi.at("weight").get<double>(), roi.at("score").get<double>()});
      }
      r.experts.push_back(std::move(s));
    }
    const auto& a = j.at("attention");
    r.mode = head_mode_from_string(a.at("mode").get<std::string>());
    r.layer = a.at("layer").get<std::size_t>();
    for (const auto& row : a.at("rows")) {
      AttentionRow ar;
      ar.roi = row.at("roi").get<std::size_t>();
      if (row.contains("head")) ar.head = row.at("head").get<std::size_t>();
      r.attention.push_back(std::move(ar));
      r.attention_by_community.push_back(detail::community_values_from(row.at("by_community")));
    }
    for (std::size_t c = 0; c < data::kNumCommunities; ++c) {
      const auto name = detail::community_name(c);
      if (j.at("rollup").contains(name)) r.rollup.push_back({c, detail::community_values_from(j.at("rollup").at(name))});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

/// roi_scores.csv: expert,roi_index,community,weight,score (6 decimals).
inline std::string roi_scores_csv(const InterpretReport& r) {
  detail::require_selection(r);
  std::string out = "expert,roi_index,community,weight,score\n";
  for (const auto& e : r.experts) {
    for (const auto& s : e.rois) {
      out += std::to_string(e.index) + ',' + std::to_string(s.roi) + ',' +
             detail::community_name(r.roi_community.at(s.roi)) + ',' + data::format_fixed(s.weight) + ',' +
             data::format_fixed(s.score) + '\n';
    }
  }
  return out;
}

/// attention.csv: roi_index,target_community,mean_attention (6 decimals);
/// per-head reports add a head column after roi_index.
inline std::string attention_csv(const InterpretReport& r) {
  const bool per_head = r.mode == HeadMode::kPerHead;
  std::string out = per_head ? "roi_index,head,target_community,mean_attention\n"
                             : "roi_index,target_community,mean_attention\n";
  for (std::size_t i = 0; i < r.attention.size(); ++i) {
    const auto& row = r.attention[i];
    const std::string prefix =
        std::to_string(row.roi) + ',' + (per_head ? std::to_string(row.head.value_or(0)) + ',' : std::string{});
    for (const auto& [c, v] : r.attention_by_community.at(i).entries) {
      out += prefix + detail::community_name(c) + ',' + data::format_fixed(v) + '\n';
    }
  }
  return out;
}

enum class ReportFormat { kJson, kCsv, kBoth };

inline ReportFormat report_format_from_string(const std::string& s) {
  if (s == "json") return ReportFormat::kJson;
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "both") return ReportFormat::kBoth;
  throw ArgumentError("unknown report format '" + s + "' (expected json, csv or both)");
}

/// Writes report.json and/or roi_scores.csv + attention.csv into `dir`.
inline void emit_report(const InterpretReport& r, const std::filesystem::path& dir, ReportFormat format) {
  detail::require_selection(r);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  if (format != ReportFormat::kCsv) data::write_text(dir / "report.json", report_to_json(r).dump(2) + "\n");
  if (format != ReportFormat::kJson) {
    data::write_text(dir / "roi_scores.csv", roi_scores_csv(r));
    data::write_text(dir / "attention.csv", attention_csv(r));
  }
}

}  // namespace asdformer::interpret
