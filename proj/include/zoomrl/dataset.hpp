// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dataset records and their line-delimited JSON form.

#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zoomrl/error.hpp"
#include "zoomrl/toolbox.hpp"
#include "zoomrl/util.hpp"

namespace zoomrl {

enum class Source { VisualSearch, Chart, Reasoning };

inline constexpr Source kAllSources[] = {Source::VisualSearch, Source::Chart, Source::Reasoning};

constexpr std::string_view to_string(Source s) noexcept {
  switch (s) {
    case Source::VisualSearch: return "visual_search";
    case Source::Chart: return "chart";
    case Source::Reasoning: return "reasoning";
  }
  return "unknown";
}

inline Source parse_source(std::string_view s) {
  const auto l = to_lower(s);
  if (l == "visual_search" || l == "visualsearch") return Source::VisualSearch;
  if (l == "chart") return Source::Chart;
  if (l == "reasoning") return Source::Reasoning;
  throw Error(Errc::DataError, "unknown source \"" + std::string(s) + "\"");
}

struct SampleRecord {
  std::string id;
  std::string image_path;
  std::string question;
  std::string answer;
  std::optional<std::vector<BBox>> gt_bboxes;
  Source source = Source::VisualSearch;
  std::optional<std::string> reference;  // independent label for rule-based verification
};

inline ordered_json to_json(const SampleRecord& s) {
  ordered_json j;
  j["id"] = s.id;
  j["image_path"] = s.image_path;
  j["question"] = s.question;
  j["answer"] = s.answer;
  if (s.gt_bboxes) {
    j["gt_bboxes"] = ordered_json::array();
    for (const auto& b : *s.gt_bboxes) j["gt_bboxes"].push_back(ordered_json::array({b.x1, b.y1, b.x2, b.y2}));
  }
  j["source"] = std::string(to_string(s.source));
  if (s.reference) j["reference"] = *s.reference;
  return j;
}

inline SampleRecord sample_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::DataError, "record must be a JSON object");
  auto str = [&](const char* key, bool required) -> std::string {
    auto it = j.find(key);
    if (it == j.end()) {
      if (required) throw Error(Errc::DataError, std::string("missing field \"") + key + "\"");
      return {};
    }
    if (!it->is_string()) throw Error(Errc::DataError, std::string("field \"") + key + "\" must be a string");
    return it->get<std::string>();
  };
  SampleRecord s;
  s.id = str("id", true);
  s.image_path = str("image_path", false);
  s.question = str("question", true);
  s.answer = str("answer", true);
  if (trim(s.answer).empty()) throw Error(Errc::DataError, "sample " + s.id + " has an empty answer");
  if (auto it = j.find("source"); it != j.end()) s.source = parse_source(it->get<std::string>());
  if (auto it = j.find("gt_bboxes"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw Error(Errc::DataError, "gt_bboxes must be a list of boxes");
    std::vector<BBox> boxes;
    try {
      for (const auto& b : *it) boxes.push_back(b.get<BBox>());
    } catch (const Error& e) {
      throw Error(Errc::DataError, "sample " + s.id + ": " + e.what());
    }
    s.gt_bboxes = std::move(boxes);
  }
  if (j.contains("reference")) s.reference = str("reference", false);
  return s;
}

inline std::vector<SampleRecord> read_samples(std::istream& is) {
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::DataError, "line " + std::to_string(lineno) + ": invalid JSON");
    try {
      out.push_back(sample_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::DataError, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<SampleRecord> load_samples(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::DataError, "cannot open dataset " + path);
  return read_samples(is);
}

inline void write_samples(const std::vector<SampleRecord>& samples, std::ostream& os) {
  for (const auto& s : samples) os << to_json(s).dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
}

}  // namespace zoomrl
