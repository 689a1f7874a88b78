#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "longclip/errors.hpp"

namespace longclip::longcap {

struct CaptionRecord {
  std::string id;
  std::string image_ref;
  std::string caption;
  std::vector<std::string> inline_mentions;
  std::string abstract;
  std::map<std::string, std::string> acronym_map;  // acronym -> expansion

  void validate() const {
    if (id.empty()) throw UsageError("caption record has an empty id");
    if (caption.empty()) throw UsageError("caption record '" + id + "' has an empty caption");
    for (const auto& [a, e] : acronym_map)
      if (a.empty() || e.empty()) throw UsageError("caption record '" + id + "' has an empty acronym entry");
  }
};

enum class Label { feasible, not_feasible };

inline const char* label_name(Label l) { return l == Label::feasible ? "FEASIBLE" : "NOT_FEASIBLE"; }

struct Feature {
  std::string text;
  Label label = Label::feasible;
  std::string rationale;

  friend bool operator==(const Feature&, const Feature&) = default;
};

struct FeasibilityReport {
  std::vector<Feature> features;

  std::vector<std::string> texts(Label l) const {
    std::vector<std::string> out;
    for (const auto& f : features)
      if (f.label == l) out.push_back(f.text);
    return out;
  }
  friend bool operator==(const FeasibilityReport&, const FeasibilityReport&) = default;
};

inline nlohmann::json to_json(const CaptionRecord& r) {
  return {{"id", r.id},           {"image_ref", r.image_ref}, {"caption", r.caption}, {"inline_mentions", r.inline_mentions},
          {"abstract", r.abstract}, {"acronym_map", r.acronym_map}};
}

inline CaptionRecord caption_record_from_json(const nlohmann::json& j, const std::string& where) {
  try {
    CaptionRecord r;
    r.id = j.at("id").get<std::string>();
    r.caption = j.at("caption").get<std::string>();
    r.image_ref = j.value("image_ref", std::string());
    r.inline_mentions = j.value("inline_mentions", std::vector<std::string>());
    r.abstract = j.value("abstract", std::string());
    r.acronym_map = j.value("acronym_map", std::map<std::string, std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where, std::string("bad caption record: ") + e.what());
  }
}

// One JSON object per line with the CaptionRecord fields; ids must be unique.
inline std::vector<CaptionRecord> read_caption_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<CaptionRecord> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where, std::string("malformed record: ") + e.what());
    }
    auto r = caption_record_from_json(j, where);
    try {
      r.validate();
    } catch (const UsageError& e) {
      throw ParseError(where, e.what());
    }
    if (!ids.insert(r.id).second) throw ParseError(where, "duplicate id '" + r.id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_caption_records(const std::vector<CaptionRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

}  // namespace longclip::longcap
