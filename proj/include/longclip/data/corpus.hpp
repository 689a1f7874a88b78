#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "longclip/errors.hpp"

namespace longclip::data {

struct PairRecord {
  std::string id;
  std::vector<double> image;  // precomputed feature vector
  std::string caption;
  std::map<std::string, std::string> context;  // optional named fields

  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

// Image-caption pairs with unique ids and one shared feature dimension.
class PairedCorpus {
 public:
  PairedCorpus() = default;

  void add(PairRecord r) {
    if (r.id.empty()) throw UsageError("record id is empty");
    if (index_.count(r.id)) throw UsageError("duplicate record id '" + r.id + "'");
    if (!records_.empty() && r.image.size() != records_.front().image.size()) {
      throw UsageError("record '" + r.id + "' has " + std::to_string(r.image.size()) + " image features, expected " +
                       std::to_string(records_.front().image.size()));
    }
    index_.emplace(r.id, records_.size());
    records_.push_back(std::move(r));
  }

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const std::vector<PairRecord>& records() const noexcept { return records_; }
  const PairRecord& operator[](std::size_t i) const { return records_.at(i); }
  std::size_t image_dim() const { return records_.empty() ? 0 : records_.front().image.size(); }

  const PairRecord* find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  std::vector<std::string> captions() const {
    std::vector<std::string> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.caption);
    return out;
  }

  std::vector<std::vector<double>> images() const {
    std::vector<std::vector<double>> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.image);
    return out;
  }

  friend bool operator==(const PairedCorpus& a, const PairedCorpus& b) { return a.records_ == b.records_; }

 private:
  std::vector<PairRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline nlohmann::json to_json(const PairRecord& r) {
  nlohmann::json j{{"id", r.id}, {"image", r.image}, {"caption", r.caption}};
  if (!r.context.empty()) j["context"] = r.context;
  return j;
}

inline PairRecord record_from_json(const nlohmann::json& j, const std::string& where) {
  try {
    PairRecord r;
    r.id = j.at("id").get<std::string>();
    r.image = j.at("image").get<std::vector<double>>();
    r.caption = j.at("caption").get<std::string>();
    if (j.contains("context")) r.context = j.at("context").get<std::map<std::string, std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where, std::string("bad record: ") + e.what());
  }
}

// One JSON object per line: {"id", "image": [..], "caption", "context": {..}}.
inline void save_records(const PairedCorpus& corpus, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : corpus.records()) out << to_json(r).dump() << '\n';
}

inline PairedCorpus load_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  PairedCorpus corpus;
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
    try {
      corpus.add(record_from_json(j, where));
    } catch (const UsageError& e) {
      throw ParseError(where, e.what());
    }
  }
  return corpus;
}

}  // namespace longclip::data
