#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "longclip/data/corpus.hpp"
#include "longclip/data/tar.hpp"
#include "longclip/util/kv.hpp"

namespace longclip::data {

// Each record becomes three members sharing the record id as basename:
// <id>.features (whitespace-separated reals), <id>.txt (caption), <id>.json (context).
inline constexpr const char* kFeaturesExt = "features";
inline constexpr const char* kCaptionExt = "txt";
inline constexpr const char* kContextExt = "json";

inline std::string shard_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard-%06zu.tar", index);
  return buf;
}

inline std::string encode_features(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += util::format_double(v[i]);
  }
  return out;
}

inline std::vector<double> decode_features(const std::string& text, const std::string& where) {
  std::vector<double> v;
  const char* p = text.data();
  const char* end = p + text.size();
  while (true) {
    while (p < end && (*p == ' ' || *p == '\n' || *p == '\t' || *p == '\r')) ++p;
    if (p == end) break;
    double x = 0;
    auto res = std::from_chars(p, end, x);
    if (res.ec != std::errc()) throw ParseError(where, "bad feature value");
    v.push_back(x);
    p = res.ptr;
  }
  return v;
}

// Writes `records_per_shard` records per archive into `dir`. Returns the shard paths.
inline std::vector<std::filesystem::path> save_shards(const PairedCorpus& corpus, const std::filesystem::path& dir,
                                                      std::size_t records_per_shard = 1000) {
  if (records_per_shard == 0) throw UsageError("records_per_shard must be positive");
  for (const auto& r : corpus.records()) {
    if (r.id.find_first_of("./") != std::string::npos || r.id.size() > 80) {
      throw UsageError("record id '" + r.id + "' cannot be a shard basename");
    }
  }
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (std::size_t start = 0; start < corpus.size(); start += records_per_shard) {
    std::vector<TarMember> members;
    for (std::size_t i = start; i < std::min(corpus.size(), start + records_per_shard); ++i) {
      const auto& r = corpus[i];
      members.push_back({r.id + "." + kFeaturesExt, encode_features(r.image)});
      members.push_back({r.id + "." + kCaptionExt, r.caption});
      members.push_back({r.id + "." + kContextExt, nlohmann::json(r.context).dump()});
    }
    paths.push_back(dir / shard_name(paths.size()));
    write_tar(paths.back(), members);
  }
  return paths;
}

inline std::vector<PairRecord> read_shard(const std::filesystem::path& path) {
  struct Parts {
    const std::string* features = nullptr;
    const std::string* caption = nullptr;
    const std::string* context = nullptr;
  };
  const auto members = read_tar(path);
  std::map<std::string, Parts> groups;
  for (const auto& m : members) {
    const auto base_start = m.name.find_last_of('/') == std::string::npos ? 0 : m.name.find_last_of('/') + 1;
    const auto dot = m.name.find('.', base_start);
    const std::string where = path.string() + ":" + m.name;
    if (dot == std::string::npos) throw ParseError(where, "member has no extension");
    const std::string key = m.name.substr(0, dot);
    const std::string ext = m.name.substr(dot + 1);
    auto& parts = groups[key];
    const std::string** slot = ext == kFeaturesExt ? &parts.features
                               : ext == kCaptionExt ? &parts.caption
                               : ext == kContextExt ? &parts.context
                                                    : nullptr;
    if (!slot) continue;  // unknown members are ignored, as tar datasets often carry extras
    if (*slot) throw ParseError(where, "duplicate member");
    *slot = &m.data;
  }
  std::vector<PairRecord> out;
  for (const auto& [key, parts] : groups) {
    const std::string where = path.string() + ":" + key;
    if (!parts.features) throw ParseError(where, "basename '" + key + "' has no image member");
    if (!parts.caption) throw ParseError(where, "basename '" + key + "' has no caption member");
    PairRecord r;
    r.id = key.substr(key.find_last_of('/') == std::string::npos ? 0 : key.find_last_of('/') + 1);
    r.image = decode_features(*parts.features, where + "." + kFeaturesExt);
    r.caption = *parts.caption;
    if (parts.context) {
      try {
        r.context = nlohmann::json::parse(*parts.context).get<std::map<std::string, std::string>>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(where + "." + kContextExt, std::string("bad context: ") + e.what());
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

// All *.tar files in `dir` (or the single archive `path`), assembled in id order.
inline PairedCorpus load_shards(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> shards;
  if (std::filesystem::is_directory(path)) {
    for (const auto& e : std::filesystem::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".tar") shards.push_back(e.path());
    std::sort(shards.begin(), shards.end());
    if (shards.empty()) throw IoError("no .tar shards in " + path.string());
  } else {
    shards.push_back(path);
  }
  std::vector<std::pair<PairRecord, std::string>> all;
  for (const auto& s : shards)
    for (auto& r : read_shard(s)) all.emplace_back(std::move(r), s.string());
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first.id < b.first.id; });
  PairedCorpus corpus;
  for (auto& [r, where] : all) {
    const std::string id = r.id;
    try {
      corpus.add(std::move(r));
    } catch (const UsageError& e) {
      throw ParseError(where + ":" + id, e.what());
    }
  }
  return corpus;
}

enum class CorpusFormat { records, shards };

inline CorpusFormat parse_corpus_format(const std::string& s) {
  if (s == "records") return CorpusFormat::records;
  if (s == "shards") return CorpusFormat::shards;
  throw UsageError("unknown corpus format '" + s + "' (expected records or shards)");
}

inline PairedCorpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  if (!std::filesystem::exists(path)) throw IoError("no such file or directory: " + path.string());
  if (format == CorpusFormat::records) {
    if (std::filesystem::is_directory(path)) throw UsageError(path.string() + " is a directory, not a record file");
    return load_records(path);
  }
  return load_shards(path);
}

}  // namespace longclip::data
