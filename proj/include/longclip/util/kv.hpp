#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "longclip/errors.hpp"

namespace longclip::util {

// Flat `key = value` configuration. Blank lines and lines starting with '#' are ignored.
using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline KeyValues parse_kv(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ParseError(where, "expected 'key = value'");
    std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ParseError(where, "empty key");
    if (kv.count(key)) throw ParseError(where, "duplicate key '" + key + "'");
    kv.emplace(std::move(key), trim(std::string_view(t).substr(eq + 1)));
  }
  return kv;
}

inline KeyValues read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  return parse_kv(in, path.string());
}

inline void write_kv(std::ostream& out, const KeyValues& kv) {
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename V>
std::string format_value(const V& v) {
  if constexpr (std::is_same_v<V, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<V>) {
    return format_double(static_cast<double>(v));
  } else if constexpr (std::is_integral_v<V>) {
    return std::to_string(v);
  } else {
    return std::string(v);
  }
}

template <typename V>
V parse_value(const std::string& key, const std::string& text) {
  auto bad = [&](const char* what) { return UsageError("config key '" + key + "': '" + text + "' is not " + what); };
  if constexpr (std::is_same_v<V, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw bad("a boolean");
  } else if constexpr (std::is_floating_point_v<V>) {
    double v = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) throw bad("a number");
    return static_cast<V>(v);
  } else if constexpr (std::is_integral_v<V>) {
    V v{};
    if (!text.empty() && text[0] == '-' && std::is_unsigned_v<V>) throw bad("a nonnegative integer");
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) throw bad("an integer");
    return v;
  } else {
    return V(text);
  }
}

// Applies `kv` to a struct through its field visitor; unknown keys are an error.
template <typename Config, typename Visit>
void apply_kv(Config& cfg, const KeyValues& kv, Visit visit) {
  for (const auto& [key, text] : kv) {
    bool found = false;
    visit(cfg, [&](const char* name, auto& field) {
      if (key == name) {
        field = parse_value<std::remove_reference_t<decltype(field)>>(key, text);
        found = true;
      }
    });
    if (!found) throw UsageError("unknown config key '" + key + "'");
  }
}

template <typename Config, typename Visit>
KeyValues to_kv(Config cfg, Visit visit) {
  KeyValues kv;
  visit(cfg, [&](const char* name, auto& field) { kv[name] = format_value(field); });
  return kv;
}

}  // namespace longclip::util
