#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "longclip/errors.hpp"
#include "longclip/util/kv.hpp"
#include "longclip/version.hpp"

extern char** environ;

namespace longclip::cli {

inline constexpr const char* kEnvPrefix = "LONGCLIP_CFG_";

struct KeySpec {
  std::string name;  // config-file spelling; the flag is --name with '_' as '-'
  std::string default_value;
  std::string help;
  bool required = false;
};

inline std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

inline std::string env_name(const std::string& key) {
  std::string e = kEnvPrefix + key;
  for (auto& c : e) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return e;
}

// Effective configuration of one command. Each value remembers where it came from so
// errors can name the flag, variable or file line the user has to fix.
class RunConfig {
 public:
  explicit RunConfig(std::vector<KeySpec> schema) : schema_(std::move(schema)) {
    for (const auto& k : schema_) {
      values_[k.name] = k.default_value;
      origin_[k.name] = "default";
    }
  }

  const std::vector<KeySpec>& schema() const noexcept { return schema_; }
  bool known(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, std::string value, std::string origin) {
    if (!known(key)) throw UsageError(origin + ": unknown config key '" + key + "'");
    values_[key] = std::move(value);
    origin_[key] = std::move(origin);
  }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("internal: config key '" + key + "' is not in the schema");
    return it->second;
  }

  // Where a value came from, in the form the user would type: "--seed", "LONGCLIP_CFG_SEED" or the config file.
  std::string origin(const std::string& key) const {
    const auto& o = origin_.at(key);
    return o == "default" ? flag_name(key) : o;
  }

  template <typename V>
  V get(const std::string& key) const {
    try {
      return util::parse_value<V>(key, raw(key));
    } catch (const UsageError&) {
      throw UsageError(origin(key) + ": '" + raw(key) + "' is not a valid " + type_name<V>());
    }
  }

  std::string str(const std::string& key) const { return raw(key); }

  std::vector<std::size_t> counts(const std::string& key) const {
    std::vector<std::size_t> out;
    const auto& text = raw(key);
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto comma = std::min(text.find(',', start), text.size());
      const auto item = util::trim(std::string_view(text).substr(start, comma - start));
      try {
        out.push_back(util::parse_value<std::size_t>(key, item));
      } catch (const UsageError&) {
        throw UsageError(origin(key) + ": '" + text + "' is not a comma-separated list of nonnegative integers");
      }
      start = comma + 1;
    }
    return out;
  }

  void require_nonempty(const std::string& key) const {
    if (raw(key).empty()) throw UsageError("missing required " + flag_name(key));
  }

  util::KeyValues values() const { return values_; }

  void write(const std::filesystem::path& path, const std::string& command) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "# longclip " << kVersion << " " << command << "\n";
    util::write_kv(out, values_);
  }

 private:
  template <typename V>
  static const char* type_name() {
    if constexpr (std::is_same_v<V, bool>) return "boolean";
    else if constexpr (std::is_floating_point_v<V>) return "number";
    else if constexpr (std::is_unsigned_v<V>) return "nonnegative integer";
    else if constexpr (std::is_integral_v<V>) return "integer";
    else return "value";
  }

  std::vector<KeySpec> schema_;
  util::KeyValues values_;
  std::map<std::string, std::string> origin_;
};

// Config file, then LONGCLIP_CFG_* variables, then flags; later sources win.
// `environment` defaults to the process environment.
inline void merge_config(RunConfig& cfg, const std::optional<std::filesystem::path>& config_file,
                         const std::map<std::string, std::string>& flags,
                         const std::optional<std::map<std::string, std::string>>& environment = std::nullopt) {
  if (config_file) {
    std::ifstream in(*config_file);
    if (!in) throw IoError("--config: cannot read " + config_file->string());
    for (const auto& [k, v] : util::parse_kv(in, config_file->string()))
      cfg.set(k, v, config_file->string() + " key '" + k + "'");
  }

  std::map<std::string, std::string> env;
  if (environment) {
    env = *environment;
  } else {
    for (char** e = environ; e && *e; ++e) {
      const std::string entry(*e);
      const auto eq = entry.find('=');
      if (eq != std::string::npos) env.emplace(entry.substr(0, eq), entry.substr(eq + 1));
    }
  }
  const std::string prefix = kEnvPrefix;
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    std::string key = name.substr(prefix.size());
    for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    cfg.set(key, value, name);
  }

  for (const auto& [k, v] : flags) cfg.set(k, v, flag_name(k));
}

// Default run directory: runs/<command>-<UTC timestamp>-seed<seed>.
inline std::filesystem::path default_run_dir(const std::string& command, const std::string& seed) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  return std::filesystem::path("runs") / (command + "-" + stamp + "-seed" + seed);
}

// Creates the run directory and records the effective configuration and artifact version.
inline void prepare_run_dir(const std::filesystem::path& dir, const RunConfig& cfg, const std::string& command) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("--out: cannot create " + dir.string() + ": " + ec.message());
  cfg.write(dir / "config.txt", command);
  std::ofstream version(dir / "VERSION");
  if (!version) throw IoError("cannot write " + (dir / "VERSION").string());
  version << kVersion << "\n";
}

}  // namespace longclip::cli
