#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace protoconcepts {

enum class ValueType { Int, Real, Bool, String };

struct ConfigKey {
  std::string section;
  std::string key;
  ValueType type;
  std::string default_value;
  std::string doc;

  std::string path() const { return section + "." + key; }
};

/// Every recognised key. Anything else is rejected.
const std::vector<ConfigKey>& config_schema();
/// Human-readable listing of every key, for --help.
std::string config_schema_help();

/// INI-style configuration: `[section]` headers, `key = value` lines, `#`/`;` comments.
/// Sections: model, geometry, losses, schedule, schedule.warmup, schedule.joint,
/// schedule.finetune, data, prune, explain.
class Config {
 public:
  /// All keys at their schema defaults.
  static Config defaults();
  /// Throws ConfigError("config not found: ...") when the file is missing.
  static Config load(const std::filesystem::path& path);
  static Config parse(std::string_view text, const std::string& source = "<string>");

  /// Dotted override, e.g. "losses.k=5" or "schedule.warmup.epochs=3".
  void apply_override(std::string_view assignment);
  void set(const std::string& dotted_path, const std::string& value);

  long long get_int(const std::string& dotted_path) const;
  double get_real(const std::string& dotted_path) const;
  bool get_bool(const std::string& dotted_path) const;
  std::string get_string(const std::string& dotted_path) const;

  /// Canonical text form (sections and keys in schema order, all keys present).
  std::string to_text() const;

  /// Directory of the file this config was loaded from (for relative paths).
  const std::filesystem::path& base_dir() const { return base_dir_; }
  void set_base_dir(std::filesystem::path dir) { base_dir_ = std::move(dir); }

 private:
  const std::string& raw(const std::string& dotted_path) const;
  std::map<std::string, std::string> values_;
  std::filesystem::path base_dir_;
};

}  // namespace protoconcepts
