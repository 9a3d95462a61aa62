#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace protoconcepts {

/// Ordered `key=value` lines. Reals are written with 17 significant digits so
/// they parse back to the identical double.
class Sidecar {
 public:
  void add(const std::string& key, double value);
  void add(const std::string& key, long long value);
  void add(const std::string& key, int value) { add(key, static_cast<long long>(value)); }
  void add(const std::string& key, const std::string& value);
  void add(const std::string& key, const char* value) { add(key, std::string(value)); }
  void append(const Sidecar& other, const std::string& prefix = {});

  std::string text() const;
  void write(const std::filesystem::path& path) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  static std::map<std::string, std::string> read(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string format_real(double value);

}  // namespace protoconcepts
