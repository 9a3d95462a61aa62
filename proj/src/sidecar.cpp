#include "protoconcepts/sidecar.hpp"

#include <cstdio>
#include <fstream>

#include "protoconcepts/diagnostics.hpp"

namespace protoconcepts {

std::string format_real(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void Sidecar::add(const std::string& key, double value) { entries_.emplace_back(key, format_real(value)); }
void Sidecar::add(const std::string& key, long long value) { entries_.emplace_back(key, std::to_string(value)); }

void Sidecar::add(const std::string& key, const std::string& value) {
  if (value.find('\n') != std::string::npos) throw Error("sidecar value for '" + key + "' contains a newline");
  entries_.emplace_back(key, value);
}

void Sidecar::append(const Sidecar& other, const std::string& prefix) {
  for (const auto& [k, v] : other.entries_) entries_.emplace_back(prefix + k, v);
}

std::string Sidecar::text() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

void Sidecar::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  os << text();
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

std::map<std::string, std::string> Sidecar::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace protoconcepts
