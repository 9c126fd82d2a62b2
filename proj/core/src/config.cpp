#include "fmtx/config.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unistd.h>

#include "fmtx/rng.hpp"

namespace fmtx::cfg {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void Config::merge_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key=value, got: " + line);
    kv_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
}

std::string Config::str(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

long Config::integer(const std::string& key, long fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  return std::stol(it->second);
}

double Config::real(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  return std::stod(it->second);
}

bool Config::boolean(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::runtime_error("config key " + key + ": not a boolean: " + it->second);
}

std::string Config::canonical_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : kv_) os << k << '=' << v << '\n';
  return os.str();
}

uint64_t Config::hash() const { return Rng::fnv1a(canonical_text()); }

Config config_from_file(const std::string& path) {
  Config c;
  c.merge_text(read_file(path));
  return c;
}

namespace {

void write_temp_then_rename(const std::string& path, const std::string& content,
                            bool fault) {
  std::filesystem::path target(path);
  if (target.has_parent_path())
    std::filesystem::create_directories(target.parent_path());
  std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  if (fault) throw std::runtime_error("injected fault before rename: " + path);
  std::filesystem::rename(tmp, path);
}

}  // namespace

void atomic_write_file(const std::string& path, const std::string& content) {
  write_temp_then_rename(path, content, false);
}

void atomic_write_file_faulty(const std::string& path, const std::string& content) {
  write_temp_then_rename(path, content, true);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::string content;
  for (const auto& l : lines) {
    content += l;
    content += '\n';
  }
  atomic_write_file(path, content);
}

uint64_t fnv1a_file(const std::string& path) { return Rng::fnv1a(read_file(path)); }

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void manifest_append(const std::string& manifest_path, const std::string& subcommand,
                     const Config& config, uint64_t seed,
                     const std::vector<std::string>& inputs,
                     const std::vector<std::string>& outputs) {
  std::ostringstream os;
  os << "cmd=" << subcommand << " config=" << hex64(config.hash())
     << " seed=" << seed;
  for (const auto& p : inputs)
    os << " in:" << std::filesystem::path(p).filename().string() << '='
       << hex64(fnv1a_file(p));
  for (const auto& p : outputs)
    os << " out:" << std::filesystem::path(p).filename().string() << '='
       << hex64(fnv1a_file(p));
  os << '\n';
  std::ofstream out(manifest_path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + manifest_path);
  out << os.str();
}

}  // namespace fmtx::cfg
