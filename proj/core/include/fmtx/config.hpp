#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fmtx::cfg {

// Line-oriented key=value configuration ('#' starts a comment). Later
// sources override earlier ones: defaults < config file < command line.
class Config {
 public:
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  void merge_text(const std::string& text);  // parses key=value lines
  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& fallback = "") const;
  long integer(const std::string& key, long fallback) const;
  double real(const std::string& key, double fallback) const;
  bool boolean(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }
  std::string canonical_text() const;  // sorted key=value lines
  uint64_t hash() const;               // over canonical_text

 private:
  std::map<std::string, std::string> kv_;
};

Config config_from_file(const std::string& path);

// Atomic file write: content goes to a temp sibling which is renamed over
// the target, so a crash never leaves a partial artifact at the final path.
void atomic_write_file(const std::string& path, const std::string& content);
// Test hook: aborts between the temp write and the rename.
void atomic_write_file_faulty(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);
std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

uint64_t fnv1a_file(const std::string& path);
std::string hex64(uint64_t v);

// Appends one record to the append-only run manifest: subcommand, config
// hash, seed, and input/output content digests. No timestamps, so reruns
// with identical inputs append identical lines.
void manifest_append(const std::string& manifest_path, const std::string& subcommand,
                     const Config& config, uint64_t seed,
                     const std::vector<std::string>& inputs,
                     const std::vector<std::string>& outputs);

}  // namespace fmtx::cfg
