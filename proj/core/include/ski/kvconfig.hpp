#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ski {

/// Flat `key = value` text configuration with dotted namespaces.
///
///     # comment
///     data.num_classes = 10
///     train.alpha      = 10.0
///
/// Keys and values are trimmed; duplicate keys are rejected. All accessors
/// throw ConfigError naming the key on a missing entry or malformed value.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(std::string_view text, std::string_view source = "<string>");
  static KvConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.contains(key); }
  void set(const std::string& key, std::string value);
  void erase(const std::string& key) { entries_.erase(key); }

  const std::string& get(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  /// Entries under `prefix.` with the prefix stripped.
  KvConfig scoped(std::string_view prefix) const;
  /// Copy of this config with every entry of `overrides` applied on top.
  KvConfig merged(const KvConfig& overrides) const;
  /// Entries with the given prefix prepended.
  KvConfig prefixed(std::string_view prefix) const;

  /// Sorted `key=value` lines; independent of input whitespace and order.
  std::string canonical() const;
  /// 16 hex digits of FNV-1a over canonical().
  std::string fingerprint() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

std::string format_double(double v);

}  // namespace ski
