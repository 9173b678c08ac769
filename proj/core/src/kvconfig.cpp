#include "ski/kvconfig.hpp"

#include "ski/binary_io.hpp"
#include "ski/error.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ski {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KvConfig KvConfig::parse(std::string_view text, std::string_view source) {
  KvConfig cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, end == std::string_view::npos ? text.size() - pos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(source) + ":" + std::to_string(line_no) +
                        ": expected `key = value`");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) {
      throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": empty key");
    }
    if (cfg.has(key)) {
      throw ConfigError(std::string(source) + ":" + std::to_string(line_no) +
                        ": duplicate key `" + key + "`");
    }
    cfg.entries_[key] = value;
  }
  return cfg;
}

KvConfig KvConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KvConfig::set(const std::string& key, std::string value) {
  entries_[key] = std::string(trim(value));
}

const std::string& KvConfig::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing config key `" + key + "`");
  return it->second;
}

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("config key `" + key + "`: cannot parse `" + text + "`");
  }
  return value;
}

}  // namespace

int KvConfig::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }

int KvConfig::get_int(const std::string& key, int fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  return has(key) ? parse_number<std::uint64_t>(key, get(key)) : fallback;
}

double KvConfig::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key));
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key `" + key + "`: expected a boolean, got `" + v + "`");
}

std::vector<std::string> KvConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  const std::string& v = get(key);
  std::size_t pos = 0;
  while (pos <= v.size()) {
    const auto comma = v.find(',', pos);
    const auto item =
        trim(std::string_view(v).substr(pos, comma == std::string::npos ? v.size() - pos
                                                                          : comma - pos));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::vector<double> KvConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : get_list(key)) out.push_back(parse_number<double>(key, item));
  return out;
}

KvConfig KvConfig::scoped(std::string_view prefix) const {
  KvConfig out;
  const std::string p = std::string(prefix) + ".";
  for (const auto& [k, v] : entries_) {
    if (k.size() > p.size() && k.compare(0, p.size(), p) == 0) out.entries_[k.substr(p.size())] = v;
  }
  return out;
}

KvConfig KvConfig::merged(const KvConfig& overrides) const {
  KvConfig out = *this;
  for (const auto& [k, v] : overrides.entries_) out.entries_[k] = v;
  return out;
}

KvConfig KvConfig::prefixed(std::string_view prefix) const {
  KvConfig out;
  for (const auto& [k, v] : entries_) out.entries_[std::string(prefix) + "." + k] = v;
  return out;
}

std::string KvConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

std::string KvConfig::fingerprint() const { return hex64(fnv1a64(canonical())); }

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ec == std::errc() ? ptr : buf);
}

}  // namespace ski
