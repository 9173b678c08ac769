#pragma once

// Checkpoint container (layout in docs/formats.md): magic "SKICKPT1",
// u32 version, config fingerprint, metadata text, then named f64 arrays.

#include "ski/kvconfig.hpp"
#include "ski/params.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ski {

struct Checkpoint {
  std::string fingerprint;
  KvConfig meta;
  std::vector<Parameter> arrays;

  /// Appends every array of `params` with `prefix` prepended to its name.
  void add(const ParameterSet& params, const std::string& prefix = "");
  /// Overwrites `params` from arrays stored under `prefix`; trainable flags
  /// are restored too. Throws FormatError on a missing or misshapen array.
  void restore(ParameterSet& params, const std::string& prefix = "") const;
  bool contains(const std::string& name) const;
  /// True when some array name starts with `prefix`.
  bool has_prefix(const std::string& prefix) const;

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(std::vector<std::uint8_t> bytes, const std::string& source);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// One line per array: name, shape, trainable flag, Frobenius norm.
  std::string describe() const;
};

}  // namespace ski
