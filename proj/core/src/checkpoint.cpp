#include "ski/checkpoint.hpp"

#include "ski/binary_io.hpp"
#include "ski/error.hpp"

#include <cstdio>

namespace ski {
namespace {

constexpr std::string_view kMagic = "SKICKPT1";
constexpr std::uint32_t kVersion = 1;

}  // namespace

void Checkpoint::add(const ParameterSet& params, const std::string& prefix) {
  for (const Parameter& p : params.items()) {
    if (contains(prefix + p.name)) throw ContractViolation("checkpoint already has `" + prefix + p.name + "`");
    arrays.push_back(Parameter{prefix + p.name, p.value, p.trainable});
  }
}

void Checkpoint::restore(ParameterSet& params, const std::string& prefix) const {
  for (Parameter& p : params.items()) {
    const std::string name = prefix + p.name;
    const Parameter* found = nullptr;
    for (const Parameter& a : arrays) {
      if (a.name == name) found = &a;
    }
    if (!found) throw FormatError("checkpoint has no array `" + name + "`");
    if (found->value.rows() != p.value.rows() || found->value.cols() != p.value.cols()) {
      throw FormatError("checkpoint array `" + name + "` has shape " +
                        std::to_string(found->value.rows()) + "x" +
                        std::to_string(found->value.cols()) + ", expected " +
                        std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
    p.value = found->value;
    p.trainable = found->trainable;
  }
}

bool Checkpoint::contains(const std::string& name) const {
  for (const Parameter& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  for (const Parameter& a : arrays) {
    if (a.name.starts_with(prefix)) return true;
  }
  return false;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  ByteWriter w;
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(kMagic.data()), kMagic.size()));
  w.u32(kVersion);
  w.str(fingerprint);
  w.str(meta.canonical());
  w.u32(static_cast<std::uint32_t>(arrays.size()));
  for (const Parameter& a : arrays) {
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.value.rows()));
    w.u32(static_cast<std::uint32_t>(a.value.cols()));
    w.u8(a.trainable ? 1 : 0);
    // Row-major on disk regardless of in-memory layout.
    for (Eigen::Index i = 0; i < a.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < a.value.cols(); ++j) w.f64(a.value(i, j));
    }
  }
  return w.bytes();
}

Checkpoint Checkpoint::deserialize(std::vector<std::uint8_t> bytes, const std::string& source) {
  ByteReader r(std::move(bytes), source);
  r.expect_magic(kMagic);
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.fingerprint = r.str();
  c.meta = KvConfig::parse(r.str(), source);
  const std::uint32_t n = r.u32();
  for (std::uint32_t k = 0; k < n; ++k) {
    Parameter p;
    p.name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    p.trainable = r.u8() != 0;
    p.value.resize(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < cols; ++j) p.value(i, j) = r.f64();
    }
    c.arrays.push_back(std::move(p));
  }
  if (!r.at_end()) throw FormatError(source + ": trailing bytes after last array");
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  ByteWriter w;
  w.raw(serialize());
  w.save(path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path), path.string());
}

std::string Checkpoint::describe() const {
  std::string out = "fingerprint " + fingerprint + "\n";
  for (const Parameter& a : arrays) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-32s %5lldx%-5lld %s norm=%.6g\n", a.name.c_str(),
                  static_cast<long long>(a.value.rows()), static_cast<long long>(a.value.cols()),
                  a.trainable ? "trainable" : "frozen   ", a.value.norm());
    out += buf;
  }
  return out;
}

}  // namespace ski
