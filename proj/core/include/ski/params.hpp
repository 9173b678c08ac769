#pragma once

#include "ski/autodiff.hpp"
#include "ski/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ski {

class Rng;

struct Parameter {
  std::string name;
  Mat value;
  bool trainable = true;
};

/// Named parameter arrays in insertion order. Names are unique.
class ParameterSet {
 public:
  /// Returns the index of the new array.
  std::size_t add(std::string name, Mat init, bool trainable = true);

  std::size_t size() const { return items_.size(); }
  Parameter& operator[](std::size_t i) { return items_[i]; }
  const Parameter& operator[](std::size_t i) const { return items_[i]; }
  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }

  /// Throws ContractViolation for an unknown name.
  std::size_t index(const std::string& name) const;
  bool contains(const std::string& name) const;

  void set_trainable(bool trainable);
  bool any_trainable() const;
  std::size_t scalar_count() const;

  /// FNV-1a over names, shapes, trainable flags and value bytes.
  std::uint64_t checksum() const;
  /// Copies values from a set with identical names and shapes.
  void assign_values(const ParameterSet& other);

 private:
  std::vector<Parameter> items_;
};

/// Parameters placed on a tape: trainable arrays become variables,
/// frozen ones (or all, when `as_constants`) become constants.
struct BoundParams {
  std::vector<ad::Var> vars;
  const ad::Var& operator[](std::size_t i) const { return vars[i]; }
};

BoundParams bind(const ParameterSet& params, ad::Tape& tape, bool as_constants = false);

/// Gradients aligned with `params`; arrays that received none are zero.
std::vector<Mat> collect_gradients(const ParameterSet& params, const BoundParams& bound);

/// Weight initialization N(0, gain^2 / fan_in).
Mat init_weight(Rng& rng, int fan_in, int fan_out, double gain = 1.0);

}  // namespace ski
