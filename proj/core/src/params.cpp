#include "ski/params.hpp"

#include "ski/binary_io.hpp"
#include "ski/error.hpp"
#include "ski/rng.hpp"

#include <cmath>

namespace ski {

std::size_t ParameterSet::add(std::string name, Mat init, bool trainable) {
  if (contains(name)) throw ContractViolation("duplicate parameter name `" + name + "`");
  items_.push_back(Parameter{std::move(name), std::move(init), trainable});
  return items_.size() - 1;
}

std::size_t ParameterSet::index(const std::string& name) const {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].name == name) return i;
  }
  throw ContractViolation("no parameter named `" + name + "`");
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return true;
  }
  return false;
}

void ParameterSet::set_trainable(bool trainable) {
  for (auto& p : items_) p.trainable = trainable;
}

bool ParameterSet::any_trainable() const {
  for (const auto& p : items_) {
    if (p.trainable) return true;
  }
  return false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::uint64_t ParameterSet::checksum() const {
  ByteWriter w;
  for (const auto& p : items_) {
    w.str(p.name);
    w.u64(static_cast<std::uint64_t>(p.value.rows()));
    w.u64(static_cast<std::uint64_t>(p.value.cols()));
    w.u8(p.trainable ? 1 : 0);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) w.f64(p.value.data()[i]);
  }
  return fnv1a64(w.bytes());
}

void ParameterSet::assign_values(const ParameterSet& other) {
  if (other.size() != size()) throw DimensionMismatch("assign_values: parameter counts differ");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const Parameter& src = other.items_[i];
    Parameter& dst = items_[i];
    if (src.name != dst.name || src.value.rows() != dst.value.rows() ||
        src.value.cols() != dst.value.cols()) {
      throw DimensionMismatch("assign_values: `" + src.name + "` does not match `" + dst.name + "`");
    }
    dst.value = src.value;
  }
}

BoundParams bind(const ParameterSet& params, ad::Tape& tape, bool as_constants) {
  BoundParams b;
  b.vars.reserve(params.size());
  for (const auto& p : params.items()) {
    b.vars.push_back(p.trainable && !as_constants ? tape.variable(p.value) : tape.constant(p.value));
  }
  return b;
}

std::vector<Mat> collect_gradients(const ParameterSet& params, const BoundParams& bound) {
  std::vector<Mat> grads;
  grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& g = bound[i].grad();
    if (g.size() == 0) {
      grads.push_back(Mat::Zero(params[i].value.rows(), params[i].value.cols()));
    } else {
      grads.push_back(g);
    }
  }
  return grads;
}

Mat init_weight(Rng& rng, int fan_in, int fan_out, double gain) {
  const double sd = gain / std::sqrt(static_cast<double>(fan_in));
  Mat w(fan_in, fan_out);
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = sd * rng.normal();
  }
  return w;
}

}  // namespace ski
