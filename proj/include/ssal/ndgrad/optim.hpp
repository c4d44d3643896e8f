#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ssal/ndgrad/tape.hpp"

namespace ssal::ndgrad {

enum class StoreRole { student, teacher, gradient, moment };

// Named parameter tensors in insertion order.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(StoreRole role) : role_(role) {}

  StoreRole role() const noexcept { return role_; }
  void set_role(StoreRole role) noexcept { role_ = role; }

  void add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
    index_.emplace(name, names_.size());
    names_.push_back(name);
    values_.push_back(std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& at(const std::string& name) const { return values_[lookup(name)]; }
  Tensor& at(const std::string& name) { return values_[lookup(name)]; }
  const Tensor& at(std::size_t i) const { return values_.at(i); }
  Tensor& at(std::size_t i) { return values_.at(i); }

  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t size() const noexcept { return names_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  ParamStore zeros_like(StoreRole role) const {
    ParamStore z(role);
    for (std::size_t i = 0; i < names_.size(); ++i) z.add(names_[i], Tensor::zeros(values_[i].shape()));
    return z;
  }

  // Throws unless both stores hold the same names, order, and shapes.
  void require_aligned(const ParamStore& other, const char* what) const {
    if (names_ != other.names_) throw std::invalid_argument(std::string(what) + ": parameter names differ");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (values_[i].shape() != other.values_[i].shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch for " + names_[i]);
      }
    }
  }

  // Binds every parameter as a leaf on the tape.
  std::map<std::string, Var> bind(Tape& tape, bool requires_grad = true) const {
    std::map<std::string, Var> vars;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      vars.emplace(names_[i], requires_grad ? tape.parameter(names_[i], values_[i])
                                            : tape.constant(values_[i]));
    }
    return vars;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter named " + name);
    return it->second;
  }

  StoreRole role_ = StoreRole::student;
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t> index_;
};

// Runs the reverse sweep and gathers d loss / d parameter into a store aligned
// with `params`. Parameters that did not take part receive zeros.
inline ParamStore backprop(Tape& tape, Var loss, const ParamStore& params) {
  tape.backward(loss);
  ParamStore grads = params.zeros_like(StoreRole::gradient);
  tape.for_each_param_grad([&](const std::string& name, const Tensor& g) {
    if (!grads.contains(name)) return;
    Tensor& dst = grads.at(name);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  });
  return grads;
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParamStore& params, AdamConfig cfg)
      : cfg_(cfg), m_(params.zeros_like(StoreRole::moment)), v_(params.zeros_like(StoreRole::moment)) {}

  void step(ParamStore& params, const ParamStore& grads) {
    params.require_aligned(grads, "adam_step");
    params.require_aligned(m_, "adam_step state");
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params.at(i);
      const Tensor& g = grads.at(i);
      Tensor& m = m_.at(i);
      Tensor& v = v_.at(i);
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        p[j] -= cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
      }
    }
  }

  std::uint64_t steps() const noexcept { return step_; }
  const ParamStore& first_moment() const noexcept { return m_; }
  const ParamStore& second_moment() const noexcept { return v_; }
  const AdamConfig& config() const noexcept { return cfg_; }

  // Restores optimizer state from a checkpoint.
  void restore(ParamStore m, ParamStore v, std::uint64_t steps) {
    m_.require_aligned(m, "adam restore");
    m_ = std::move(m);
    v_ = std::move(v);
    step_ = steps;
  }

 private:
  AdamConfig cfg_;
  ParamStore m_;
  ParamStore v_;
  std::uint64_t step_ = 0;
};

}  // namespace ssal::ndgrad
