#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "ssal/ndgrad/ops.hpp"

namespace ssal::ndgrad {

struct MarginLossParams {
  double m_pos = 0.9;
  double m_neg = 0.1;
  double lambda_neg = 0.5;
};

namespace detail {

inline double clamp_prob(double p) noexcept { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

inline double bce_term(double p, double t) noexcept {
  const double q = clamp_prob(p);
  return -(t * std::log(q) + (1.0 - t) * std::log(1.0 - q));
}

// d/dp of bce_term; zero where the clamp is active.
inline double bce_grad(double p, double t) noexcept {
  if (p < kProbEps || p > 1.0 - kProbEps) return 0.0;
  return -t / p + (1.0 - t) / (1.0 - p);
}

}  // namespace detail

// Mean binary cross-entropy. Targets are data, never differentiated.
// With `valid` given, the mean runs over pixels where valid != 0 only, and a
// fully invalid input yields 0.
inline Var bce_loss(Var pred, const Tensor& target, const Tensor* valid = nullptr) {
  require_same_shape(pred.value(), target, "bce_loss");
  if (valid) require_same_shape(pred.value(), *valid, "bce_loss mask");
  const Tensor& p = pred.value();
  double total = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (valid && (*valid)[i] == 0.0) continue;
    total += detail::bce_term(p[i], target[i]);
    count += 1.0;
  }
  if (count == 0.0 && !valid) throw DimensionError("bce_loss: empty input");
  const double inv = count > 0.0 ? 1.0 / count : 0.0;
  std::optional<Tensor> mask;
  if (valid) mask = *valid;
  return pred.tape->record(
      "bce_loss", Tensor::scalar(total * inv), {pred},
      [target, mask = std::move(mask), inv](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] * inv;
        const std::size_t in = t.input(self, 0);
        const Tensor& p = t.value(in);
        Tensor& gi = t.grad_sink(in);
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (mask && (*mask)[i] == 0.0) continue;
          gi[i] += g * detail::bce_grad(p[i], target[i]);
        }
      });
}

// Capsule-style margin loss over [N,K] post-sigmoid scores and one-hot labels,
// averaged over the N rows.
inline Var margin_loss(Var scores, const Tensor& labels, MarginLossParams mp = {}) {
  require_same_shape(scores.value(), labels, "margin_loss");
  if (labels.rank() != 2) throw DimensionError("margin_loss: expected [N,K] inputs");
  const std::size_t n = labels.dim(0), k = labels.dim(1);
  for (std::size_t r = 0; r < n; ++r) {
    int ones = 0;
    bool binary = true;
    for (std::size_t c = 0; c < k; ++c) {
      const double v = labels[r * k + c];
      binary = binary && (v == 0.0 || v == 1.0);
      if (v == 1.0) ++ones;
    }
    if (!binary || ones != 1) throw std::invalid_argument("margin_loss: label row " + std::to_string(r) +
                                               " is not one-hot");
  }
  const Tensor& s = scores.value();
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double pos = std::max(0.0, mp.m_pos - s[i]);
    const double neg = std::max(0.0, s[i] - mp.m_neg);
    total += labels[i] * pos * pos + mp.lambda_neg * (1.0 - labels[i]) * neg * neg;
  }
  const double inv = 1.0 / static_cast<double>(n);
  return scores.tape->record(
      "margin_loss", Tensor::scalar(total * inv), {scores},
      [labels, mp, inv](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] * inv;
        const std::size_t in = t.input(self, 0);
        const Tensor& s = t.value(in);
        Tensor& gi = t.grad_sink(in);
        for (std::size_t i = 0; i < s.size(); ++i) {
          const double pos = std::max(0.0, mp.m_pos - s[i]);
          const double neg = std::max(0.0, s[i] - mp.m_neg);
          gi[i] += g * (-2.0 * labels[i] * pos + 2.0 * mp.lambda_neg * (1.0 - labels[i]) * neg);
        }
      });
}

// mean((a - b)^2 * w) over all elements. `b` and `w` are constants (teacher
// output and attention weights carry no gradient).
inline Var weighted_sq_error(Var a, const Tensor& b, const Tensor& w) {
  require_same_shape(a.value(), b, "weighted_sq_error");
  require_same_shape(a.value(), w, "weighted_sq_error weights");
  const Tensor& av = a.value();
  if (av.size() == 0) throw DimensionError("weighted_sq_error: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - b[i];
    total += d * d * w[i];
  }
  const double inv = 1.0 / static_cast<double>(av.size());
  return a.tape->record("weighted_sq_error", Tensor::scalar(total * inv), {a},
                        [b, w, inv](Tape& t, std::size_t self) {
                          const double g = t.grad(self)[0] * inv;
                          const std::size_t in = t.input(self, 0);
                          const Tensor& av = t.value(in);
                          Tensor& gi = t.grad_sink(in);
                          for (std::size_t i = 0; i < av.size(); ++i) {
                            gi[i] += g * 2.0 * (av[i] - b[i]) * w[i];
                          }
                        });
}

}  // namespace ssal::ndgrad
