#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ssal/ndgrad/tape.hpp"

namespace ssal::ndgrad {

// Probability clamp used wherever the log of a model output is taken.
inline constexpr double kProbEps = 1e-7;

enum class Activation { relu, sigmoid };
enum class Reduction { sum, mean };

// Saturated tails are clamped one ulp inside (0,1).
inline double stable_sigmoid(double x) noexcept {
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  if (x >= 0.0) return std::min(1.0 / (1.0 + std::exp(-x)), hi);
  const double e = std::exp(x);
  return std::max(e / (1.0 + e), lo);
}

namespace detail {

template <typename Fn>
Tensor map(const Tensor& x, Fn&& fn) {
  Tensor out(x.shape());
  const double* in = x.raw();
  double* o = out.raw();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = fn(in[i]);
  return out;
}

inline void accumulate(Tensor& dst, const Tensor& src, double scale = 1.0) {
  double* d = dst.raw();
  const double* s = src.raw();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += scale * s[i];
}

}  // namespace detail

inline Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  detail::accumulate(out, b.value());
  return a.tape->record("add", std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t in = t.input(self, k);
      if (t.requires_grad(in)) detail::accumulate(t.grad_sink(in), t.grad(self));
    }
  });
}

inline Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  detail::accumulate(out, b.value(), -1.0);
  return a.tape->record("sub", std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const std::size_t a_id = t.input(self, 0), b_id = t.input(self, 1);
    if (t.requires_grad(a_id)) detail::accumulate(t.grad_sink(a_id), t.grad(self));
    if (t.requires_grad(b_id)) detail::accumulate(t.grad_sink(b_id), t.grad(self), -1.0);
  });
}

inline Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape->record("mul", std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const std::size_t a_id = t.input(self, 0), b_id = t.input(self, 1);
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a_id)) {
      Tensor& ga = t.grad_sink(a_id);
      const Tensor& bv = t.value(b_id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b_id)) {
      Tensor& gb = t.grad_sink(b_id);
      const Tensor& av = t.value(a_id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

// Scalar-with-tensor product; the only implicit broadcast the library allows.
inline Var scale(Var a, double c) {
  Tensor out = detail::map(a.value(), [c](double v) { return c * v; });
  return a.tape->record("scale", std::move(out), {a}, [c](Tape& t, std::size_t self) {
    detail::accumulate(t.grad_sink(t.input(self, 0)), t.grad(self), c);
  });
}

inline Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record("reshape", std::move(out), {a}, [](Tape& t, std::size_t self) {
    detail::accumulate(t.grad_sink(t.input(self, 0)), t.grad(self));
  });
}

inline Var relu(Var x) {
  Tensor out = detail::map(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return x.tape->record("relu", std::move(out), {x}, [](Tape& t, std::size_t self) {
    const std::size_t in = t.input(self, 0);
    const Tensor& xv = t.value(in);
    const Tensor& g = t.grad(self);
    Tensor& gi = t.grad_sink(in);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gi[i] += g[i];
    }
  });
}

inline Var sigmoid(Var x) {
  Tensor out = detail::map(x.value(), stable_sigmoid);
  return x.tape->record("sigmoid", std::move(out), {x}, [](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gi = t.grad_sink(t.input(self, 0));
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Var activation(Var x, Activation kind) {
  return kind == Activation::relu ? relu(x) : sigmoid(x);
}

// Reduces over `axes` (all axes when empty). The reduced axes are dropped from
// the output shape; reducing everything yields a rank-0 scalar.
inline Var reduce(Var x, Reduction kind, std::vector<std::size_t> axes = {}) {
  const Shape& in_shape = x.value().shape();
  const std::size_t rank = in_shape.size();
  std::vector<bool> reduced(rank, axes.empty());
  for (std::size_t a : axes) {
    if (a >= rank) {
      throw DimensionError("reduce: axis " + std::to_string(a) + " out of range for shape " +
                           to_string(in_shape));
    }
    reduced[a] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t a = 0; a < rank; ++a) {
    if (reduced[a]) {
      count *= in_shape[a];
    } else {
      out_shape.push_back(in_shape[a]);
    }
  }
  if (count == 0 || x.value().size() == 0) throw DimensionError("reduce: empty reduction");

  const double factor = kind == Reduction::mean ? 1.0 / static_cast<double>(count) : 1.0;
  const char* name = kind == Reduction::mean ? "mean" : "sum";
  if (out_shape.empty()) {
    double total = 0.0;
    for (double v : x.value().data()) total += v;
    return x.tape->record(name, Tensor::scalar(total * factor), {x}, [factor](Tape& t, std::size_t self) {
      const double g = t.grad(self)[0] * factor;
      for (double& v : t.grad_sink(t.input(self, 0)).data()) v += g;
    });
  }

  // Flat input index -> flat output index.
  std::vector<std::size_t> target(x.value().size());
  {
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < target.size(); ++flat) {
      std::size_t o = 0;
      for (std::size_t a = 0; a < rank; ++a) {
        if (!reduced[a]) o = o * in_shape[a] + idx[a];
      }
      target[flat] = o;
      for (std::size_t a = rank; a-- > 0;) {
        if (++idx[a] < in_shape[a]) break;
        idx[a] = 0;
      }
    }
  }
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t i = 0; i < target.size(); ++i) out[target[i]] += x.value()[i];
  if (kind == Reduction::mean) {
    for (double& v : out.data()) v *= factor;
  }
  return x.tape->record(name, std::move(out), {x},
                        [target = std::move(target), factor](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad(self);
                          Tensor& gi = t.grad_sink(t.input(self, 0));
                          for (std::size_t i = 0; i < target.size(); ++i) {
                            gi[i] += factor * g[target[i]];
                          }
                        });
}

inline Var sum(Var x) { return reduce(x, Reduction::sum); }
inline Var mean(Var x) { return reduce(x, Reduction::mean); }

}  // namespace ssal::ndgrad
