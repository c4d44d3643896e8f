#pragma once

#include <array>

#include "ssal/ndgrad/ops.hpp"

namespace ssal::ndgrad {

// x: [N,C,...], b: [C]. Adds b[c] to every element of channel c.
inline Var add_channel_bias(Var x, Var b) {
  const Shape& s = x.value().shape();
  if (s.size() < 2 || b.value().rank() != 1 || b.value().dim(0) != s[1]) {
    throw DimensionError("add_channel_bias: input " + to_string(s) + " with bias " +
                         to_string(b.value().shape()));
  }
  const std::size_t n = s[0], c = s[1], inner = x.value().size() / (n * c);
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = out.raw() + (i * c + ch) * inner;
      const double bv = b.value()[ch];
      for (std::size_t j = 0; j < inner; ++j) p[j] += bv;
    }
  return x.tape->record("add_channel_bias", std::move(out), {x, b},
                        [n, c, inner](Tape& t, std::size_t self) {
                          const std::size_t x_id = t.input(self, 0), b_id = t.input(self, 1);
                          const Tensor& g = t.grad(self);
                          if (t.requires_grad(x_id)) detail::accumulate(t.grad_sink(x_id), g);
                          if (t.requires_grad(b_id)) {
                            Tensor& gb = t.grad_sink(b_id);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t ch = 0; ch < c; ++ch) {
                                const double* p = g.raw() + (i * c + ch) * inner;
                                double acc = 0.0;
                                for (std::size_t j = 0; j < inner; ++j) acc += p[j];
                                gb[ch] += acc;
                              }
                          }
                        });
}

// Nearest-neighbour upsampling of [N,C,T,H,W] by integer factors per (T,H,W).
inline Var upsample_nearest(Var x, std::array<std::size_t, 3> f) {
  const Shape& s = x.value().shape();
  if (s.size() != 5) throw DimensionError("upsample_nearest: expected 5-D input, got " + to_string(s));
  const std::size_t nc = s[0] * s[1], T = s[2], H = s[3], W = s[4];
  const std::size_t OT = T * f[0], OH = H * f[1], OW = W * f[2];
  Tensor out({s[0], s[1], OT, OH, OW});
  const double* in = x.value().raw();
  double* o = out.raw();
  for (std::size_t v = 0; v < nc; ++v)
    for (std::size_t t = 0; t < OT; ++t)
      for (std::size_t h = 0; h < OH; ++h) {
        const double* irow = in + ((v * T + t / f[0]) * H + h / f[1]) * W;
        double* orow = o + ((v * OT + t) * OH + h) * OW;
        for (std::size_t w = 0; w < OW; ++w) orow[w] = irow[w / f[2]];
      }
  return x.tape->record("upsample_nearest", std::move(out), {x},
                        [nc, T, H, W, f](Tape& t, std::size_t self) {
                          const std::size_t OT = T * f[0], OH = H * f[1], OW = W * f[2];
                          const double* g = t.grad(self).raw();
                          double* gi = t.grad_sink(t.input(self, 0)).raw();
                          for (std::size_t v = 0; v < nc; ++v)
                            for (std::size_t tt = 0; tt < OT; ++tt)
                              for (std::size_t h = 0; h < OH; ++h) {
                                double* irow = gi + ((v * T + tt / f[0]) * H + h / f[1]) * W;
                                const double* grow = g + ((v * OT + tt) * OH + h) * OW;
                                for (std::size_t w = 0; w < OW; ++w) irow[w / f[2]] += grow[w];
                              }
                        });
}

// Concatenates two [N,C,...] tensors along the channel axis.
inline Var concat_channels(Var a, Var b) {
  const Shape& sa = a.value().shape();
  const Shape& sb = b.value().shape();
  bool ok = sa.size() == sb.size() && sa.size() >= 2 && sa[0] == sb[0];
  for (std::size_t i = 2; ok && i < sa.size(); ++i) ok = sa[i] == sb[i];
  if (!ok) throw DimensionError("concat_channels: " + to_string(sa) + " vs " + to_string(sb));
  const std::size_t n = sa[0];
  const std::size_t ablock = a.value().size() / n, bblock = b.value().size() / n;
  Shape so = sa;
  so[1] = sa[1] + sb[1];
  Tensor out(so);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().raw() + i * ablock, ablock, out.raw() + i * (ablock + bblock));
    std::copy_n(b.value().raw() + i * bblock, bblock, out.raw() + i * (ablock + bblock) + ablock);
  }
  return a.tape->record("concat_channels", std::move(out), {a, b},
                        [n, ablock, bblock](Tape& t, std::size_t self) {
                          const double* g = t.grad(self).raw();
                          const std::size_t a_id = t.input(self, 0), b_id = t.input(self, 1);
                          for (std::size_t i = 0; i < n; ++i) {
                            const double* src = g + i * (ablock + bblock);
                            if (t.requires_grad(a_id)) {
                              double* ga = t.grad_sink(a_id).raw() + i * ablock;
                              for (std::size_t j = 0; j < ablock; ++j) ga[j] += src[j];
                            }
                            if (t.requires_grad(b_id)) {
                              double* gb = t.grad_sink(b_id).raw() + i * bblock;
                              for (std::size_t j = 0; j < bblock; ++j) gb[j] += src[ablock + j];
                            }
                          }
                        });
}

// [N,C,...] -> [N,C] by averaging everything past the channel axis.
inline Var global_avg_pool(Var x) {
  const Shape& s = x.value().shape();
  if (s.size() < 3) throw DimensionError("global_avg_pool: expected rank >= 3, got " + to_string(s));
  std::vector<std::size_t> axes;
  for (std::size_t a = 2; a < s.size(); ++a) axes.push_back(a);
  return reduce(x, Reduction::mean, axes);
}

// x: [N,I], w: [O,I], b: [O] -> x w^T + b.
inline Var linear(Var x, Var w, Var b) {
  const Shape& sx = x.value().shape();
  const Shape& sw = w.value().shape();
  if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[1] || b.value().rank() != 1 ||
      b.value().dim(0) != sw[0]) {
    throw DimensionError("linear: input " + to_string(sx) + ", weight " + to_string(sw) +
                         ", bias " + to_string(b.value().shape()));
  }
  const std::size_t n = sx[0], in = sx[1], o = sw[0];
  Tensor out({n, o});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < o; ++j) {
      double acc = b.value()[j];
      for (std::size_t k = 0; k < in; ++k) acc += x.value()[r * in + k] * w.value()[j * in + k];
      out[r * o + j] = acc;
    }
  return x.tape->record("linear", std::move(out), {x, w, b}, [n, in, o](Tape& t, std::size_t self) {
    const std::size_t x_id = t.input(self, 0), w_id = t.input(self, 1), b_id = t.input(self, 2);
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(x_id);
    const Tensor& wv = t.value(w_id);
    if (t.requires_grad(x_id)) {
      Tensor& gx = t.grad_sink(x_id);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < o; ++j)
          for (std::size_t k = 0; k < in; ++k) gx[r * in + k] += g[r * o + j] * wv[j * in + k];
    }
    if (t.requires_grad(w_id)) {
      Tensor& gw = t.grad_sink(w_id);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < o; ++j)
          for (std::size_t k = 0; k < in; ++k) gw[j * in + k] += g[r * o + j] * xv[r * in + k];
    }
    if (t.requires_grad(b_id)) {
      Tensor& gb = t.grad_sink(b_id);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < o; ++j) gb[j] += g[r * o + j];
    }
  });
}

}  // namespace ssal::ndgrad
