#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "ssal/ndgrad/gemm.hpp"
#include "ssal/ndgrad/tape.hpp"

namespace ssal::ndgrad {

// Stride and zero padding per (T,H,W) axis.
struct Conv3dSpec {
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};
};

namespace detail {

struct ConvGeometry {
  std::size_t n, ci, co;
  std::array<std::size_t, 3> in, k, out;
  Conv3dSpec spec;
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, const Conv3dSpec& spec) {
  if (x.size() != 5) throw DimensionError("conv3d: input must be 5-D [N,C,T,H,W], got " + to_string(x));
  if (w.size() != 5) throw DimensionError("conv3d: kernel must be 5-D [Co,Ci,KT,KH,KW], got " + to_string(w));
  if (x[1] != w[1]) {
    throw DimensionError("conv3d: axis 1 (channels) mismatch: input " + std::to_string(x[1]) +
                         " vs kernel " + std::to_string(w[1]));
  }
  ConvGeometry g{x[0], x[1], w[0], {x[2], x[3], x[4]}, {w[2], w[3], w[4]}, {}, spec};
  static constexpr const char* kAxis[3] = {"T", "H", "W"};
  for (std::size_t a = 0; a < 3; ++a) {
    if (spec.stride[a] == 0) throw DimensionError(std::string("conv3d: zero stride on axis ") + kAxis[a]);
    const std::size_t padded = g.in[a] + 2 * spec.pad[a];
    if (padded < g.k[a]) {
      throw DimensionError(std::string("conv3d: kernel larger than padded input on axis ") + kAxis[a] +
                           " (" + std::to_string(g.k[a]) + " > " + std::to_string(padded) + ")");
    }
    g.out[a] = (padded - g.k[a]) / spec.stride[a] + 1;
  }
  return g;
}

// Output positions [lo, hi) along one axis whose input tap (o*s + k - p) is in range.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t in, std::size_t out, std::size_t s,
                                                       std::size_t k, std::size_t p) {
  const long off = static_cast<long>(k) - static_cast<long>(p);
  long lo = 0;
  if (off < 0) lo = (-off + static_cast<long>(s) - 1) / static_cast<long>(s);
  long hi = (static_cast<long>(in) - 1 - off);
  hi = hi < 0 ? 0 : hi / static_cast<long>(s) + 1;
  hi = std::min<long>(hi, static_cast<long>(out));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Column matrix of one sample: rows indexed by (ci,kt,kh,kw), columns by output
// position. Out-of-range taps are zero.
inline void im2col(const ConvGeometry& g, const double* in, double* col) {
  const auto [T, H, W] = g.in;
  const auto [KT, KH, KW] = g.k;
  const auto [OT, OH, OW] = g.out;
  const auto& s = g.spec.stride;
  const auto& p = g.spec.pad;
  const std::size_t P = OT * OH * OW;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.ci; ++ci) {
    const double* vol = in + ci * T * H * W;
    for (std::size_t kt = 0; kt < KT; ++kt)
      for (std::size_t kh = 0; kh < KH; ++kh)
        for (std::size_t kw = 0; kw < KW; ++kw, ++row) {
          double* dst = col + row * P;
          const auto [t_lo, t_hi] = valid_range(T, OT, s[0], kt, p[0]);
          const auto [h_lo, h_hi] = valid_range(H, OH, s[1], kh, p[1]);
          const auto [w_lo, w_hi] = valid_range(W, OW, s[2], kw, p[2]);
          std::fill(dst, dst + P, 0.0);
          for (std::size_t ot = t_lo; ot < t_hi; ++ot) {
            const std::size_t it = ot * s[0] + kt - p[0];
            for (std::size_t oh = h_lo; oh < h_hi; ++oh) {
              const std::size_t ih = oh * s[1] + kh - p[1];
              const double* src = vol + (it * H + ih) * W + kw - p[2];
              double* d = dst + (ot * OH + oh) * OW;
              if (s[2] == 1) {
                std::copy(src + w_lo, src + w_hi, d + w_lo);
              } else {
                for (std::size_t ow = w_lo; ow < w_hi; ++ow) d[ow] = src[ow * s[2]];
              }
            }
          }
        }
  }
}

// Adjoint of im2col: scatters column gradients back onto the input volume.
inline void col2im(const ConvGeometry& g, const double* col, double* in) {
  const auto [T, H, W] = g.in;
  const auto [KT, KH, KW] = g.k;
  const auto [OT, OH, OW] = g.out;
  const auto& s = g.spec.stride;
  const auto& p = g.spec.pad;
  const std::size_t P = OT * OH * OW;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.ci; ++ci) {
    double* vol = in + ci * T * H * W;
    for (std::size_t kt = 0; kt < KT; ++kt)
      for (std::size_t kh = 0; kh < KH; ++kh)
        for (std::size_t kw = 0; kw < KW; ++kw, ++row) {
          const double* src = col + row * P;
          const auto [t_lo, t_hi] = valid_range(T, OT, s[0], kt, p[0]);
          const auto [h_lo, h_hi] = valid_range(H, OH, s[1], kh, p[1]);
          const auto [w_lo, w_hi] = valid_range(W, OW, s[2], kw, p[2]);
          for (std::size_t ot = t_lo; ot < t_hi; ++ot) {
            const std::size_t it = ot * s[0] + kt - p[0];
            for (std::size_t oh = h_lo; oh < h_hi; ++oh) {
              const std::size_t ih = oh * s[1] + kh - p[1];
              double* d = vol + (it * H + ih) * W + kw - p[2];
              const double* c = src + (ot * OH + oh) * OW;
              for (std::size_t ow = w_lo; ow < w_hi; ++ow) d[ow * s[2]] += c[ow];
            }
          }
        }
  }
}

// Direct loops for few output channels with unit spatial stride, where the
// column matrix would cost more memory traffic than the arithmetic itself.
inline bool use_direct(const ConvGeometry& g) {
  return g.co <= 2 && g.spec.stride[1] == 1 && g.spec.stride[2] == 1;
}

// Calls fn(ot, it, oh, ih, ow_lo, ow_hi, iw_offset) for every valid
// (kernel tap, output row) pair of one (co, ci) channel pair.
template <typename Fn>
inline void direct_visit(const ConvGeometry& g, Fn&& fn) {
  const auto [T, H, W] = g.in;
  const auto [KT, KH, KW] = g.k;
  const auto [OT, OH, OW] = g.out;
  const auto& s = g.spec.stride;
  const auto& p = g.spec.pad;
  for (std::size_t kt = 0; kt < KT; ++kt) {
    const auto [t_lo, t_hi] = valid_range(T, OT, s[0], kt, p[0]);
    for (std::size_t kh = 0; kh < KH; ++kh) {
      const auto [h_lo, h_hi] = valid_range(H, OH, 1, kh, p[1]);
      for (std::size_t kw = 0; kw < KW; ++kw) {
        const auto [w_lo, w_hi] = valid_range(W, OW, 1, kw, p[2]);
        const std::size_t tap = (kt * KH + kh) * KW + kw;
        for (std::size_t ot = t_lo; ot < t_hi; ++ot)
          for (std::size_t oh = h_lo; oh < h_hi; ++oh)
            fn(tap, ((ot * OH + oh) * OW), ((ot * s[0] + kt - p[0]) * H + oh + kh - p[1]) * W + kw - p[2], w_lo,
               w_hi);
      }
    }
  }
}

inline void direct_forward(const ConvGeometry& g, const double* x, const double* w, double* out) {
  const std::size_t in_vol = g.in[0] * g.in[1] * g.in[2];
  const std::size_t out_vol = g.out[0] * g.out[1] * g.out[2];
  const std::size_t taps = g.k[0] * g.k[1] * g.k[2];
  for (std::size_t co = 0; co < g.co; ++co)
    for (std::size_t ci = 0; ci < g.ci; ++ci) {
      const double* wk = w + (co * g.ci + ci) * taps;
      const double* in = x + ci * in_vol;
      double* o = out + co * out_vol;
      direct_visit(g, [&](std::size_t tap, std::size_t orow, std::size_t irow, std::size_t lo, std::size_t hi) {
        const double wv = wk[tap];
        for (std::size_t ow = lo; ow < hi; ++ow) o[orow + ow] += wv * in[irow + ow];
      });
    }
}

inline void direct_backward(const ConvGeometry& g, const double* x, const double* w, const double* gout,
                            double* gx, double* gw) {
  const std::size_t in_vol = g.in[0] * g.in[1] * g.in[2];
  const std::size_t out_vol = g.out[0] * g.out[1] * g.out[2];
  const std::size_t taps = g.k[0] * g.k[1] * g.k[2];
  for (std::size_t co = 0; co < g.co; ++co)
    for (std::size_t ci = 0; ci < g.ci; ++ci) {
      const std::size_t wbase = (co * g.ci + ci) * taps;
      const double* go = gout + co * out_vol;
      direct_visit(g, [&](std::size_t tap, std::size_t orow, std::size_t irow, std::size_t lo, std::size_t hi) {
        if (gw) {
          const double* in = x + ci * in_vol;
          double acc = 0.0;
          for (std::size_t ow = lo; ow < hi; ++ow) acc += go[orow + ow] * in[irow + ow];
          gw[wbase + tap] += acc;
        }
        if (gx) {
          double* gi = gx + ci * in_vol;
          const double wv = w[wbase + tap];
          for (std::size_t ow = lo; ow < hi; ++ow) gi[irow + ow] += wv * go[orow + ow];
        }
      });
    }
}

}  // namespace detail

// Plain (unflipped) 3-D cross-correlation without bias.
inline Tensor conv3d_forward(const Tensor& x, const Tensor& w, const Conv3dSpec& spec) {
  const auto g = detail::conv_geometry(x.shape(), w.shape(), spec);
  Tensor out = Tensor::zeros({g.n, g.co, g.out[0], g.out[1], g.out[2]});
  const std::size_t P = g.out[0] * g.out[1] * g.out[2];
  const std::size_t R = g.ci * g.k[0] * g.k[1] * g.k[2];
  const std::size_t in_block = g.ci * g.in[0] * g.in[1] * g.in[2];
  if (detail::use_direct(g)) {
    for (std::size_t n = 0; n < g.n; ++n)
      detail::direct_forward(g, x.raw() + n * in_block, w.raw(), out.raw() + n * g.co * P);
    return out;
  }
  std::vector<double> col(R * P);
  for (std::size_t n = 0; n < g.n; ++n) {
    detail::im2col(g, x.raw() + n * in_block, col.data());
    gemm::nn(w.raw(), col.data(), out.raw() + n * g.co * P, g.co, R, P);
  }
  return out;
}

inline Var conv3d(Var x, Var w, Conv3dSpec spec = {}) {
  Tensor out = conv3d_forward(x.value(), w.value(), spec);
  return x.tape->record("conv3d", std::move(out), {x, w}, [spec](Tape& t, std::size_t self) {
    const std::size_t x_id = t.input(self, 0), w_id = t.input(self, 1);
    const Tensor& xv = t.value(x_id);
    const Tensor& wv = t.value(w_id);
    const auto g = detail::conv_geometry(xv.shape(), wv.shape(), spec);
    const double* go = t.grad(self).raw();
    const std::size_t P = g.out[0] * g.out[1] * g.out[2];
    const std::size_t R = g.ci * g.k[0] * g.k[1] * g.k[2];
    const std::size_t in_block = g.ci * g.in[0] * g.in[1] * g.in[2];
    const bool want_x = t.requires_grad(x_id), want_w = t.requires_grad(w_id);
    if (detail::use_direct(g)) {
      double* gx = want_x ? t.grad_sink(x_id).raw() : nullptr;
      double* gw = want_w ? t.grad_sink(w_id).raw() : nullptr;
      for (std::size_t n = 0; n < g.n; ++n)
        detail::direct_backward(g, xv.raw() + n * in_block, wv.raw(), go + n * g.co * P,
                                gx ? gx + n * in_block : nullptr, gw);
      return;
    }
    std::vector<double> col(R * P);
    std::vector<double> w_t;
    if (want_x) {
      w_t.resize(R * g.co);
      for (std::size_t co = 0; co < g.co; ++co)
        for (std::size_t r = 0; r < R; ++r) w_t[r * g.co + co] = wv.raw()[co * R + r];
    }
    for (std::size_t n = 0; n < g.n; ++n) {
      const double* gout = go + n * g.co * P;
      if (want_w) {
        detail::im2col(g, xv.raw() + n * in_block, col.data());
        gemm::nt(gout, col.data(), t.grad_sink(w_id).raw(), g.co, P, R);
      }
      if (want_x) {
        std::fill(col.begin(), col.end(), 0.0);
        gemm::nn(w_t.data(), gout, col.data(), R, g.co, P);
        detail::col2im(g, col.data(), t.grad_sink(x_id).raw() + n * in_block);
      }
    }
  });
}

}  // namespace ssal::ndgrad
