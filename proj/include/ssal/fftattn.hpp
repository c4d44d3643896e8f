#pragma once

// Frequency-domain attention: 2-D DFT, ideal circular high-pass filter, and the
// weight mask built from the magnitude of a high-passed detection map.

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ssal/errors.hpp"
#include "ssal/ndgrad/tensor.hpp"

namespace ssal::fftattn {

using ndgrad::Tensor;

// Degenerate-map threshold and normalization guard.
inline constexpr double kFlatThreshold = 1e-9;
inline constexpr double kNormGuard = 1e-12;
inline constexpr double kDefaultRadius = 0.1;

enum class FilterSource { student, teacher, mean };

struct Spectrum {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::complex<double>> bins;  // row-major
  bool dc_centered = false;

  std::complex<double>& at(std::size_t y, std::size_t x) { return bins[y * width + x]; }
  const std::complex<double>& at(std::size_t y, std::size_t x) const { return bins[y * width + x]; }
};

namespace detail {

inline bool is_pow2(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place unnormalized 1-D DFT. sign = -1 forward, +1 inverse.
inline void fft_radix2(std::vector<std::complex<double>>& a, int sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      const double ang = sign * 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(len);
      const std::complex<double> w(std::cos(ang), std::sin(ang));
      for (std::size_t i = 0; i < n; i += len) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

inline void dft_direct(std::vector<std::complex<double>>& a, int sign) {
  const std::size_t n = a.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double ang = sign * 2.0 * M_PI * static_cast<double>((k * j) % n) / static_cast<double>(n);
      acc += a[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  a = std::move(out);
}

inline void transform_1d(std::vector<std::complex<double>>& a, int sign) {
  if (is_pow2(a.size())) {
    fft_radix2(a, sign);
  } else {
    dft_direct(a, sign);
  }
}

// Separable unitary 2-D transform in place.
inline void transform_2d(std::vector<std::complex<double>>& data, std::size_t H, std::size_t W, int sign) {
  std::vector<std::complex<double>> line(W);
  for (std::size_t y = 0; y < H; ++y) {
    std::copy_n(data.begin() + static_cast<long>(y * W), W, line.begin());
    transform_1d(line, sign);
    std::copy(line.begin(), line.end(), data.begin() + static_cast<long>(y * W));
  }
  line.resize(H);
  for (std::size_t x = 0; x < W; ++x) {
    for (std::size_t y = 0; y < H; ++y) line[y] = data[y * W + x];
    transform_1d(line, sign);
    for (std::size_t y = 0; y < H; ++y) data[y * W + x] = line[y];
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(H * W));
  for (auto& v : data) v *= scale;
}

// Circular shift moving bin (0,0) to (H/2, W/2), or back when `inverse`.
inline void shift(Spectrum& s, bool inverse) {
  const std::size_t H = s.height, W = s.width;
  const std::size_t dy = inverse ? H - H / 2 : H / 2;
  const std::size_t dx = inverse ? W - W / 2 : W / 2;
  std::vector<std::complex<double>> out(s.bins.size());
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) out[((y + dy) % H) * W + (x + dx) % W] = s.bins[y * W + x];
  s.bins = std::move(out);
}

inline void require_field(const Tensor& f, const char* what) {
  if (f.rank() != 2 || f.size() == 0) {
    throw DimensionError(std::string(what) + ": expected a nonempty [H,W] field, got " +
                         ndgrad::to_string(f.shape()));
  }
}

}  // namespace detail

// Unitary forward transform; radix-2 for power-of-two sides, direct DFT otherwise.
inline Spectrum fft2d(const Tensor& field) {
  detail::require_field(field, "fft2d");
  if (!field.all_finite()) throw NumericError("fft2d: non-finite input");
  Spectrum s;
  s.height = field.dim(0);
  s.width = field.dim(1);
  s.bins.assign(field.values().begin(), field.values().end());
  detail::transform_2d(s.bins, s.height, s.width, -1);
  return s;
}

inline Spectrum center(Spectrum s) {
  if (!s.dc_centered) {
    detail::shift(s, false);
    s.dc_centered = true;
  }
  return s;
}

inline Spectrum uncenter(Spectrum s) {
  if (s.dc_centered) {
    detail::shift(s, true);
    s.dc_centered = false;
  }
  return s;
}

// Complex inverse (un-centering first when needed).
inline std::vector<std::complex<double>> ifft2d_complex(Spectrum s) {
  s = uncenter(std::move(s));
  detail::transform_2d(s.bins, s.height, s.width, +1);
  return std::move(s.bins);
}

// Real part of the inverse transform.
inline Tensor ifft2d(const Spectrum& s) {
  const auto c = ifft2d_complex(s);
  Tensor out({s.height, s.width});
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
  return out;
}

// Distance of a bin from the DC bin, in bins.
inline double radial_distance(const Spectrum& s, std::size_t y, std::size_t x) {
  auto signed_freq = [](std::size_t k, std::size_t n, bool centered) {
    const long kk = static_cast<long>(k), nn = static_cast<long>(n);
    if (centered) return static_cast<double>(kk - nn / 2);
    return static_cast<double>(kk <= nn / 2 ? kk : kk - nn);
  };
  const double fy = signed_freq(y, s.height, s.dc_centered);
  const double fx = signed_freq(x, s.width, s.dc_centered);
  return std::sqrt(fy * fy + fx * fx);
}

// Ideal high-pass: zeroes every bin within r * min(H,W)/2 of DC.
inline Spectrum highpass_apply(Spectrum s, double r) {
  if (!(r >= 0.0)) throw std::invalid_argument("highpass_apply: radius must be >= 0");
  const double cutoff = r * static_cast<double>(std::min(s.height, s.width)) / 2.0;
  for (std::size_t y = 0; y < s.height; ++y)
    for (std::size_t x = 0; x < s.width; ++x)
      if (radial_distance(s, y, x) <= cutoff) s.at(y, x) = 0.0;
  return s;
}

// Complex high-passed reconstruction of a real field.
inline std::vector<std::complex<double>> highpass_reconstruct(const Tensor& field, double r) {
  return ifft2d_complex(highpass_apply(center(fft2d(field)), r));
}

// Unnormalized weights: magnitude of the high-passed reconstruction.
inline Tensor highpass_magnitude(const Tensor& field, double r) {
  const auto c = highpass_reconstruct(field, r);
  Tensor out(field.shape());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = std::abs(c[i]);
  return out;
}

// Per-frame weight mask in [0,1]; a flat input yields the uniform mask.
inline Tensor hpf_weight_map(const Tensor& det_frame, double r = kDefaultRadius) {
  Tensor mag = highpass_magnitude(det_frame, r);
  const double peak = *std::max_element(mag.values().begin(), mag.values().end());
  if (peak < kFlatThreshold) return Tensor::ones(det_frame.shape());
  const double inv = 1.0 / (peak + kNormGuard);
  for (double& v : mag.data()) v *= inv;
  return mag;
}

// Applies hpf_weight_map to each trailing [H,W] frame of a [...,H,W] tensor.
inline Tensor hpf_weight_maps(const Tensor& maps, double r = kDefaultRadius) {
  if (maps.rank() < 2) throw DimensionError("hpf_weight_maps: expected [...,H,W]");
  const std::size_t H = maps.dim(maps.rank() - 2), W = maps.dim(maps.rank() - 1);
  const std::size_t plane = H * W;
  Tensor out(maps.shape());
  for (std::size_t f = 0; f < maps.size() / plane; ++f) {
    Tensor frame({H, W}, std::vector<double>(maps.raw() + f * plane, maps.raw() + (f + 1) * plane));
    const Tensor w = hpf_weight_map(frame, r);
    std::copy(w.values().begin(), w.values().end(), out.raw() + f * plane);
  }
  return out;
}

inline Tensor combine_filters(const Tensor& w_s, const Tensor& w_t, FilterSource mode) {
  ndgrad::require_same_shape(w_s, w_t, "combine_filters");
  switch (mode) {
    case FilterSource::student: return w_s;
    case FilterSource::teacher: return w_t;
    case FilterSource::mean: break;
  }
  Tensor out(w_s.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (w_s[i] + w_t[i]);
  return out;
}

// Binary PGM (P5) dump of an [H,W] field with values in [0,1].
inline void write_pgm(const std::filesystem::path& path, const Tensor& field) {
  detail::require_field(field, "write_pgm");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path.string());
  out << "P5\n" << field.dim(1) << ' ' << field.dim(0) << "\n255\n";
  for (double v : field.values()) {
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  if (!out) throw std::runtime_error("write_pgm: short write to " + path.string());
}

}  // namespace ssal::fftattn
