// High-pass weight map of a soft square blob, written as PGM images.
//
//   fft_weights [out_dir] [radius]

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "ssal/fftattn.hpp"

int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  using ssal::ndgrad::Tensor;

  const fs::path out = argc > 1 ? argv[1] : "fft_weights_out";
  const double r = argc > 2 ? std::atof(argv[2]) : ssal::fftattn::kDefaultRadius;
  fs::create_directories(out);

  const std::size_t n = 32;
  Tensor field({n, n});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double dy = std::abs(double(y) - 15.5), dx = std::abs(double(x) - 15.5);
      field[y * n + x] = 1.0 / (1.0 + std::exp(2.0 * (std::max(dx, dy) - 6.0)));
    }

  const Tensor w = ssal::fftattn::hpf_weight_map(field, r);
  ssal::fftattn::write_pgm(out / "field.pgm", field);
  ssal::fftattn::write_pgm(out / "weights.pgm", w);

  // Coarse text view, every other row.
  const char* ramp = " .:-=+*#%@";
  for (std::size_t y = 0; y < n; y += 2) {
    for (std::size_t x = 0; x < n; ++x) std::putchar(ramp[std::min<int>(9, int(w[y * n + x] * 10))]);
    std::putchar('\n');
  }
  std::printf("wrote %s\n", (out / "weights.pgm").string().c_str());
}
