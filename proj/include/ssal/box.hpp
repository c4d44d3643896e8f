#pragma once

#include <algorithm>
#include <cstdint>
#include <span>

namespace ssal {

// Inclusive pixel box. x1 < x0 (or y1 < y0) marks "no box".
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = -1;
  int y1 = -1;

  static constexpr Box none() { return Box{}; }
  constexpr bool empty() const { return x1 < x0 || y1 < y0; }
  constexpr long area() const { return empty() ? 0 : long(x1 - x0 + 1) * long(y1 - y0 + 1); }
  constexpr double center_x() const { return 0.5 * (x0 + x1); }
  constexpr double center_y() const { return 0.5 * (y0 + y1); }

  friend constexpr bool operator==(const Box&, const Box&) = default;
};

// Tight bounding box of the nonzero pixels of an H x W mask.
inline Box tight_box(std::span<const std::uint8_t> mask, int height, int width) {
  Box b{width, height, -1, -1};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (!mask[static_cast<std::size_t>(y) * width + x]) continue;
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x);
      b.y1 = std::max(b.y1, y);
    }
  return b.empty() ? Box::none() : b;
}

}  // namespace ssal
