#include "lway/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "lway/rng.hpp"

namespace lway::synthetic {
namespace {

using Color = std::array<float, 3>;

Color random_color(Rng& rng) {
  return {static_cast<float>(uniform(rng, 0.05, 0.95)), static_cast<float>(uniform(rng, 0.05, 0.95)),
          static_cast<float>(uniform(rng, 0.05, 0.95))};
}

void put(Image& img, int y, int x, const Color& c) {
  for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c[static_cast<std::size_t>(ch)];
}

}  // namespace

Image make_scene(int height, int width, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5CE));
  Image img(3, height, width);

  const Color a = random_color(rng), b = random_color(rng);
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double diag = std::hypot(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double t = std::clamp(0.5 + ((x - width / 2.0) * ca + (y - height / 2.0) * sa) / diag, 0.0, 1.0);
      for (int ch = 0; ch < 3; ++ch)
        img.at(ch, y, x) = static_cast<float>((1.0 - t) * a[static_cast<std::size_t>(ch)] + t * b[static_cast<std::size_t>(ch)]);
    }

  const int shapes = uniform_int(rng, 6, 12);
  for (int s = 0; s < shapes; ++s) {
    const Color c = random_color(rng);
    const int kind = uniform_int(rng, 0, 4);
    const int cy = uniform_int(rng, 0, height - 1);
    const int cx = uniform_int(rng, 0, width - 1);
    const int ry = uniform_int(rng, std::max(2, height / 16), std::max(3, height / 3));
    const int rx = uniform_int(rng, std::max(2, width / 16), std::max(3, width / 3));
    if (kind == 0) {  // rectangle
      for (int y = std::max(0, cy - ry); y < std::min(height, cy + ry); ++y)
        for (int x = std::max(0, cx - rx); x < std::min(width, cx + rx); ++x) put(img, y, x, c);
    } else if (kind == 1) {  // ellipse
      for (int y = std::max(0, cy - ry); y < std::min(height, cy + ry + 1); ++y)
        for (int x = std::max(0, cx - rx); x < std::min(width, cx + rx + 1); ++x) {
          const double u = static_cast<double>(y - cy) / ry, v = static_cast<double>(x - cx) / rx;
          if (u * u + v * v <= 1.0) put(img, y, x, c);
        }
    } else if (kind == 2) {  // thick oriented bar
      const double th = uniform(rng, 0.0, std::numbers::pi);
      const double half = uniform(rng, 0.8, 2.5);
      const double len = std::max(rx, ry);
      const double dx = std::cos(th), dy = std::sin(th);
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const double px = x - cx, py = y - cy;
          const double along = px * dx + py * dy;
          const double across = -px * dy + py * dx;
          if (std::abs(along) <= len && std::abs(across) <= half) put(img, y, x, c);
        }
    } else if (kind == 3) {  // square-wave grating patch
      const int period = uniform_int(rng, 2, 8);
      const bool vertical = uniform_int(rng, 0, 1) == 1;
      for (int y = std::max(0, cy - ry); y < std::min(height, cy + ry); ++y)
        for (int x = std::max(0, cx - rx); x < std::min(width, cx + rx); ++x)
          if (((vertical ? x : y) / period) % 2 == 0) put(img, y, x, c);
    } else {  // checkerboard patch
      const int cell = uniform_int(rng, 2, 6);
      for (int y = std::max(0, cy - ry); y < std::min(height, cy + ry); ++y)
        for (int x = std::max(0, cx - rx); x < std::min(width, cx + rx); ++x)
          if (((x / cell) + (y / cell)) % 2 == 0) put(img, y, x, c);
    }
  }
  return img;
}

}  // namespace lway::synthetic
