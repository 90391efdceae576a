#include "lway/wavelet.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lway/errors.hpp"

namespace lway::wavelet {

Subbands dwt_haar(const Image& img) {
  if (img.empty() || img.height() % 2 != 0 || img.width() % 2 != 0)
    throw ArgumentError("dwt_haar needs even dimensions, got " + std::to_string(img.height()) + "x" +
                        std::to_string(img.width()));
  const int c = img.channels();
  const int h = img.height() / 2;
  const int w = img.width() / 2;
  Subbands s{Image(c, h, w), Image(c, h, w), Image(c, h, w), Image(c, h, w)};
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double a = img.at(ch, 2 * y, 2 * x);
        const double b = img.at(ch, 2 * y, 2 * x + 1);
        const double cc = img.at(ch, 2 * y + 1, 2 * x);
        const double d = img.at(ch, 2 * y + 1, 2 * x + 1);
        s.ll.at(ch, y, x) = static_cast<float>((a + b + cc + d) * 0.5);
        s.lh.at(ch, y, x) = static_cast<float>((a + b - cc - d) * 0.5);
        s.hl.at(ch, y, x) = static_cast<float>((a - b + cc - d) * 0.5);
        s.hh.at(ch, y, x) = static_cast<float>((a - b - cc + d) * 0.5);
      }
  return s;
}

Image idwt_haar(const Subbands& s) {
  if (!s.ll.same_shape(s.lh) || !s.ll.same_shape(s.hl) || !s.ll.same_shape(s.hh) || s.ll.empty())
    throw ArgumentError("idwt_haar: subband shapes differ");
  const int c = s.ll.channels();
  const int h = s.ll.height();
  const int w = s.ll.width();
  Image out(c, 2 * h, 2 * w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double ll = s.ll.at(ch, y, x);
        const double lh = s.lh.at(ch, y, x);
        const double hl = s.hl.at(ch, y, x);
        const double hh = s.hh.at(ch, y, x);
        out.at(ch, 2 * y, 2 * x) = static_cast<float>((ll + lh + hl + hh) * 0.5);
        out.at(ch, 2 * y, 2 * x + 1) = static_cast<float>((ll + lh - hl - hh) * 0.5);
        out.at(ch, 2 * y + 1, 2 * x) = static_cast<float>((ll - lh + hl - hh) * 0.5);
        out.at(ch, 2 * y + 1, 2 * x + 1) = static_cast<float>((ll - lh - hl + hh) * 0.5);
      }
  return out;
}

WeightMap hf_weight_map(const Image& lr, float w_floor) {
  if (!(w_floor >= 0.0f && w_floor < 1.0f)) throw ArgumentError("weight floor must lie in [0, 1)");
  const Subbands s = dwt_haar(lr);
  const int h = s.ll.height();
  const int w = s.ll.width();

  std::vector<double> mag(static_cast<std::size_t>(h) * w, 0.0);
  for (int ch = 0; ch < lr.channels(); ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double lh = s.lh.at(ch, y, x), hl = s.hl.at(ch, y, x), hh = s.hh.at(ch, y, x);
        mag[static_cast<std::size_t>(y) * w + x] += std::sqrt(lh * lh + hl * hl + hh * hh);
      }
  for (auto& m : mag) m /= lr.channels();

  const auto [lo_it, hi_it] = std::minmax_element(mag.begin(), mag.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;

  WeightMap map{Image(1, lr.height(), lr.width(), w_floor), w_floor};
  if (range <= 0.0) return map;
  for (int y = 0; y < lr.height(); ++y)
    for (int x = 0; x < lr.width(); ++x) {
      const double n = (mag[static_cast<std::size_t>(y / 2) * w + x / 2] - lo) / range;
      map.weights.at(0, y, x) = std::max(static_cast<float>(n), w_floor);
    }
  return map;
}

double hf_energy(const Image& img) {
  const Subbands s = dwt_haar(img);
  double e = 0.0;
  for (const Image* band : {&s.lh, &s.hl, &s.hh})
    for (float v : band->data()) e += static_cast<double>(v) * v;
  return e;
}

}  // namespace lway::wavelet
