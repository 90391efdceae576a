#include "lway/degrade.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "lway/errors.hpp"
#include "lway/rng.hpp"

namespace lway::degrade {
namespace {

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

int symmetric(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

void check_divisible(const Image& img, int scale, const char* what) {
  if (scale < 1) throw ArgumentError(std::string(what) + ": scale must be >= 1");
  if (img.height() % scale != 0 || img.width() % scale != 0)
    throw ArgumentError(std::string(what) + ": image " + std::to_string(img.height()) + "x" +
                        std::to_string(img.width()) + " not divisible by scale " + std::to_string(scale));
}

}  // namespace

void validate(const DegradationSpec& s) {
  if (s.blur_kernel != 0 && (s.blur_kernel < 3 || s.blur_kernel % 2 == 0))
    throw ArgumentError("blur_kernel must be 0 or an odd size >= 3");
  if (!(s.blur_sigma >= 0.0)) throw ArgumentError("blur_sigma must be >= 0");
  if (s.scale != 2 && s.scale != 4) throw ArgumentError("scale must be 2 or 4");
  if (!(s.noise_sigma >= 0.0)) throw ArgumentError("noise_sigma must be >= 0");
  if (s.jpeg_quality && (*s.jpeg_quality < 10 || *s.jpeg_quality > 100))
    throw ArgumentError("jpeg_quality must lie in [10, 100]");
}

DegradationSpec sample_degradation(const DegradationFamily& f, std::uint64_t index) {
  if (f.blur_sigma.lo > f.blur_sigma.hi || f.noise_sigma.lo > f.noise_sigma.hi || f.blur_kernel.empty() ||
      f.scale.empty() || (f.jpeg_quality && f.jpeg_quality->lo > f.jpeg_quality->hi))
    throw ConfigError("degradation family '" + f.name + "' has an empty range");

  Rng rng(derive_seed(f.rng_seed, index));
  auto pick_real = [&](const Range<double>& r) { return r.lo == r.hi ? r.lo : uniform(rng, r.lo, r.hi); };
  auto pick_choice = [&](const std::vector<int>& v) {
    return v[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(v.size()) - 1))];
  };

  DegradationSpec s;
  s.blur_sigma = pick_real(f.blur_sigma);
  s.blur_kernel = pick_choice(f.blur_kernel);
  s.scale = pick_choice(f.scale);
  s.noise_sigma = pick_real(f.noise_sigma);
  if (f.jpeg_quality) s.jpeg_quality = uniform_int(rng, f.jpeg_quality->lo, f.jpeg_quality->hi);
  s.noise_seed = rng();
  validate(s);
  return s;
}

std::vector<double> gaussian_kernel(double sigma, int size) {
  if (size < 1 || size % 2 == 0) throw ArgumentError("gaussian kernel size must be odd");
  std::vector<double> k(static_cast<std::size_t>(size), 0.0);
  const int r = size / 2;
  if (sigma <= 0.0) {
    k[static_cast<std::size_t>(r)] = 1.0;
    return k;
  }
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - r;
    k[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

Image gaussian_blur(const Image& img, double sigma, int size) {
  const auto k = gaussian_kernel(sigma, size);
  const int r = size / 2;
  const int h = img.height();
  const int w = img.width();
  Image tmp(img.channels(), h, w);
  Image out(img.channels(), h, w);
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * img.at(c, y, reflect101(x + i, w));
        tmp.at(c, y, x) = static_cast<float>(s);
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp.at(c, reflect101(y + i, h), x);
        out.at(c, y, x) = static_cast<float>(s);
      }
  }
  return out;
}

Image area_downsample(const Image& img, int scale) {
  check_divisible(img, scale, "area_downsample");
  const int oh = img.height() / scale;
  const int ow = img.width() / scale;
  Image out(img.channels(), oh, ow);
  const double inv = 1.0 / (scale * scale);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int dy = 0; dy < scale; ++dy)
          for (int dx = 0; dx < scale; ++dx) s += img.at(c, y * scale + dy, x * scale + dx);
        out.at(c, y, x) = static_cast<float>(s * inv);
      }
  return out;
}

Image add_gaussian_noise(const Image& img, double sigma, std::uint64_t seed) {
  Image out = img;
  if (sigma <= 0.0) return out;
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& v : out.data()) v = static_cast<float>(std::clamp(v + dist(rng), 0.0, 1.0));
  return out;
}

namespace {

constexpr std::array<int, 64> kLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

std::array<double, 64> scaled_table(int quality) {
  const int q = std::clamp(quality, 1, 100);
  const int factor = q < 50 ? 5000 / q : 200 - 2 * q;
  std::array<double, 64> t{};
  for (std::size_t i = 0; i < 64; ++i) t[i] = std::clamp((kLumaTable[i] * factor + 50) / 100, 1, 255);
  return t;
}

struct Dct8 {
  std::array<double, 64> m{};  // m[u * 8 + x] = c(u) cos((2x + 1) u pi / 16)
  Dct8() {
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) m[u * 8 + x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
  }
};

void quantize_block(std::array<double, 64>& block, const std::array<double, 64>& table, const Dct8& d) {
  std::array<double, 64> tmp{};
  std::array<double, 64> coef{};
  for (int u = 0; u < 8; ++u)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += d.m[u * 8 + y] * block[y * 8 + x];
      tmp[u * 8 + x] = s;
    }
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += tmp[u * 8 + x] * d.m[v * 8 + x];
      coef[u * 8 + v] = std::round(s / table[u * 8 + v]) * table[u * 8 + v];
    }
  for (int y = 0; y < 8; ++y)
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += d.m[u * 8 + y] * coef[u * 8 + v];
      tmp[y * 8 + v] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += tmp[y * 8 + v] * d.m[v * 8 + x];
      block[y * 8 + x] = s;
    }
}

}  // namespace

Image jpeg_like_compress(const Image& img, int quality) {
  static const Dct8 dct;
  const auto table = scaled_table(quality);
  const int h = img.height();
  const int w = img.width();
  const int ch = img.channels();

  // Work in YCbCr (BT.601 full range) on the 0..255 scale for colour images.
  std::vector<std::vector<double>> planes(static_cast<std::size_t>(ch), std::vector<double>(img.plane()));
  for (std::size_t i = 0; i < img.plane(); ++i) {
    if (ch == 3) {
      const double r = img.channel(0)[i] * 255.0, g = img.channel(1)[i] * 255.0, b = img.channel(2)[i] * 255.0;
      planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b;
      planes[1][i] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
      planes[2][i] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
    } else {
      for (int c = 0; c < ch; ++c) planes[static_cast<std::size_t>(c)][i] = img.channel(c)[i] * 255.0;
    }
  }

  for (auto& p : planes) {
    for (int by = 0; by < h; by += 8)
      for (int bx = 0; bx < w; bx += 8) {
        std::array<double, 64> block{};
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) {
            const int sy = std::min(by + y, h - 1);
            const int sx = std::min(bx + x, w - 1);
            block[y * 8 + x] = p[static_cast<std::size_t>(sy) * w + sx] - 128.0;
          }
        quantize_block(block, table, dct);
        for (int y = 0; y < 8 && by + y < h; ++y)
          for (int x = 0; x < 8 && bx + x < w; ++x)
            p[static_cast<std::size_t>(by + y) * w + bx + x] = block[y * 8 + x] + 128.0;
      }
  }

  Image out(ch, h, w);
  for (std::size_t i = 0; i < img.plane(); ++i) {
    if (ch == 3) {
      const double y = planes[0][i], cb = planes[1][i] - 128.0, cr = planes[2][i] - 128.0;
      out.channel(0)[i] = static_cast<float>(std::clamp((y + 1.402 * cr) / 255.0, 0.0, 1.0));
      out.channel(1)[i] = static_cast<float>(std::clamp((y - 0.344136 * cb - 0.714136 * cr) / 255.0, 0.0, 1.0));
      out.channel(2)[i] = static_cast<float>(std::clamp((y + 1.772 * cb) / 255.0, 0.0, 1.0));
    } else {
      for (int c = 0; c < ch; ++c)
        out.channel(c)[i] = static_cast<float>(std::clamp(planes[static_cast<std::size_t>(c)][i] / 255.0, 0.0, 1.0));
    }
  }
  return out;
}

Image apply_degradation(const Image& hr, const DegradationSpec& spec) {
  validate(spec);
  check_divisible(hr, spec.scale, "apply_degradation");
  Image x = spec.blur_kernel > 0 ? gaussian_blur(hr, spec.blur_sigma, spec.blur_kernel) : hr;
  x = area_downsample(x, spec.scale);
  x = add_gaussian_noise(x, spec.noise_sigma, spec.noise_seed);
  if (spec.jpeg_quality) x = jpeg_like_compress(x, *spec.jpeg_quality);
  for (auto& v : x.data()) v = std::clamp(v, 0.0f, 1.0f);
  return x;
}

namespace {

double cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Contribution {
  std::vector<int> index;
  std::vector<double> weight;
};

// Per-output-sample tap lists along one axis.
std::vector<Contribution> contributions(int in, int out) {
  const double scale = static_cast<double>(out) / in;
  const double kscale = scale < 1.0 ? scale : 1.0;  // widen the kernel when shrinking
  const double support = 2.0 / kscale;
  std::vector<Contribution> taps(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    const double center = (o + 0.5) / scale - 0.5;
    const int first = static_cast<int>(std::floor(center - support));
    const int last = static_cast<int>(std::ceil(center + support));
    auto& t = taps[static_cast<std::size_t>(o)];
    double sum = 0.0;
    for (int i = first; i <= last; ++i) {
      const double wgt = kscale * cubic((center - i) * kscale);
      if (wgt == 0.0) continue;
      t.index.push_back(symmetric(i, in));
      t.weight.push_back(wgt);
      sum += wgt;
    }
    for (auto& wgt : t.weight) wgt /= sum;
  }
  return taps;
}

}  // namespace

Image resize_bicubic(const Image& img, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) throw ArgumentError("resize_bicubic: empty output size");
  const auto th = contributions(img.height(), out_height);
  const auto tw = contributions(img.width(), out_width);
  Image tmp(img.channels(), img.height(), out_width);
  Image out(img.channels(), out_height, out_width);
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < out_width; ++x) {
        const auto& t = tw[static_cast<std::size_t>(x)];
        double s = 0.0;
        for (std::size_t k = 0; k < t.index.size(); ++k) s += t.weight[k] * img.at(c, y, t.index[k]);
        tmp.at(c, y, x) = static_cast<float>(s);
      }
    for (int y = 0; y < out_height; ++y) {
      const auto& t = th[static_cast<std::size_t>(y)];
      for (int x = 0; x < out_width; ++x) {
        double s = 0.0;
        for (std::size_t k = 0; k < t.index.size(); ++k) s += t.weight[k] * tmp.at(c, t.index[k], x);
        out.at(c, y, x) = static_cast<float>(std::clamp(s, 0.0, 1.0));
      }
    }
  }
  return out;
}

Image bicubic_downsample(const Image& img, int scale) {
  check_divisible(img, scale, "bicubic_downsample");
  return resize_bicubic(img, img.height() / scale, img.width() / scale);
}

Image bicubic_upsample(const Image& img, int scale) {
  if (scale < 1) throw ArgumentError("bicubic_upsample: scale must be >= 1");
  return resize_bicubic(img, img.height() * scale, img.width() * scale);
}

// JSON ---------------------------------------------------------------------

void to_json(nlohmann::json& j, const DegradationSpec& s) {
  j = {{"blur_sigma", s.blur_sigma},   {"blur_kernel", s.blur_kernel}, {"scale", s.scale},
       {"noise_sigma", s.noise_sigma}, {"noise_seed", s.noise_seed},  {"order", DegradationSpec::kOrder}};
  j["jpeg_quality"] = s.jpeg_quality ? nlohmann::json(*s.jpeg_quality) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, DegradationSpec& s) {
  s = DegradationSpec{};
  s.blur_sigma = j.value("blur_sigma", 0.0);
  s.blur_kernel = j.value("blur_kernel", 0);
  s.scale = j.value("scale", 4);
  s.noise_sigma = j.value("noise_sigma", 0.0);
  s.noise_seed = j.value("noise_seed", std::uint64_t{0});
  if (j.contains("jpeg_quality") && !j.at("jpeg_quality").is_null()) s.jpeg_quality = j.at("jpeg_quality").get<int>();
}

namespace {

template <class V>
Range<V> read_range(const nlohmann::json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (v.is_number()) return {v.get<V>(), v.get<V>()};
  if (!v.is_array() || v.size() != 2) throw ConfigError("'" + key + "' must be a number or a [lo, hi] pair");
  return {v[0].get<V>(), v[1].get<V>()};
}

std::vector<int> read_choices(const nlohmann::json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (v.is_number_integer()) return {v.get<int>()};
  return v.get<std::vector<int>>();
}

}  // namespace

void to_json(nlohmann::json& j, const DegradationFamily& f) {
  j = {{"name", f.name},
       {"blur_sigma", {f.blur_sigma.lo, f.blur_sigma.hi}},
       {"blur_kernel", f.blur_kernel},
       {"scale", f.scale},
       {"noise_sigma", {f.noise_sigma.lo, f.noise_sigma.hi}},
       {"seed", f.rng_seed}};
  j["jpeg_quality"] = f.jpeg_quality ? nlohmann::json{f.jpeg_quality->lo, f.jpeg_quality->hi} : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, DegradationFamily& f) {
  static const std::vector<std::string> known = {"name",        "blur_sigma", "blur_kernel", "scale",
                                                 "noise_sigma", "jpeg_quality", "seed"};
  if (!j.is_object()) throw ConfigError("degradation family must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown key '" + key + "' in degradation family");
  f = DegradationFamily{};
  f.name = j.value("name", std::string{});
  if (j.contains("blur_sigma")) f.blur_sigma = read_range<double>(j, "blur_sigma");
  if (j.contains("blur_kernel")) f.blur_kernel = read_choices(j, "blur_kernel");
  if (j.contains("scale")) f.scale = read_choices(j, "scale");
  if (j.contains("noise_sigma")) f.noise_sigma = read_range<double>(j, "noise_sigma");
  if (j.contains("jpeg_quality") && !j.at("jpeg_quality").is_null())
    f.jpeg_quality = read_range<int>(j, "jpeg_quality");
  f.rng_seed = j.value("seed", std::uint64_t{0});
}

}  // namespace lway::degrade
