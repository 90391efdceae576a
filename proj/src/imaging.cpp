#include "lway/imaging.hpp"

#include <png.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>

#include "lway/errors.hpp"

namespace lway::imaging {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

unsigned char quantize(float v) noexcept {
  if (!(v > 0.0f)) return 0;  // also maps NaN to 0
  const double scaled = std::floor(static_cast<double>(v) * 255.0 + 0.5);
  return static_cast<unsigned char>(std::min(scaled, 255.0));
}

Image load_image(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open image '" + path.string() + "'");

  std::array<unsigned char, 8> sig{};
  if (std::fread(sig.data(), 1, sig.size(), fp.get()) != sig.size() || png_sig_cmp(sig.data(), 0, 8) != 0)
    throw FormatError("'" + path.string() + "' is not a PNG file");

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }

  Image img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  volatile int channels = 0;  // assigned after setjmp
  std::string format_problem;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG '" + path.string() + "': " + err);
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);

  if (depth != 8) {
    format_problem = "unsupported bit depth " + std::to_string(depth);
  } else if (color == PNG_COLOR_TYPE_GRAY) {
    channels = 1;
  } else if (color == PNG_COLOR_TYPE_RGB) {
    channels = 3;
  } else {
    format_problem = "unsupported color type (only 8-bit gray or RGB without alpha)";
  }

  if (format_problem.empty()) {
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    buffer.resize(stride * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);

  if (!format_problem.empty()) throw FormatError("'" + path.string() + "': " + format_problem);

  img = Image(channels, static_cast<int>(height), static_cast<int>(width));
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = static_cast<float>(buffer[(static_cast<std::size_t>(y) * width + x) * channels + c] / 255.0);
  return img;
}

void save_image(const Image& img, const std::filesystem::path& path) {
  if (img.channels() != 1 && img.channels() != 3)
    throw ArgumentError("save_image expects 1 or 3 channels, got " + std::to_string(img.channels()));

  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot write image '" + path.string() + "'");

  const int channels = img.channels();
  const std::size_t stride = static_cast<std::size_t>(img.width()) * channels;
  std::vector<unsigned char> buffer(stride * img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < channels; ++c)
        buffer[y * stride + static_cast<std::size_t>(x) * channels + c] = quantize(img.at(c, y, x));
  std::vector<png_bytep> rows(img.height());
  for (int y = 0; y < img.height(); ++y) rows[y] = buffer.data() + y * stride;

  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing '" + path.string() + "': " + err);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width(), img.height(), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

PatchGrid extract_patches(const Image& img, int size, int stride) {
  if (stride < 1) throw ArgumentError("patch stride must be >= 1");
  if (size < 1 || size > img.height() || size > img.width())
    throw ArgumentError("patch size " + std::to_string(size) + " exceeds image extent " +
                        std::to_string(img.height()) + "x" + std::to_string(img.width()));
  PatchGrid grid;
  grid.size = size;
  grid.stride = stride;
  for (int r = 0; r + size <= img.height(); r += stride)
    for (int c = 0; c + size <= img.width(); c += stride) {
      grid.patches.push_back(crop(img, r, c, size, size));
      grid.origins.emplace_back(r, c);
    }
  return grid;
}

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b) || a.empty()) throw ArgumentError("psnr: image shapes differ");
  double sum = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - db[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(da.size());
  if (mse < 1e-12) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    g[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Separable valid-region filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w,
                                 const std::array<double, kSsimWindow>& g) {
  const int ow = w - kSsimWindow + 1;
  const int oh = h - kSsimWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[k] * src[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ArgumentError("ssim: image shapes differ");
  if (a.height() < kSsimWindow || a.width() < kSsimWindow)
    throw ArgumentError("ssim: image smaller than the 11x11 window");

  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto g = gaussian_window();
  const int h = a.height();
  const int w = a.width();
  const std::size_t n = a.plane();

  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    const auto pa = a.channel(c);
    const auto pb = b.channel(c);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = pa[i];
      y[i] = pb[i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g);
    const auto my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g);
    const auto syy = filter_valid(yy, h, w, g);
    const auto sxy = filter_valid(xy, h, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / a.channels();
}

}  // namespace lway::imaging
