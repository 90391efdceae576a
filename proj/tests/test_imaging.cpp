#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lway/errors.hpp"
#include "lway/imaging.hpp"
#include "lway/rng.hpp"
#include "test_util.hpp"

using namespace lway;
using namespace lway::imaging;

TEST_CASE("load_image scales bytes by 1/255") {
  testutil::TempDir dir;
  const auto path = dir.path() / "white.png";
  save_image(Image(3, 2, 2, 1.0f), path);
  const Image white = load_image(path);
  CHECK(white.channels() == 3);
  for (float v : white.data()) CHECK(v == 1.0f);

  Image one(1, 1, 1, 128.0f / 255.0f);
  save_image(one, dir.path() / "gray.png");
  const Image gray = load_image(dir.path() / "gray.png");
  CHECK(gray.channels() == 1);
  CHECK(gray.at(0, 0, 0) == doctest::Approx(0.50196).epsilon(1e-5));
}

TEST_CASE("save_image quantises with round-half-up and clamps") {
  CHECK(quantize(0.0f) == 0);
  CHECK(quantize(1.0f) == 255);
  CHECK(quantize(0.5f) == 128);
  CHECK(quantize(-0.3f) == 0);
  CHECK(quantize(1.7f) == 255);

  testutil::TempDir dir;
  save_image(Image(3, 4, 4, 0.0f), dir.path() / "black.png");
  for (float v : testutil::values(load_image(dir.path() / "black.png"))) CHECK(v == 0.0f);
}

TEST_CASE("save/load roundtrip error is within half a quantisation step") {
  testutil::TempDir dir;
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int c = trial % 2 ? 3 : 1;
    Image img(c, 8 + trial % 5, 9 + trial % 7);
    for (auto& v : img.data()) v = static_cast<float>(uniform(rng, 0.0, 1.0));
    const auto path = dir.path() / "rt.png";
    save_image(img, path);
    const Image back = load_image(path);
    REQUIRE(back.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(back.data()[i]) - img.data()[i]));
  }
  CHECK(worst <= 1.0 / 510.0 + 1e-7);
}

TEST_CASE("load_image error paths") {
  testutil::TempDir dir;
  CHECK_THROWS_AS(load_image(dir.path() / "missing.png"), IoError);
  {
    std::ofstream junk(dir.path() / "junk.png");
    junk << "not a png at all";
  }
  CHECK_THROWS_AS(load_image(dir.path() / "junk.png"), FormatError);
  CHECK_THROWS_AS(save_image(Image(3, 2, 2), dir.path() / "no" / "such" / "dir.png"), IoError);
}

TEST_CASE("extract_patches follows the closed-form count") {
  CHECK(extract_patches(Image(3, 128, 128), 128, 128).patches.size() == 1);
  CHECK(extract_patches(Image(3, 256, 256), 128, 128).patches.size() == 4);
  const auto grid = extract_patches(Image(1, 100, 70), 32, 16);
  CHECK(grid.patches.size() == 15);
  CHECK(grid.origins.front() == std::pair{0, 0});
  CHECK(grid.origins[1] == std::pair{0, 16});  // row-major scan
  CHECK_THROWS_AS(extract_patches(Image(1, 20, 20), 21, 1), ArgumentError);
  CHECK_THROWS_AS(extract_patches(Image(1, 20, 20), 8, 0), ArgumentError);

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = uniform_int(rng, 8, 60), w = uniform_int(rng, 8, 60);
    const int size = uniform_int(rng, 1, std::min(h, w));
    const int stride = uniform_int(rng, 1, 20);
    const auto g = extract_patches(Image(1, h, w), size, stride);
    const std::size_t expected = static_cast<std::size_t>((h - size) / stride + 1) * ((w - size) / stride + 1);
    CHECK(g.patches.size() == expected);
    for (const auto& [r, c] : g.origins) CHECK((r + size <= h && c + size <= w));
  }
}

TEST_CASE("psnr closed forms and symmetry") {
  const Image zero(3, 16, 16, 0.0f);
  CHECK(psnr(zero, zero) == kPsnrCap);
  CHECK(psnr(zero, Image(3, 16, 16, 0.1f)) == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(psnr(zero, Image(3, 16, 16, 1.0f)) == doctest::Approx(0.0));
  CHECK_THROWS_AS(psnr(zero, Image(3, 16, 15)), ArgumentError);

  Rng rng(11);
  Image a(3, 12, 12), b(3, 12, 12);
  for (auto& v : a.data()) v = static_cast<float>(uniform(rng, 0, 1));
  for (auto& v : b.data()) v = static_cast<float>(uniform(rng, 0, 1));
  CHECK(psnr(a, b) == psnr(b, a));
}

namespace {

// Direct per-window SSIM evaluation, independent of the separable filter path.
double ssim_bruteforce(const Image& a, const Image& b) {
  double g[11][11];
  double gs = 0.0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) gs += g[y][x] = std::exp(-((y - 5) * (y - 5) + (x - 5) * (x - 5)) / (2 * 1.5 * 1.5));
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    double acc = 0.0;
    int count = 0;
    for (int oy = 0; oy + 11 <= a.height(); ++oy)
      for (int ox = 0; ox + 11 <= a.width(); ++ox) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int y = 0; y < 11; ++y)
          for (int x = 0; x < 11; ++x) {
            const double w = g[y][x] / gs, p = a.at(c, oy + y, ox + x), q = b.at(c, oy + y, ox + x);
            mx += w * p;
            my += w * q;
            sxx += w * p * p;
            syy += w * q * q;
            sxy += w * p * q;
          }
        const double c1 = 1e-4, c2 = 9e-4;
        acc += (2 * mx * my + c1) * (2 * (sxy - mx * my) + c2) /
               ((mx * mx + my * my + c1) * (sxx - mx * mx + syy - my * my + c2));
        ++count;
      }
    total += acc / count;
  }
  return total / a.channels();
}

}  // namespace

TEST_CASE("ssim identities and brute-force agreement") {
  Rng rng(5);
  Image a(3, 24, 20);
  for (auto& v : a.data()) v = static_cast<float>(uniform(rng, 0, 1));
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  const Image half(3, 16, 16, 0.5f);
  CHECK(ssim(half, half) == doctest::Approx(1.0));

  Image inv = a;
  for (auto& v : inv.data()) v = 1.0f - v;
  const double s = ssim(a, inv);
  CHECK(s < 0.2);
  CHECK(s == doctest::Approx(ssim_bruteforce(a, inv)).epsilon(1e-9));

  Image b = a;
  for (auto& v : b.data()) v = std::clamp(v + static_cast<float>(normal(rng, 0, 0.05)), 0.0f, 1.0f);
  CHECK(ssim(a, b) == doctest::Approx(ssim_bruteforce(a, b)).epsilon(1e-9));
  CHECK_THROWS_AS(ssim(Image(3, 10, 30), Image(3, 10, 30)), ArgumentError);
}
