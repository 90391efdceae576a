#include <doctest.h>

#include <cmath>

#include "lway/degrade.hpp"
#include "lway/errors.hpp"
#include "lway/rng.hpp"
#include "lway/synthetic.hpp"

#include "test_util.hpp"

using namespace lway;
using namespace lway::degrade;

namespace {

double mean(const Image& img) {
  double s = 0.0;
  for (float v : img.data()) s += v;
  return s / static_cast<double>(img.size());
}

}  // namespace

TEST_CASE("sample_degradation is deterministic and honours ranges") {
  DegradationFamily point{"point", {1.25, 1.25}, {7}, {2}, {0.02, 0.02}, Range<int>{40, 40}, 9};
  for (std::uint64_t i : {0ull, 1ull, 77ull}) {
    const auto s = sample_degradation(point, i);
    CHECK(s.blur_sigma == 1.25);
    CHECK(s.blur_kernel == 7);
    CHECK(s.scale == 2);
    CHECK(s.noise_sigma == 0.02);
    CHECK(s.jpeg_quality == 40);
  }

  DegradationFamily fam{"wide", {0.5, 3.0}, {7, 11, 17}, {2, 4}, {0.0, 0.05}, std::nullopt, 1234};
  CHECK(sample_degradation(fam, 5) == sample_degradation(fam, 5));
  CHECK(sample_degradation(fam, 5) != sample_degradation(fam, 6));

  double lo = 10, hi = -10, sum = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const double s = sample_degradation(fam, i).blur_sigma;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
    sum += s;
  }
  CHECK(lo >= 0.5);
  CHECK(hi <= 3.0);
  CHECK(sum / 1000 >= 1.6);
  CHECK(sum / 1000 <= 1.9);

  DegradationFamily empty = fam;
  empty.noise_sigma = {0.1, 0.0};
  CHECK_THROWS_AS(sample_degradation(empty, 0), ConfigError);
  empty = fam;
  empty.scale.clear();
  CHECK_THROWS_AS(sample_degradation(empty, 0), ConfigError);
}

TEST_CASE("apply_degradation shape and fixed points") {
  const Image flat(3, 32, 32, 0.3f);
  DegradationSpec s;
  s.scale = 2;
  const Image out = apply_degradation(flat, s);
  CHECK(out.height() == 16);
  CHECK(out.width() == 16);
  for (float v : out.data()) CHECK(v == doctest::Approx(0.3f).epsilon(1e-6));

  s.blur_kernel = 11;
  s.blur_sigma = 2.0;
  for (float v : testutil::values(apply_degradation(flat, s))) CHECK(v == doctest::Approx(0.3f).epsilon(1e-6));

  CHECK_THROWS_AS(apply_degradation(Image(3, 30, 31), s), ArgumentError);
  s.blur_kernel = 8;
  CHECK_THROWS_AS(apply_degradation(flat, s), ArgumentError);
}

TEST_CASE("2x2 area average of a period-2 checkerboard is uniform 0.5") {
  Image board(3, 16, 16);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) board.at(c, y, x) = static_cast<float>((x + y) % 2);
  DegradationSpec s;
  s.scale = 2;
  for (float v : testutil::values(apply_degradation(board, s))) CHECK(v == 0.5f);
}

TEST_CASE("blurring a delta reproduces the kernel centre coefficient") {
  Image delta(1, 21, 21, 0.0f);
  delta.at(0, 10, 10) = 1.0f;
  const Image b = gaussian_blur(delta, 1.0, 7);
  // Independent oracle: separable Gaussian centre tap squared.
  double sum = 0.0;
  for (int i = -3; i <= 3; ++i) sum += std::exp(-i * i / 2.0);
  const double centre = 1.0 / sum;
  CHECK(b.at(0, 10, 10) == doctest::Approx(centre * centre).epsilon(1e-6));
  double total = 0.0;
  for (float v : b.data()) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("noise-free degradation is bit-deterministic; noisy mean stays bounded") {
  const Image hr = synthetic::make_scene(64, 64, 3);
  DegradationSpec s{1.5, 11, 4, 0.0, 50, 0};
  CHECK(apply_degradation(hr, s) == apply_degradation(hr, s));

  const Image grey(3, 64, 64, 0.5f);
  const double sigma = 0.05;
  int inside = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    DegradationSpec n{0.0, 0, 2, sigma, std::nullopt, seed};
    const double m = mean(apply_degradation(grey, n));
    inside += std::abs(m - 0.5) <= 3.0 * sigma;
  }
  CHECK(inside >= 198);
}

TEST_CASE("jpeg-like compression distorts but keeps range and shape") {
  const Image hr = synthetic::make_scene(40, 36, 8);
  const Image q15 = jpeg_like_compress(hr, 15);
  const Image q95 = jpeg_like_compress(hr, 95);
  REQUIRE(q15.same_shape(hr));
  double e15 = 0, e95 = 0;
  for (std::size_t i = 0; i < hr.size(); ++i) {
    CHECK(q15.data()[i] >= 0.0f);
    CHECK(q15.data()[i] <= 1.0f);
    e15 += std::abs(q15.data()[i] - hr.data()[i]);
    e95 += std::abs(q95.data()[i] - hr.data()[i]);
  }
  CHECK(e15 > e95);
  for (float v : testutil::values(jpeg_like_compress(Image(3, 16, 16, 0.4f), 20))) CHECK(v == doctest::Approx(0.4f).epsilon(0.01));
}

TEST_CASE("bicubic_downsample contracts") {
  for (float v : testutil::values(bicubic_downsample(Image(3, 128, 128, 0.7f), 4))) CHECK(v == doctest::Approx(0.7f).epsilon(1e-6));
  const Image small = bicubic_downsample(Image(3, 128, 128), 4);
  CHECK(small.height() == 32);
  CHECK(small.width() == 32);
  CHECK_THROWS_AS(bicubic_downsample(Image(3, 30, 32), 4), ArgumentError);

  // A horizontal ramp sampled at pixel centres; interior pixels must match
  // the ramp evaluated at the output pixel centre.
  const int n = 64, s = 2;
  Image ramp(1, n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) ramp.at(0, y, x) = static_cast<float>((x + 0.5) / n);
  const Image out = bicubic_downsample(ramp, s);
  for (int y = 0; y < n / s; ++y)
    for (int x = 4; x < n / s - 4; ++x) CHECK(out.at(0, y, x) == doctest::Approx(((x + 0.5) * s) / n).epsilon(1e-6));
}

TEST_CASE("DegradationSpec and family JSON") {
  DegradationSpec s{1.5, 11, 4, 0.01, 30, 42};
  nlohmann::json j = s;
  CHECK(j.at("order") == DegradationSpec::kOrder);
  CHECK(j.get<DegradationSpec>() == s);

  const auto fam = nlohmann::json::parse(R"({"name":"b","blur_sigma":[0.5,2],"blur_kernel":[7,11],"scale":2,
                                             "noise_sigma":0.01,"jpeg_quality":null,"seed":3})")
                       .get<DegradationFamily>();
  CHECK(fam.blur_kernel == std::vector<int>{7, 11});
  CHECK(fam.scale == std::vector<int>{2});
  CHECK(fam.noise_sigma.lo == 0.01);
  CHECK_FALSE(fam.jpeg_quality.has_value());
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"name":"x","bogus":1})").get<DegradationFamily>(), ConfigError);
}
