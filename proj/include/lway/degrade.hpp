#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lway/image.hpp"

namespace lway::degrade {

// One concrete synthetic degradation. Stages always run in the order
// blur -> area downsample -> additive Gaussian noise -> block-DCT compression.
struct DegradationSpec {
  double blur_sigma = 0.0;               // isotropic Gaussian, pixels
  int blur_kernel = 0;                   // 0 = no blur, otherwise odd side length
  int scale = 4;                         // 2 or 4
  double noise_sigma = 0.0;              // on the [0, 1] range
  std::optional<int> jpeg_quality;       // [10, 100], absent = no compression
  std::uint64_t noise_seed = 0;

  static constexpr const char* kOrder = "blur>downsample>noise>compress";

  friend bool operator==(const DegradationSpec&, const DegradationSpec&) = default;
};

// Throws ArgumentError when the spec violates its field constraints.
void validate(const DegradationSpec& spec);

template <class V>
struct Range {
  V lo{};
  V hi{};
  friend bool operator==(const Range&, const Range&) = default;
};

// Sampler over DegradationSpecs. Integer-valued fields sample from explicit
// choice lists; continuous fields sample uniformly in [lo, hi].
struct DegradationFamily {
  std::string name;
  Range<double> blur_sigma{0.0, 0.0};
  std::vector<int> blur_kernel{0};
  std::vector<int> scale{4};
  Range<double> noise_sigma{0.0, 0.0};
  std::optional<Range<int>> jpeg_quality;
  std::uint64_t rng_seed = 0;
};

// Deterministic in (family.rng_seed, index); throws ConfigError on empty ranges.
DegradationSpec sample_degradation(const DegradationFamily& family, std::uint64_t index);

// Applies the full pipeline; output is (C, H/scale, W/scale) in [0, 1].
Image apply_degradation(const Image& hr, const DegradationSpec& spec);

// Individual stages, exposed for tests and reuse.
std::vector<double> gaussian_kernel(double sigma, int size);
Image gaussian_blur(const Image& img, double sigma, int size);  // reflect-101 padding
Image area_downsample(const Image& img, int scale);
Image add_gaussian_noise(const Image& img, double sigma, std::uint64_t seed);
Image jpeg_like_compress(const Image& img, int quality);

// Bicubic (a = -0.5) resampling with antialiasing on downscale and symmetric
// borders. Output clamped to [0, 1].
Image resize_bicubic(const Image& img, int out_height, int out_width);
Image bicubic_downsample(const Image& img, int scale);
Image bicubic_upsample(const Image& img, int scale);

void to_json(nlohmann::json& j, const DegradationSpec& s);
void from_json(const nlohmann::json& j, DegradationSpec& s);
void to_json(nlohmann::json& j, const DegradationFamily& f);
void from_json(const nlohmann::json& j, DegradationFamily& f);

}  // namespace lway::degrade
