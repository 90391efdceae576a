#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "lway/image.hpp"

namespace lway::imaging {

// Reads an 8-bit grayscale or RGB PNG; values become v / 255.
Image load_image(const std::filesystem::path& path);

// Writes an 8-bit PNG; each value maps to floor(v * 255 + 0.5) clamped to [0, 255].
void save_image(const Image& img, const std::filesystem::path& path);

// Quantization rule used by save_image, exposed for tests and heatmaps.
unsigned char quantize(float v) noexcept;

struct PatchGrid {
  std::vector<Image> patches;
  std::vector<std::pair<int, int>> origins;  // (row, col) per patch
  int size = 0;
  int stride = 0;
};

// Row-major sliding window; borders that cannot hold a full patch are dropped.
PatchGrid extract_patches(const Image& img, int size, int stride);

inline constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE) on the [0, 1] range, capped at kPsnrCap.
double psnr(const Image& a, const Image& b);

// Mean SSIM over an 11x11 Gaussian window (sigma 1.5, valid region),
// C1 = 0.01^2, C2 = 0.03^2, averaged over channels. Computed on RGB directly.
double ssim(const Image& a, const Image& b);

}  // namespace lway::imaging
