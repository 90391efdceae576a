#include "lway/image.hpp"

#include <algorithm>
#include <string>

#include "lway/errors.hpp"

namespace lway {

Image crop(const Image& img, int row, int col, int height, int width) {
  if (row < 0 || col < 0 || height <= 0 || width <= 0 || row + height > img.height() ||
      col + width > img.width()) {
    throw ArgumentError("crop window (" + std::to_string(row) + "," + std::to_string(col) + ") " +
                        std::to_string(height) + "x" + std::to_string(width) +
                        " exceeds image extent");
  }
  Image out(img.channels(), height, width);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < height; ++y) {
      const float* src = &img.data()[(static_cast<std::size_t>(c) * img.height() + row + y) * img.width() + col];
      std::copy(src, src + width, &out.at(c, y, 0));
    }
  return out;
}

}  // namespace lway
