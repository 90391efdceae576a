#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lway {

// Planar float image, channels x height x width, nominal range [0, 1].
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, float fill = 0.0f)
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {}

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const noexcept { return data_.empty(); }

  float& at(int c, int y, int x) noexcept { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  float at(int c, int y, int x) const noexcept { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }

  std::span<float> data() & noexcept { return data_; }
  std::span<const float> data() const& noexcept { return data_; }
  std::span<const float> data() && = delete;  // would dangle

  std::span<float> channel(int c) noexcept { return {data_.data() + c * plane(), plane()}; }
  std::span<const float> channel(int c) const noexcept { return {data_.data() + c * plane(), plane()}; }

  bool same_shape(const Image& o) const noexcept {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

// Crop a (height x width) window with top-left corner (row, col).
Image crop(const Image& img, int row, int col, int height, int width);

}  // namespace lway
