#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace lway::ag {

// Dense row-major tensor. Networks use the [N, C, H, W] layout; vectors are
// [N, D] and scalars [1].
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)), data(count(shape), fill) {}

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const noexcept { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  int rank() const noexcept { return static_cast<int>(shape.size()); }

  T* ptr() noexcept { return data.data(); }
  const T* ptr() const noexcept { return data.data(); }

  // Offset of sample n in an [N, ...] tensor.
  std::size_t sample_size() const { return shape.empty() ? 0 : data.size() / static_cast<std::size_t>(shape[0]); }
  std::span<T> sample(int n) { return {data.data() + n * sample_size(), sample_size()}; }
  std::span<const T> sample(int n) const { return {data.data() + n * sample_size(), sample_size()}; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::string shape_string(const std::vector<int>& shape);

}  // namespace lway::ag
