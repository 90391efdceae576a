#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace lway::analysis {

using Rows = std::vector<std::vector<float>>;

// Projection onto the two leading principal axes of the centred rows.
// Axis signs are fixed so that the largest-magnitude loading is positive.
std::vector<std::array<double, 2>> pca_2d(const Rows& x);

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
};

// Multinomial logistic regression on standardised features, trained by full
// batch gradient descent on a seeded random split.
ProbeResult linear_probe(const Rows& x, const std::vector<int>& labels, double holdout, std::uint64_t seed);

}  // namespace lway::analysis
