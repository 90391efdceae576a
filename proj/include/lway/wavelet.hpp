#pragma once

#include "lway/image.hpp"

namespace lway::wavelet {

// Single-level orthonormal Haar subbands, each [C, H/2, W/2]. For a 2x2 block
// [a b; c d]:  LL = (a+b+c+d)/2, LH = (a+b-c-d)/2, HL = (a-b+c-d)/2, HH = (a-b-c+d)/2.
// LH responds to horizontal edges, HL to vertical edges.
struct Subbands {
  Image ll, lh, hl, hh;
};

Subbands dwt_haar(const Image& img);

// Exact inverse of dwt_haar; no range clamping.
Image idwt_haar(const Subbands& sub);

struct WeightMap {
  Image weights;  // [1, H, W], every element in [floor, 1]
  float floor = 0.0f;
};

inline constexpr float kDefaultWeightFloor = 0.05f;

// High-frequency emphasis map: channel mean of sqrt(LH^2 + HL^2 + HH^2),
// nearest-neighbour upsampled 2x, min-max normalised per image, floored.
// A flat image yields W == floor everywhere.
WeightMap hf_weight_map(const Image& lr, float w_floor = kDefaultWeightFloor);

// Sum of squares over the three detail subbands.
double hf_energy(const Image& img);

}  // namespace lway::wavelet
