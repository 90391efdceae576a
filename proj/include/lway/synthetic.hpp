#pragma once

#include <cstdint>

#include "lway/image.hpp"

namespace lway::synthetic {

// Procedural RGB test scene: gradient background overlaid with hard-edged
// rectangles, ellipses, bars and grating patches. Deterministic in seed.
Image make_scene(int height, int width, std::uint64_t seed);

}  // namespace lway::synthetic
