#pragma once

#include <cstdint>

#include "dernn/tensor.hpp"

namespace dernn {

// Seeded synthetic scene in [0, 1]: a smooth spatial/spectral background
// gradient overlaid with rectangles and discs, each carrying its own smooth
// (Gaussian-bump) spectrum.
Tensor make_phantom(Index h, Index w, Index bands, std::uint64_t seed);

}  // namespace dernn
