#include "dernn/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dernn/rng.hpp"

namespace dernn {

namespace {

struct Spectrum {
  double base, amp, center, width;
  double at(double t) const { return base + amp * std::exp(-(t - center) * (t - center) / (2.0 * width * width)); }
};

Spectrum random_spectrum(Rng& rng) {
  return {uniform(rng, 0.1, 0.3), uniform(rng, 0.3, 0.65), uniform(rng, 0.0, 1.0), uniform(rng, 0.15, 0.4)};
}

}  // namespace

Tensor make_phantom(Index h, Index w, Index bands, std::uint64_t seed) {
  if (h < 1 || w < 1 || bands < 1) throw InvalidShape("phantom extents must be positive");
  Rng rng = make_rng(seed, Stream::kPhantom);
  Tensor cube({h, w, bands});
  const double phase = uniform(rng, 0.0, std::numbers::pi);
  auto t_of = [bands](Index n) { return bands == 1 ? 0.5 : static_cast<double>(n) / static_cast<double>(bands - 1); };

  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      const double s = 0.5 * (static_cast<double>(r) / h + static_cast<double>(c) / w);
      for (Index n = 0; n < bands; ++n) {
        cube(r, c, n) = 0.15 + 0.2 * s + 0.1 * std::cos(std::numbers::pi * t_of(n) + phase);
      }
    }
  }

  constexpr int kShapes = 5;
  for (int k = 0; k < kShapes; ++k) {
    const Spectrum sp = random_spectrum(rng);
    const bool disc = k % 2 == 1;
    const double cy = uniform(rng, 0.15, 0.85) * h, cx = uniform(rng, 0.15, 0.85) * w;
    const double ry = uniform(rng, 0.08, 0.25) * h, rx = uniform(rng, 0.08, 0.25) * w;
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        const double dy = (r + 0.5 - cy) / ry, dx = (c + 0.5 - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (!inside) continue;
        for (Index n = 0; n < bands; ++n) cube(r, c, n) = sp.at(t_of(n));
      }
    }
  }
  for (double& v : cube.values()) v = std::clamp(v, 0.0, 1.0);
  return cube;
}

}  // namespace dernn
