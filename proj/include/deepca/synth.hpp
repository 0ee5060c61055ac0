#pragma once

#include <cstdint>
#include <vector>

#include "deepca/rng.hpp"
#include "deepca/tensor.hpp"

namespace deepca::synth {

// Random dictionary with unit-norm columns (d x k). coherence in [0, 1)
// mixes every column with a shared direction, raising pairwise column
// correlation.
Tensor dictionary_gen(std::size_t d, std::size_t k, double coherence, std::uint64_t seed);

// Nonnegative sparse coefficient vector: each coordinate is active with
// probability `density`, active values uniform in [0.5, 1.5].
Tensor sparse_code_gen(std::size_t k, double density, std::uint64_t seed);

// Piecewise-smooth 2-D field (sum of random planar patches) with a random
// observation mask. The number of observed pixels is floor(mask_density *
// h * w); observations equal the ground truth plus Gaussian noise of the
// given level (exactly equal when noise == 0).
struct DepthField {
  Tensor truth;                          // (h, w)
  std::vector<std::size_t> mask;         // strictly increasing flat indices
  Tensor observed;                       // values at mask positions
};

DepthField depth_field_gen(std::size_t h, std::size_t w, std::size_t patches, double mask_density,
                           double noise, std::uint64_t seed);

}  // namespace deepca::synth
