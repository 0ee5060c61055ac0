#include "deepca/synth.hpp"

#include <algorithm>
#include <cmath>

#include "deepca/errors.hpp"

namespace deepca::synth {

Tensor dictionary_gen(std::size_t d, std::size_t k, double coherence, std::uint64_t seed) {
  if (d == 0 || k == 0) throw UsageError("dictionary_gen: sizes must be positive");
  if (coherence < 0.0 || coherence >= 1.0) {
    throw UsageError("dictionary_gen: coherence must be in [0, 1)");
  }
  Rng rng(seed);
  // Shared direction all columns lean towards.
  std::vector<double> common(d);
  double cn = 0.0;
  for (auto& v : common) {
    v = rng.normal();
    cn += v * v;
  }
  cn = std::sqrt(cn);
  for (auto& v : common) v /= cn;

  Tensor dict({d, k});
  for (std::size_t col = 0; col < k; ++col) {
    std::vector<double> g(d);
    double gn = 0.0;
    for (auto& v : g) {
      v = rng.normal();
      gn += v * v;
    }
    gn = std::sqrt(gn);
    double norm = 0.0;
    for (std::size_t row = 0; row < d; ++row) {
      const double v = (1.0 - coherence) * g[row] / gn + coherence * common[row];
      dict[row * k + col] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (std::size_t row = 0; row < d; ++row) dict[row * k + col] /= norm;
  }
  return dict;
}

Tensor sparse_code_gen(std::size_t k, double density, std::uint64_t seed) {
  if (density < 0.0 || density > 1.0) throw UsageError("sparse_code_gen: density must be in [0,1]");
  Rng rng(seed);
  Tensor code({k});
  for (std::size_t i = 0; i < k; ++i) {
    const double coin = rng.uniform01();
    const double value = rng.uniform(0.5, 1.5);
    code[i] = coin < density ? value : 0.0;
  }
  return code;
}

DepthField depth_field_gen(std::size_t h, std::size_t w, std::size_t patches, double mask_density,
                           double noise, std::uint64_t seed) {
  if (mask_density <= 0.0 || mask_density >= 1.0) {
    throw UsageError("depth_field_gen: mask density must be in (0, 1)");
  }
  Rng rng(seed);
  DepthField field;
  field.truth = Tensor({h, w});

  // Base plane plus random planar patches.
  const double base = rng.uniform(0.2, 0.8);
  for (std::size_t i = 0; i < h * w; ++i) field.truth[i] = base;
  for (std::size_t p = 0; p < patches; ++p) {
    const std::size_t r0 = rng.index(h);
    const std::size_t r1 = r0 + 1 + rng.index(h - r0);
    const std::size_t c0 = rng.index(w);
    const std::size_t c1 = c0 + 1 + rng.index(w - c0);
    const double offset = rng.uniform(-0.4, 0.4);
    const double slope_r = rng.uniform(-0.5, 0.5);
    const double slope_c = rng.uniform(-0.5, 0.5);
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = c0; c < c1; ++c) {
        const double fr = static_cast<double>(r - r0) / static_cast<double>(h);
        const double fc = static_cast<double>(c - c0) / static_cast<double>(w);
        field.truth[r * w + c] += offset + slope_r * fr + slope_c * fc;
      }
    }
  }

  // Observation mask: floor(mask_density * h * w) pixels without
  // replacement, reported in increasing order.
  const std::size_t observed =
      static_cast<std::size_t>(std::floor(mask_density * static_cast<double>(h * w)));
  std::vector<std::size_t> all(h * w);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  rng.shuffle(all);
  field.mask.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(observed));
  std::sort(field.mask.begin(), field.mask.end());

  field.observed = Tensor({observed});
  for (std::size_t i = 0; i < observed; ++i) {
    field.observed[i] = field.truth[field.mask[i]] + (noise > 0.0 ? rng.normal(0.0, noise) : 0.0);
  }
  return field;
}

}  // namespace deepca::synth
