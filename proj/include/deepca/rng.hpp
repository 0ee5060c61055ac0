#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace deepca {

// Seeded RNG with hand-rolled distributions. std::*_distribution is
// implementation-defined and carries hidden state, which breaks both
// cross-run reproducibility and checkpoint round-trips; everything here
// consumes a well-defined number of engine draws and the serialized state
// is just the mt19937_64 stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller without the cached second deviate; each call consumes
  // exactly two engine draws.
  double normal(double mean = 0.0, double stddev = 1.0);

  // Uniform index in [0, n), rejection-sampled to avoid modulo bias.
  std::size_t index(std::size_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

  std::string serialize() const;
  static Rng deserialize(const std::string& text);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace deepca
