#pragma once

#include <cstdint>
#include <random>

#include "medvt/tensor.hpp"

namespace medvt {

// Deterministic generator: std::mt19937_64 (fully specified by the standard)
// with explicit uniform/normal transforms, so identical seeds give identical
// streams across platforms. Distributions from <random> are not used because
// their output is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed), seed_(seed) {}

  uint64_t seed() const { return seed_; }
  uint64_t next_u64() { return eng_(); }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Box-Muller, one value per call (the cosine branch).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive bounds

  // Derives an independent stream; splitmix64 over (seed, stream id).
  Rng fork(uint64_t stream) const;

  Tensor normal_tensor(Shape shape, double mean, double stddev, Dtype dt = Dtype::f64);
  Tensor uniform_tensor(Shape shape, double lo, double hi, Dtype dt = Dtype::f64);

 private:
  std::mt19937_64 eng_;
  uint64_t seed_;
};

}  // namespace medvt
