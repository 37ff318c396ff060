#include "medvt/rng.hpp"

#include <cmath>

namespace medvt {

namespace {
uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

double Rng::normal() {
  // Box-Muller; u1 shifted away from 0.
  const double u1 = (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  const uint64_t span = static_cast<uint64_t>(hi - lo + 1);
  return lo + static_cast<int64_t>(eng_() % span);
}

Rng Rng::fork(uint64_t stream) const { return Rng(splitmix64(seed_ ^ splitmix64(stream))); }

Tensor Rng::normal_tensor(Shape shape, double mean, double stddev, Dtype dt) {
  Tensor t(std::move(shape), dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, mean + stddev * normal());
  return t;
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi, Dtype dt) {
  Tensor t(std::move(shape), dt);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, uniform(lo, hi));
  return t;
}

}  // namespace medvt
