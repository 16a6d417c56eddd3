#include "dmslam/rng.hpp"

#include <cmath>

namespace dmslam {

std::uint64_t CounterRng::mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double CounterRng::normal() { return normal_(*this); }

cd CounterRng::complex_normal(double var) {
  const double s = std::sqrt(0.5 * var);
  const double re = normal();
  const double im = normal();
  return {s * re, s * im};
}

double CounterRng::gamma(double shape, double scale) {
  std::gamma_distribution<double> g(shape, scale);
  return g(*this);
}

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t step, Entity entity, std::uint64_t sub,
                         std::uint64_t index) {
  std::uint64_t h = CounterRng::mix(seed ^ 0xD1B54A32D192ED03ULL);
  h = CounterRng::mix(h ^ (step + 0x8CB92BA72F3D8DD7ULL));
  h = CounterRng::mix(h ^ (static_cast<std::uint64_t>(entity) * 0xA24BAED4963EE407ULL));
  h = CounterRng::mix(h ^ (sub + 0x9FB21C651E98DF25ULL));
  h = CounterRng::mix(h ^ (index * 0xC2B2AE3D27D4EB4FULL + 1));
  return h;
}

}  // namespace dmslam
