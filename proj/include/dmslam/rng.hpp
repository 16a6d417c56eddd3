#pragma once

#include <cstdint>
#include <limits>
#include <random>

#include "dmslam/types.hpp"

namespace dmslam {

// Counter-based generator: the i-th output is a pure function of (key, i), so any
// stream can be reconstructed from its key without replaying other streams.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key = 0) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // Circular complex normal with E|w|^2 = var.
  cd complex_normal(double var);
  double gamma(double shape, double scale);

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_;
};

// Stream identities. Each (seed, step, entity, index) tuple owns an independent stream.
enum class Entity : std::uint32_t {
  MtInit = 1,
  MtPredict,
  MtResample,
  MtRegularize,
  NoiseInit,
  NoisePredict,
  NoiseResample,
  NoiseRegularize,
  PfPredict,
  PfResample,
  PfRegularize,
  BirthGrid,
  BirthDraw,
  Trajectory,
  Surface,
  Amplitude,
  Noise,
  Test,
};

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t step, Entity entity,
                         std::uint64_t sub = 0, std::uint64_t index = 0);

inline CounterRng make_stream(std::uint64_t seed, std::uint64_t step, Entity entity,
                              std::uint64_t sub = 0, std::uint64_t index = 0) {
  return CounterRng(stream_key(seed, step, entity, sub, index));
}

}  // namespace dmslam
