#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace cdrl {

// Seeded random stream. Every Monte-Carlo path and every training run owns one;
// substreams are derived deterministically from (seed, index) so results do not
// depend on evaluation order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static Rng substream(std::uint64_t seed, std::uint64_t index);

  double normal();
  double uniform();  // [0, 1)
  std::size_t index(std::size_t n);
  bool bernoulli(double p);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace cdrl
