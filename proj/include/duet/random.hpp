#pragma once

#include <cstdint>
#include <random>

namespace duet {

// Seeded generator used everywhere randomness enters. Streams derived with
// fork() are independent of how much the parent has been consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  double uniform();  // [0, 1)
  double normal();   // N(0, 1)
  std::size_t below(std::size_t n);
  bool bernoulli(double p);
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace duet
