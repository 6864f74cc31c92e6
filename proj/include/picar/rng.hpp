#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace picar {

// Deterministic random stream. The engine is std::mt19937_64 but every
// distribution is implemented here, so a (seed, call sequence) pair yields
// the same draws on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Derives an independent stream from a base seed, a stage tag and an
  // index. All randomness in the project flows through this so that one
  // base seed pins an entire study: stream = hash(base, tag, index).
  static Rng derive(std::uint64_t base_seed, std::string_view stage,
                    std::uint64_t index = 0);
  static std::uint64_t derive_seed(std::uint64_t base_seed,
                                   std::string_view stage,
                                   std::uint64_t index = 0);

  std::uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  double normal();                        // standard normal
  double gamma(double shape, double rate);
  double exponential(double rate);
  long poisson(double mean);
  int bernoulli(double p);
  // Category index in [0, k) from unnormalized nonnegative weights.
  int categorical(const double* weights, int k);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace picar
