#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace unist {

// Seed-derived deterministic random stream. Every stochastic component takes
// one of these explicitly, so a run is reproducible from its seed alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Stream for one (seed, sample, epoch) triple. Independent of the order in
  // which samples are visited, which keeps parallel loaders equal to serial.
  static Rng derive(std::uint64_t seed, std::string_view sample_id,
                    std::uint64_t epoch);
  static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

  // Uniform integer on [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Uniform real on [lo, hi).
  double uniform_real(double lo, double hi);
  bool bernoulli(double p);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t mix64(std::uint64_t x);

}  // namespace unist
