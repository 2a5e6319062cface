#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace grover {

// Seeded generator used everywhere randomness is needed. The engine's output
// sequence is fixed by the standard, and every distribution below is computed
// by hand, so a seed reproduces the same draws on any conforming toolchain
// (std::uniform_real_distribution and friends are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in the open interval (0, 1).
  double uniform_open01() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform in (-r, r); r == 0 yields exactly 0.
  double symmetric(double r) { return r * (2.0 * uniform_open01() - 1.0); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; the spare value is cached.
  double normal();

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Independent child seed for (parent, tag...). Used for per-meta-epoch and
// per-sweep-point seeds so runs are reproducible and decorrelated.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b);

// 64-bit FNV-1a, used for manifest hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace grover
