#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace djscc {

/// Seeded xoshiro256** generator with explicit stream splitting.
///
/// Streams are derived by hashing (seed, stream id) through splitmix64, so a
/// child stream depends only on its parent's seed and the id, never on how
/// many numbers the parent has already produced. Gaussian draws use
/// Box-Muller on our own uniforms, so the stream does not depend on the
/// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  Rng split(std::uint64_t stream) const;

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  void fill_normal(std::span<double> out, double stddev);
  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace djscc
