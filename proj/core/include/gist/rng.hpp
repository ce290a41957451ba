#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>

namespace gist {

/// xoshiro256** seeded through splitmix64. Every operation is defined on
/// integers or with IEEE-exact arithmetic (plus std::log/std::sqrt for
/// normals), so streams do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed);

  /// Restores a generator captured with state().
  static Rng from_state(const State& state, std::uint64_t seed = 0);

  /// An independent stream derived from the seed and a stream id. Does not
  /// advance this generator.
  Rng split(std::uint64_t stream) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal, Marsaglia polar method without caching.
  double normal();
  /// Uniform integer in [0, n). n > 0.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  const State& state() const noexcept { return state_; }
  std::uint64_t seed() const noexcept { return seed_; }

  bool operator==(const Rng&) const = default;

 private:
  Rng() = default;
  State state_{};
  std::uint64_t seed_ = 0;
};

std::uint64_t splitmix64(std::uint64_t& x);

}  // namespace gist
