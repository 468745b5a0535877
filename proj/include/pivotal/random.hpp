#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

namespace pivotal {

std::uint64_t mix64(std::uint64_t z) noexcept;

/// Counter-based 64-bit generator.
///
/// The i-th draw of a stream is a pure function of (seed, stream, i), so
/// parallel work can partition the counter space instead of sharing state.
/// Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept;
  result_type at(std::uint64_t counter) const noexcept;

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  /// Standard normal through the inverse CDF.
  double normal() noexcept;
  /// Unbiased integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) noexcept;

  std::uint64_t counter() const noexcept { return counter_; }
  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept;

/// Fisher-Yates shuffle, stable across standard library implementations.
template <class T>
void shuffle(std::vector<T>& items, CounterRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace pivotal
