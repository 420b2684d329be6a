#pragma once

// Counter-based deterministic random numbers.
//
// A stream is identified by a 64-bit key. Element i of the stream is
//   splitmix64_finalize(key + (i + 1) * 0x9E3779B97F4A7C15)
// which is the SplitMix64 sequence seeded with `key`, addressable at any
// offset without state. Sub-streams are derived with
//   child_key = splitmix64_finalize(key ^ splitmix64_finalize(tag + 0x632BE59BD9B4E019))
// Everything downstream (seed blocks, synthetic data, episode sampling) is a
// pure function of these streams, so results are bit-identical across runs
// and across thread schedules.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>

namespace fhdnn {

inline constexpr std::uint64_t kGolden64 = 0x9E3779B97F4A7C15ull;

constexpr std::uint64_t splitmix64_finalize(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// FNV-1a over a tag string; used to name sub-streams.
constexpr std::uint64_t stream_tag(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

class CounterRng {
 public:
  using result_type = std::uint64_t;

  constexpr explicit CounterRng(std::uint64_t key) : key_(key) {}

  constexpr std::uint64_t key() const { return key_; }

  /// Random word at an absolute stream position (stateless).
  constexpr std::uint64_t at(std::uint64_t index) const {
    return splitmix64_finalize(key_ + (index + 1) * kGolden64);
  }

  constexpr CounterRng split(std::uint64_t tag) const {
    return CounterRng(splitmix64_finalize(key_ ^ splitmix64_finalize(tag + 0x632BE59BD9B4E019ull)));
  }
  constexpr CounterRng split(std::string_view tag) const { return split(stream_tag(tag)); }

  // Sequential interface (UniformRandomBitGenerator).
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  constexpr result_type operator()() { return at(counter_++); }

  constexpr std::uint64_t position() const { return counter_; }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Unbiased integer in [0, bound) (Lemire's multiply-and-reject).
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    for (;;) {
      const std::uint64_t x = (*this)();
      const unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
      const auto low = static_cast<std::uint64_t>(m);
      if (low >= bound || low >= (-bound) % bound) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  /// Standard normal via Box-Muller; consumes two words per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Fair coin as +1 / -1 from the top bit.
  int bipolar() { return ((*this)() >> 63) ? 1 : -1; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle driven by CounterRng (std::shuffle's algorithm is implementation-defined).
template <typename T>
void deterministic_shuffle(std::span<T> items, CounterRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace fhdnn
