#pragma once

// Counter-based random streams.
//
// A stream is a 64-bit key plus a counter; the n-th output is a pure function
// of (key, n). Any worker can therefore jump straight to the draws it owns,
// which keeps parallel kernels bit-identical to their serial references.
// Keys are derived hierarchically from one root seed:
//
//   Key root(seed);
//   Stream s = root.child("client").child(k).child(round).stream();

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace esoafl::rng {

/// SplitMix64 finalizer (Stafford variant 13).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Stream;

class Key {
 public:
  constexpr Key() = default;
  constexpr explicit Key(std::uint64_t seed) : value_(mix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

  [[nodiscard]] constexpr Key child(std::uint64_t index) const noexcept {
    Key k;
    k.value_ = mix64(value_ + 0x9e3779b97f4a7c15ULL * (index + 1));
    return k;
  }
  [[nodiscard]] constexpr Key child(std::string_view tag) const noexcept {
    Key k;
    k.value_ = mix64(value_ ^ mix64(hash_tag(tag)));
    return k;
  }
  [[nodiscard]] constexpr std::uint64_t value() const noexcept { return value_; }
  [[nodiscard]] Stream stream() const noexcept;

 private:
  std::uint64_t value_ = 0;
};

/// Random-access generator. Also models UniformRandomBitGenerator through the
/// sequential interface, which advances an internal counter.
class Stream {
 public:
  using result_type = std::uint64_t;

  constexpr Stream() = default;
  constexpr explicit Stream(Key key, std::uint64_t counter = 0) : key_(key.value()), counter_(counter) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  [[nodiscard]] constexpr std::uint64_t bits_at(std::uint64_t n) const noexcept {
    return mix64(key_ + 0x9e3779b97f4a7c15ULL * (n + 1));
  }
  /// Uniform on the open interval (0, 1), 53-bit resolution.
  [[nodiscard]] constexpr double uniform_at(std::uint64_t n) const noexcept {
    return (static_cast<double>(bits_at(n) >> 11) + 0.5) * 0x1.0p-53;
  }
  /// Standard normal from the draw pair (2n, 2n+1), Box-Muller.
  [[nodiscard]] double normal_at(std::uint64_t n) const noexcept {
    const double u1 = uniform_at(2 * n);
    const double u2 = uniform_at(2 * n + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  [[nodiscard]] double exponential_at(std::uint64_t n, double rate) const noexcept {
    return -std::log(uniform_at(n)) / rate;
  }

  result_type operator()() noexcept { return bits_at(counter_++); }
  double uniform() noexcept { return uniform_at(counter_++); }
  double normal() noexcept {
    // Keeps normal draws on even/odd pairs so mixing with uniform() stays reproducible.
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  double exponential(double rate) noexcept { return -std::log(uniform()) / rate; }

  /// Uniform integer in [0, n); n > 0. Rejection sampling, unbiased.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x;
    do {
      x = (*this)();
    } while (x >= limit);
    return x % n;
  }

  [[nodiscard]] constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

inline Stream Key::stream() const noexcept { return Stream(*this); }

/// Fisher-Yates shuffle with an explicit stream (std::shuffle is not portable bit-for-bit).
template <class RandomIt>
void shuffle(RandomIt first, RandomIt last, Stream& s) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = s.below(i);
    using std::swap;
    swap(first[static_cast<std::ptrdiff_t>(i - 1)], first[static_cast<std::ptrdiff_t>(j)]);
  }
}

}  // namespace esoafl::rng
