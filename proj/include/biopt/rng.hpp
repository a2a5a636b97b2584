#pragma once

#include <cstdint>
#include <string_view>

namespace biopt {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a, used to turn stream names into key material.
inline constexpr std::uint64_t hash_name(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based generator: draw i of a stream is splitmix64(key + i * golden).
/// Streams are derived, never advanced, so results do not depend on call order.
class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t key) noexcept : key_(splitmix64(key)) {}

  constexpr CounterRng derive(std::uint64_t index) const noexcept {
    return CounterRng(key_ ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  }
  constexpr CounterRng derive(std::string_view name) const noexcept { return derive(hash_name(name)); }

  constexpr std::uint64_t at(std::uint64_t i) const noexcept {
    return splitmix64(key_ + i * 0x9e3779b97f4a7c15ULL);
  }
  std::uint64_t next() noexcept { return at(counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept { return n ? next() % n : 0; }

  constexpr std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace biopt
