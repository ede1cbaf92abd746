#pragma once

#include <concepts>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace autosep {

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

/// Stable 64-bit mix (splitmix64 finalizer).
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Incremental, platform-independent 64-bit hash used to derive seeds and
/// the mock backend's pseudo-random decisions. Not cryptographic.
class StableHasher {
 public:
  explicit StableHasher(std::uint64_t seed = 0) : state_(mix64(seed ^ kOffset)) {}

  StableHasher& add(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= kPrime;
    }
    // Length terminator keeps ("ab","c") distinct from ("a","bc").
    return add_raw(bytes.size());
  }
  StableHasher& add(const std::string& s) { return add(std::string_view(s)); }
  StableHasher& add(const char* s) { return add(std::string_view(s)); }
  template <std::integral T>
  StableHasher& add(T v) {
    return add_raw(static_cast<std::uint64_t>(v));
  }

  std::uint64_t digest() const { return mix64(state_); }

  /// Uniform double in [0, 1) derived from the digest.
  double unit() const { return static_cast<double>(digest() >> 11) * 0x1.0p-53; }

 private:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

  StableHasher& add_raw(std::uint64_t v) {
    state_ = mix64(state_ ^ v) * kPrime;
    return *this;
  }

  std::uint64_t state_;
};

template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t base, const Parts&... parts) {
  StableHasher h(base);
  (h.add(parts), ...);
  return h.digest();
}

/// Seeded generator with portable bounded draws. std::uniform_int_distribution
/// and std::shuffle are implementation-defined, so they are avoided here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  bool bernoulli_half() { return (next() >> 63) != 0; }

  /// k distinct indices from [0, n) in draw order.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace autosep
