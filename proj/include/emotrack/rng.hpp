#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <utility>
#include <vector>

namespace emotrack {

/// splitmix64 finalizer: a bijective 64-bit avalanche mix.
std::uint64_t mix64(std::uint64_t x);

/// FNV-1a over bytes, finalized with mix64.
std::uint64_t hash_string(std::string_view s);

/// Order-sensitive combination of 64-bit fields: h = mix64(h ^ field + golden) per field,
/// starting from a fixed nonzero constant.
std::uint64_t hash64(std::initializer_list<std::uint64_t> fields);

/// Counter-based deterministic generator. A stream is identified by a 64-bit key
/// derived from (seed, labels...); draw i is mix64(key + (i + 1) * golden), so any
/// draw is a pure function of its key and counter. Streams are split by label,
/// which gives independent children without consuming parent draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

  Rng split(std::string_view label) const { return Rng::from_key(mix64(key_ ^ hash_string(label))); }
  Rng split(std::uint64_t index) const { return Rng::from_key(mix64(key_ + mix64(index + 0x3c6ef372fe94f82bULL))); }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller (two uniforms per draw, no caching).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  /// Unbiased integer in [0, n) by rejection. n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Fisher-Yates, walking from the back.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  static Rng from_key(std::uint64_t key) {
    Rng r(0);
    r.key_ = key;
    return r;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace emotrack
