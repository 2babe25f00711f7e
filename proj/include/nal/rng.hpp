#pragma once

// Deterministic random streams.
//
// Generator: xoshiro256** seeded through splitmix64. Normals: Box-Muller,
// consuming two uniforms per pair of outputs. A stream is identified by
// (seed, stream_id); sub-streams are derived with derive_stream(seed, tag,
// index...) which hashes its arguments through splitmix64 finalizers, so the
// samples a consumer sees never depend on evaluation order.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>

namespace nal {

inline constexpr std::string_view kPrngName = "xoshiro256** (splitmix64 seeding)";
inline constexpr std::string_view kNormalName = "Box-Muller";

constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) noexcept {
  std::uint64_t s = a ^ (b * 0xD6E8FEB86659FD93ULL);
  std::uint64_t first = splitmix64(s);
  return splitmix64(first);
}

/// FNV-1a over a purpose tag; used to keep sub-streams of different
/// consumers apart.
constexpr std::uint64_t tag_hash(std::string_view tag) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// stream_id = hash(seed, purpose-tag, indices...).
constexpr std::uint64_t derive_stream(std::uint64_t seed, std::string_view tag,
                                      std::initializer_list<std::uint64_t> indices = {}) noexcept {
  std::uint64_t h = mix64(seed, tag_hash(tag));
  for (std::uint64_t i : indices) h = mix64(h, i + 0x632BE59BD9B4E019ULL);
  return h;
}

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept : seed_(seed), stream_id_(stream_id) {
    std::uint64_t sm = mix64(seed, stream_id);
    for (auto& w : s_) w = splitmix64(sm);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection (unbiased).
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Convenience: the stream for (seed, tag, indices...).
inline RngStream make_stream(std::uint64_t seed, std::string_view tag,
                             std::initializer_list<std::uint64_t> indices = {}) {
  return RngStream(seed, derive_stream(seed, tag, indices));
}

}  // namespace nal
