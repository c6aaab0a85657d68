#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>

namespace scrk {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view text,
                                     std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

// Counter-based generator keyed by (seed, label). The i-th draw is a pure
// function of the key and i, so streams are platform- and order-independent.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view label)
      : key_(detail::mix64(seed ^ detail::mix64(detail::fnv1a(label)))) {}

  RngStream child(std::string_view label) const {
    return RngStream(key_, label, Tag{});
  }
  RngStream child(std::string_view label, std::uint64_t a) const {
    return child(std::string(label) + ":" + std::to_string(a));
  }
  RngStream child(std::string_view label, std::uint64_t a,
                  std::uint64_t b) const {
    return child(std::string(label) + ":" + std::to_string(a) + ":" +
                 std::to_string(b));
  }

  std::uint64_t next_u64() {
    return detail::mix64(key_ + detail::kGolden * (++counter_));
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  // Box-Muller; both outputs used.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  struct Tag {};
  RngStream(std::uint64_t parent_key, std::string_view label, Tag)
      : key_(detail::mix64(parent_key + detail::mix64(detail::fnv1a(label)))) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace scrk
