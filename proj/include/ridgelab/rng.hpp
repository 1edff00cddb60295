#pragma once

// Counter-based random streams (Philox4x32-10) and the samplers built on them.
//
// A stream is addressed by (master_seed, rep, role, sub): the seed is the
// Philox key, the remaining coordinates fill the upper counter words, and the
// low 64 counter bits enumerate blocks. Any two addresses give independent
// sequences, so replications can run on any thread in any order.

#include <array>
#include <cmath>
#include <cstdint>

#include "ridgelab/error.hpp"

namespace ridgelab {

namespace rng {

using Block = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds.
inline Block philox4x32_10(Block ctr, Key key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

enum class Role : std::uint32_t { Design = 1, Noise = 2, Signal = 3, Fold = 4, Seq = 5 };

/// Sequential reader over one Philox stream.
class Stream {
 public:
  static constexpr std::uint32_t kMaxSub = (1u << 24) - 1;

  Stream(std::uint64_t master_seed, std::uint32_t rep, Role role, std::uint32_t sub = 0)
      : key_{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32)},
        rep_(rep),
        tag_((static_cast<std::uint32_t>(role) << 24) | sub) {
    detail::require(sub <= kMaxSub, "stream sub-index exceeds 24 bits");
  }

  std::uint32_t next_u32() {
    if (pos_ == 4) refill();
    return buf_[pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform on the open interval (0, 1) with 53-bit resolution.
  double uniform() {
    const std::uint64_t bits = next_u64() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by Box–Muller; the second variate of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    constexpr double kTwoPi = 6.283185307179586476925;
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    spare_ = radius * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return radius * std::cos(kTwoPi * u2);
  }

  /// Index uniform in [0, bound) by rejection on 64-bit draws.
  std::uint64_t below(std::uint64_t bound) {
    detail::require(bound > 0, "below() requires a positive bound");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    for (;;) {
      const std::uint64_t x = next_u64();
      if (x < limit) return x % bound;
    }
  }

 private:
  void refill() {
    buf_ = philox4x32_10({static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                          rep_, tag_},
                         key_);
    ++block_;
    pos_ = 0;
  }

  Key key_;
  std::uint32_t rep_;
  std::uint32_t tag_;
  std::uint64_t block_ = 0;
  Block buf_{};
  int pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// CDF of Student's t with an even number of degrees of freedom (closed form).
inline double student_t_cdf_even(double t, int nu) {
  detail::require(nu >= 2 && nu % 2 == 0, "closed-form t CDF needs even nu >= 2");
  const double s = nu + t * t;
  const double x = nu / s;
  const double y = std::abs(t) / std::sqrt(s);
  double term = 1.0;
  double sum = 1.0;
  for (int j = 1; j < nu / 2; ++j) {
    term *= x * (2.0 * j - 1.0) / (2.0 * j);
    sum += term;
  }
  if (x >= 0.5) return t < 0 ? 0.5 - 0.5 * y * sum : 0.5 + 0.5 * y * sum;
  // Tail: y·Σ_{j≥0} a_j x^j = y(1-x)^{-1/2} = 1, so the tail mass is the series
  // remainder, summed directly to avoid cancelling 1 against y·sum.
  double tail = 0.0;
  for (int j = nu / 2; j < 2000; ++j) {
    term *= x * (2.0 * j - 1.0) / (2.0 * j);
    tail += term;
    if (term < 1e-17 * tail) break;
  }
  const double lower = 0.5 * y * tail;
  return t < 0 ? lower : 1.0 - lower;
}

/// Inverse t CDF by bisection on [-128, 128] to 1e-12.
inline double student_t_quantile_even(double u, int nu) {
  detail::require(u > 0.0 && u < 1.0, "quantile level must lie in (0, 1)");
  double lo = -128.0;
  double hi = 128.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (student_t_cdf_even(mid, nu) < u) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// Unit-variance t₁₀ draw: √0.8 · t₁₀ (Var t₁₀ = 10/8).
inline double scaled_t10(Stream& s) {
  static const double kScale = std::sqrt(0.8);
  return kScale * student_t_quantile_even(s.uniform(), 10);
}

}  // namespace rng
}  // namespace ridgelab
