#pragma once

// Counter-based random streams (Philox4x32-10).
//
// A key names one draw: (seed, stream, counter). Every primitive draw
// consumes exactly one counter, so a chain's randomness depends only on how
// many draws it has made, never on how its work is interleaved with other
// chains.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

namespace fsmcmc {

struct RngKey {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t counter = 0;

  friend bool operator==(const RngKey&, const RngKey&) = default;
};

inline RngKey make_key(std::uint64_t seed) { return RngKey{seed, 0, 0}; }

namespace detail {

inline void mulhilo32(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                      std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace detail

using PhiloxBlock = std::array<std::uint32_t, 4>;

/// Philox4x32 with 10 rounds, bit-compatible with the Random123 reference.
inline PhiloxBlock philox4x32_10(PhiloxBlock ctr,
                                 std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kW0;
      key[1] += kW1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    detail::mulhilo32(kM0, ctr[0], hi0, lo0);
    detail::mulhilo32(kM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

/// Raw 128-bit block for a key. The seed is the cipher key; (counter,
/// stream) form the 128-bit cipher counter, so distinct streams never share
/// a counter block.
inline PhiloxBlock raw_block(const RngKey& k) {
  const PhiloxBlock ctr{static_cast<std::uint32_t>(k.counter),
                        static_cast<std::uint32_t>(k.counter >> 32),
                        static_cast<std::uint32_t>(k.stream),
                        static_cast<std::uint32_t>(k.stream >> 32)};
  return philox4x32_10(ctr, {static_cast<std::uint32_t>(k.seed),
                             static_cast<std::uint32_t>(k.seed >> 32)});
}

namespace detail {

// splitmix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t top53(const RngKey& k) {
  const PhiloxBlock b = raw_block(k);
  const std::uint64_t bits = (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
  return bits >> 11;
}

}  // namespace detail

/// Derives n_streams child keys. Child i depends only on the parent key and
/// i, so splitting into more streams leaves the first ones unchanged.
inline std::vector<RngKey> split(const RngKey& key, std::size_t n_streams) {
  if (n_streams == 0) throw std::invalid_argument("split: n_streams must be >= 1");
  const std::uint64_t base = detail::mix64(
      detail::mix64(detail::mix64(key.seed ^ 0x6A09E667F3BCC909ull) ^ key.stream) ^
      detail::mix64(key.counter + 0x3C6EF372FE94F82Bull));
  std::vector<RngKey> out;
  out.reserve(n_streams);
  for (std::size_t i = 0; i < n_streams; ++i) {
    // base + i are distinct and mix64 is a bijection: streams are distinct.
    out.push_back(RngKey{key.seed, detail::mix64(base + i), 0});
  }
  return out;
}

/// Uniform on [0, 1) with 53 random bits; advances the counter by one.
inline std::pair<double, RngKey> uniform(RngKey key) {
  const double u = static_cast<double>(detail::top53(key)) * 0x1.0p-53;
  ++key.counter;
  return {u, key};
}

/// Standard normal quantile function. Acklam's rational approximation
/// followed by one Halley step against erfc, accurate to ~1e-15.
inline double normal_quantile(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p outside (0,1)");

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2 * std::numbers::pi) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

/// Standard normal by inversion: exactly one counter per variate.
inline std::pair<double, RngKey> normal(RngKey key) {
  const double p = (static_cast<double>(detail::top53(key)) + 0.5) * 0x1.0p-53;
  ++key.counter;
  return {normal_quantile(p), key};
}

/// L * z with z a standard normal vector; consumes dim counters.
inline std::pair<Eigen::VectorXd, RngKey> normal_vec(RngKey key, Eigen::Index dim,
                                                     const Eigen::MatrixXd& chol_factor) {
  if (chol_factor.rows() != dim || chol_factor.cols() != dim) {
    throw std::invalid_argument("normal_vec: chol_factor must be dim x dim");
  }
  Eigen::VectorXd z(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    std::tie(z[i], key) = normal(key);
  }
  Eigen::VectorXd out = chol_factor.triangularView<Eigen::Lower>() * z;
  return {std::move(out), key};
}

/// Unscaled variant used by kernels whose proposals are isotropic.
inline std::pair<Eigen::VectorXd, RngKey> standard_normal_vec(RngKey key, Eigen::Index dim) {
  Eigen::VectorXd z(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    std::tie(z[i], key) = normal(key);
  }
  return {std::move(z), key};
}

}  // namespace fsmcmc
