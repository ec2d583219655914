#include "bapofi/normal.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <cassert>
#include <cmath>
#include <limits>

namespace bapofi::normal {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kSqrt2 = 1.41421356237309504880;

// Robert (1995) exponential rejection for the one-sided tail (a, inf), a > 0.
double sample_right_tail(double a, Rng& rng) {
  const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a + rng.exponential(rate);
    const double d = z - rate;
    if (rng.uniform() <= std::exp(-0.5 * d * d) && z > a) return z;
  }
}

// Truncated draw on (a, b) with 0 <= a < b, by inversion of the upper tail.
double sample_right(double a, double b, Rng& rng) {
  const double qa = upper_tail(a);
  const double qb = std::isinf(b) ? 0.0 : upper_tail(b);
  // Tail probabilities underflow (or lose all relative precision) far out.
  if (qa < 1e-280 || (qa - qb) <= qa * 1e-12) {
    if (std::isinf(b)) return sample_right_tail(a, rng);
    // Narrow interval deep in the tail: uniform proposal, exact rejection.
    for (;;) {
      const double z = a + (b - a) * rng.uniform();
      if (z > a && z < b && rng.uniform() <= std::exp(-0.5 * (z * z - a * a))) return z;
    }
  }
  for (;;) {
    const double q = qb + (qa - qb) * rng.uniform();
    if (q <= 0.0) continue;
    const double z = upper_quantile(q);
    if (z > a && z < b) return z;
  }
}

}  // namespace

double cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

double upper_tail(double z) { return 0.5 * std::erfc(z * kInvSqrt2); }

double quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  if (p == 0.5) return 0.0;
  return -kSqrt2 * boost::math::erfc_inv(2.0 * p);
}

double upper_quantile(double q) { return -quantile(q); }

double log_density(double x, double mean, double variance) {
  const double d = x - mean;
  return -kLogSqrt2Pi - 0.5 * std::log(variance) - 0.5 * d * d / variance;
}

double density(double x, double mean, double variance) {
  return std::exp(log_density(x, mean, variance));
}

double sample_truncated(double lower, double upper, Rng& rng) {
  assert(lower < upper);
  if (lower >= 0.0) return sample_right(lower, upper, rng);
  if (upper <= 0.0) return -sample_right(-upper, -lower, rng);
  // Interval straddles zero: plain inversion of the lower CDF is accurate.
  const double pa = cdf(lower);
  const double pb = cdf(upper);
  for (;;) {
    const double p = pa + (pb - pa) * rng.uniform();
    if (p <= 0.0 || p >= 1.0) continue;
    const double z = quantile(p);
    if (z > lower && z < upper) return z;
  }
}

}  // namespace bapofi::normal
