#pragma once

#include "bapofi/rng.hpp"

namespace bapofi::normal {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double cdf(double z);
// 1 - cdf(z), accurate in the upper tail.
double upper_tail(double z);
double quantile(double p);
// Inverse of upper_tail: returns z with upper_tail(z) == q.
double upper_quantile(double q);
double log_density(double x, double mean, double variance);
double density(double x, double mean, double variance);

// Standard normal truncated to (lower, upper); either bound may be infinite.
// The draw is strictly inside the open interval.
double sample_truncated(double lower, double upper, Rng& rng);

}  // namespace bapofi::normal
