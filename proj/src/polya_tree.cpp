#include "bapofi/polya_tree.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "bapofi/normal.hpp"

namespace bapofi::pt {

double PolyaTreeSpec::sigma() const { return std::sqrt(sigma2); }

void PolyaTreeSpec::validate() const {
  if (depth < 1 || depth > kMaxDepth) throw std::invalid_argument("Polya tree depth out of range");
  if (!(c > 0.0)) throw std::invalid_argument("Polya tree precision c must be positive");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw std::invalid_argument("Polya tree sigma2 must be positive and finite");
  }
}

std::span<const double> standard_boundaries(int depth) {
  static const auto table = [] {
    std::array<std::vector<double>, PolyaTreeSpec::kMaxDepth + 1> t;
    for (int m = 1; m <= PolyaTreeSpec::kMaxDepth; ++m) {
      const std::size_t bins = std::size_t{1} << m;
      t[m].resize(bins - 1);
      for (std::size_t k = 1; k < bins; ++k) {
        // Exact dyadic symmetry: the middle boundary is 0 and the rest mirror.
        if (2 * k == bins) t[m][k - 1] = 0.0;
        else if (2 * k < bins) t[m][k - 1] = normal::quantile(static_cast<double>(k) / bins);
        else t[m][k - 1] = -normal::quantile(static_cast<double>(bins - k) / bins);
      }
    }
    return t;
  }();
  if (depth < 1 || depth > PolyaTreeSpec::kMaxDepth) throw std::invalid_argument("bad depth");
  return table[static_cast<std::size_t>(depth)];
}

std::size_t bin_index(double u, const PolyaTreeSpec& spec) {
  const auto z = standard_boundaries(spec.depth);
  const double t = u / spec.sigma();
  return static_cast<std::size_t>(std::upper_bound(z.begin(), z.end(), t) - z.begin());
}

std::vector<int> bin_path(double u, const PolyaTreeSpec& spec) {
  const std::size_t k = bin_index(u, spec);
  std::vector<int> path(static_cast<std::size_t>(spec.depth));
  for (int m = 1; m <= spec.depth; ++m) path[m - 1] = static_cast<int>((k >> (spec.depth - m)) & 1);
  return path;
}

double bin_lower(std::size_t k, const PolyaTreeSpec& spec) {
  if (k == 0) return -std::numeric_limits<double>::infinity();
  return spec.sigma() * standard_boundaries(spec.depth)[k - 1];
}

double bin_upper(std::size_t k, const PolyaTreeSpec& spec) {
  if (k + 1 >= spec.bins()) return std::numeric_limits<double>::infinity();
  return spec.sigma() * standard_boundaries(spec.depth)[k];
}

// ------------------------------------------------------------- counts --

PolyaTreeCounts::PolyaTreeCounts(int depth)
    : depth_(depth), counts_((std::size_t{1} << (depth + 1)) - 1, 0) {
  if (depth < 1 || depth > PolyaTreeSpec::kMaxDepth) throw std::invalid_argument("bad depth");
}

PolyaTreeCounts PolyaTreeCounts::from_residuals(std::span<const double> u,
                                                const PolyaTreeSpec& spec) {
  PolyaTreeCounts c(spec.depth);
  for (double v : u) c.add(bin_index(v, spec));
  return c;
}

PolyaTreeCounts PolyaTreeCounts::from_leaf_counts(int depth, std::span<const int> leaves) {
  PolyaTreeCounts c(depth);
  if (leaves.size() != (std::size_t{1} << depth)) throw std::invalid_argument("leaf count size");
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    if (leaves[k] < 0) throw std::invalid_argument("negative count");
    for (int r = 0; r < leaves[k]; ++r) c.add(k);
  }
  return c;
}

void PolyaTreeCounts::add(std::size_t bin) {
  for (int m = depth_; m >= 0; --m) {
    ++counts_[(std::size_t{1} << m) - 1 + (bin >> (depth_ - m))];
  }
}

void PolyaTreeCounts::remove(std::size_t bin) {
  if (count(depth_, bin) <= 0) throw std::logic_error("removing from an empty Polya tree bin");
  for (int m = depth_; m >= 0; --m) {
    --counts_[(std::size_t{1} << m) - 1 + (bin >> (depth_ - m))];
  }
}

std::span<const int> PolyaTreeCounts::leaf_counts() const {
  const std::size_t start = (std::size_t{1} << depth_) - 1;
  return {counts_.data() + start, std::size_t{1} << depth_};
}

bool PolyaTreeCounts::consistent() const {
  for (int m = 0; m < depth_; ++m) {
    for (std::size_t k = 0; k < (std::size_t{1} << m); ++k) {
      if (count(m, k) != count(m + 1, 2 * k) + count(m + 1, 2 * k + 1)) return false;
    }
  }
  return std::all_of(counts_.begin(), counts_.end(), [](int c) { return c >= 0; });
}

// ----------------------------------------------------------- marginal --

double correction_factor(const PolyaTreeCounts& counts, const PolyaTreeSpec& spec) {
  if (counts.depth() != spec.depth) throw std::invalid_argument("counts/spec depth mismatch");
  // The sequential predictive factors of a node with a left and b right
  // children multiply to 2^n B(alpha + a, alpha + b) / B(alpha, alpha),
  // n = a + b. Small nodes use the factor product itself, so a single
  // observation gives exactly 0; large ones use lgamma.
  double out = 0.0;
  for (int m = 2; m <= spec.depth; ++m) {
    const double a = spec.alpha(m);
    const double lg_a = std::lgamma(a);
    const double lg_2a = std::lgamma(2.0 * a);
    for (std::size_t k = 0; k < (std::size_t{1} << (m - 1)); ++k) {
      const int parent = counts.count(m - 1, k);
      if (parent == 0) continue;
      const int left = counts.count(m, 2 * k);
      const int right = parent - left;
      if (parent <= 128) {
        double prod = 1.0;
        for (int i = 0; i < left; ++i) prod *= 2.0 * (a + i) / (2.0 * a + i);
        for (int j = 0; j < right; ++j) prod *= 2.0 * (a + j) / (2.0 * a + left + j);
        out += std::log(prod);
      } else {
        out += parent * std::numbers::ln2 + std::lgamma(a + left) + std::lgamma(a + right) -
               2.0 * lg_a - std::lgamma(2.0 * a + parent) + lg_2a;
      }
    }
  }
  return out;
}

double correction_factor(std::span<const double> u, const PolyaTreeSpec& spec) {
  return correction_factor(PolyaTreeCounts::from_residuals(u, spec), spec);
}

double marginal_loglik(std::span<const double> u, const PolyaTreeSpec& spec) {
  double gauss = 0.0;
  for (double v : u) gauss += normal::log_density(v, 0.0, spec.sigma2);
  return gauss + correction_factor(u, spec);
}

// --------------------------------------------------------- predictive --

Predictive::Predictive(const PolyaTreeCounts& counts, const PolyaTreeSpec& spec)
    : spec_(spec), sigma_(spec.sigma()) {
  if (counts.depth() != spec.depth) throw std::invalid_argument("counts/spec depth mismatch");
  std::vector<double> level{0.5, 0.5};
  for (int m = 2; m <= spec.depth; ++m) {
    const double a = spec.alpha(m);
    std::vector<double> next(std::size_t{1} << m);
    for (std::size_t k = 0; k < level.size(); ++k) {
      const double denom = 2.0 * a + counts.count(m - 1, k);
      next[2 * k] = level[k] * (a + counts.count(m, 2 * k)) / denom;
      next[2 * k + 1] = level[k] * (a + counts.count(m, 2 * k + 1)) / denom;
    }
    level = std::move(next);
  }
  prob_ = std::move(level);
  suffix_.assign(prob_.size() + 1, 0.0);
  for (std::size_t k = prob_.size(); k-- > 0;) suffix_[k] = suffix_[k + 1] + prob_[k];
}

double Predictive::density(double u) const {
  const std::size_t k = bin_index(u, spec_);
  return normal::density(u, 0.0, spec_.sigma2) * static_cast<double>(prob_.size()) * prob_[k];
}

double Predictive::partial_mass(std::size_t k, double t) const {
  const auto z = standard_boundaries(spec_.depth);
  const double s = t / sigma_;
  double frac;
  if (s < 0.0) {
    const double upper = k + 1 < prob_.size() ? normal::cdf(z[k]) : 1.0;
    frac = upper - normal::cdf(s);
  } else {
    const double upper = k + 1 < prob_.size() ? normal::upper_tail(z[k]) : 0.0;
    frac = normal::upper_tail(s) - upper;
  }
  return prob_[k] * std::max(0.0, frac) * static_cast<double>(prob_.size());
}

double Predictive::tail(double t) const {
  if (std::isnan(t)) throw std::invalid_argument("predictive tail at NaN");
  if (t == -std::numeric_limits<double>::infinity()) return 1.0;
  if (t == std::numeric_limits<double>::infinity()) return 0.0;
  const std::size_t k = bin_index(t, spec_);
  return std::clamp(suffix_[k + 1] + partial_mass(k, t), 0.0, 1.0);
}

double Predictive::sample_above(double lower, Rng& rng) const {
  if (!(lower < std::numeric_limits<double>::infinity())) {
    throw std::invalid_argument("sample_above: lower bound must be below +inf");
  }
  const std::size_t bins = prob_.size();
  const std::size_t k0 = lower == -std::numeric_limits<double>::infinity() ? 0 : bin_index(lower, spec_);
  const double lo_std = lower / sigma_;
  for (;;) {
    std::size_t k = k0;
    if (k0 + 1 < bins) {
      const double first = partial_mass(k0, lower);
      const double total = first + suffix_[k0 + 1];
      assert(total > 0.0);
      double u = rng.uniform() * total;
      if (u >= first) {
        u -= first;
        k = k0 + 1;
        while (k + 1 < bins && u >= prob_[k]) {
          u -= prob_[k];
          ++k;
        }
      }
    }
    const auto z = standard_boundaries(spec_.depth);
    const double bin_lo = k == 0 ? -std::numeric_limits<double>::infinity() : z[k - 1];
    const double bin_hi = k + 1 < bins ? z[k] : std::numeric_limits<double>::infinity();
    const double a = k == k0 ? std::max(bin_lo, lo_std) : bin_lo;
    if (!(a < bin_hi)) continue;
    const double draw = sigma_ * normal::sample_truncated(a, bin_hi, rng);
    if (draw > lower) return draw;
  }
}

double predictive_density(double u, const PolyaTreeCounts& counts, const PolyaTreeSpec& spec) {
  return Predictive(counts, spec).density(u);
}

double predictive_tail(double t, const PolyaTreeCounts& counts, const PolyaTreeSpec& spec) {
  return Predictive(counts, spec).tail(t);
}

double sample_truncated(double lower, const PolyaTreeCounts& counts, const PolyaTreeSpec& spec,
                        Rng& rng) {
  return Predictive(counts, spec).sample_above(lower, rng);
}

}  // namespace bapofi::pt
