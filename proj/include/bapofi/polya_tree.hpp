#pragma once

#include <span>
#include <vector>

#include "bapofi/rng.hpp"

namespace bapofi::pt {

// Median-zero Polya tree centred at N(0, sigma2), truncated at `depth`
// levels. Level-m split probabilities are Beta(alpha_m, alpha_m) with
// alpha_m = c * m^2, except level 1 whose split is fixed at 1/2 so that
// G(-inf, 0) = 0.5. Level-m bins are the dyadic N(0, sigma2) quantile
// intervals [sigma * Phi^-1(k / 2^m), sigma * Phi^-1((k + 1) / 2^m)).
struct PolyaTreeSpec {
  static constexpr int kMaxDepth = 14;

  int depth = 6;
  double c = 1.0;
  double sigma2 = 1.0;

  double alpha(int level) const { return c * level * level; }
  double sigma() const;
  std::size_t bins() const { return std::size_t{1} << depth; }
  PolyaTreeSpec with_sigma2(double s2) const {
    PolyaTreeSpec out = *this;
    out.sigma2 = s2;
    return out;
  }
  // Throws std::invalid_argument unless 1 <= depth <= kMaxDepth, c > 0, sigma2 > 0.
  void validate() const;
};

// Interior standard-normal dyadic boundaries Phi^-1(k / 2^depth), k = 1..2^depth - 1.
std::span<const double> standard_boundaries(int depth);

// Depth-M bin index of u (left-closed bins; a boundary value joins the upper bin).
std::size_t bin_index(double u, const PolyaTreeSpec& spec);
// Path eps_1..eps_M of u, eps_m in {0, 1}.
std::vector<int> bin_path(double u, const PolyaTreeSpec& spec);
double bin_lower(std::size_t k, const PolyaTreeSpec& spec);
double bin_upper(std::size_t k, const PolyaTreeSpec& spec);

// Residual counts at every node of levels 0..M (level 0 is the total).
class PolyaTreeCounts {
 public:
  explicit PolyaTreeCounts(int depth = 1);
  static PolyaTreeCounts from_residuals(std::span<const double> u, const PolyaTreeSpec& spec);
  static PolyaTreeCounts from_leaf_counts(int depth, std::span<const int> leaves);

  void add(std::size_t bin);
  // Throws std::logic_error when the bin is already empty.
  void remove(std::size_t bin);

  int depth() const { return depth_; }
  int total() const { return counts_[0]; }
  int count(int level, std::size_t index) const {
    return counts_[(std::size_t{1} << level) - 1 + index];
  }
  std::span<const int> leaf_counts() const;
  // n_eps == n_eps0 + n_eps1 at every internal node.
  bool consistent() const;

  bool operator==(const PolyaTreeCounts&) const = default;

 private:
  int depth_;
  std::vector<int> counts_;  // heap layout, level m starts at 2^m - 1
};

// log G_mg(u_1..u_n | sigma2): the exchangeable Polya-tree marginal.
double marginal_loglik(std::span<const double> u, const PolyaTreeSpec& spec);
// log[G_mg(u) / prod_i N(u_i; 0, sigma2)], the only term entering the
// Metropolis-Hastings ratios. Depends on u only through its bin counts.
double correction_factor(std::span<const double> u, const PolyaTreeSpec& spec);
double correction_factor(const PolyaTreeCounts& counts, const PolyaTreeSpec& spec);

// Posterior predictive of a new residual given counts of earlier residuals.
// Below depth M the within-bin law is the truncated centring normal.
class Predictive {
 public:
  Predictive(const PolyaTreeCounts& counts, const PolyaTreeSpec& spec);

  double bin_probability(std::size_t k) const { return prob_[k]; }
  double density(double u) const;
  // Pr(new residual > t), integrated exactly bin by bin.
  double tail(double t) const;
  // Draw from the predictive restricted to (lower, inf). The result is
  // strictly greater than `lower`. Throws std::invalid_argument for
  // lower == +inf.
  double sample_above(double lower, Rng& rng) const;

 private:
  // Pr(new residual in bin k and > t) for t inside bin k.
  double partial_mass(std::size_t k, double t) const;

  PolyaTreeSpec spec_;
  double sigma_;
  std::vector<double> prob_;    // depth-M bin probabilities
  std::vector<double> suffix_;  // suffix_[k] = sum_{j >= k} prob_[j]; size bins + 1
};

double predictive_density(double u, const PolyaTreeCounts& counts, const PolyaTreeSpec& spec);
double predictive_tail(double t, const PolyaTreeCounts& counts, const PolyaTreeSpec& spec);
double sample_truncated(double lower, const PolyaTreeCounts& counts, const PolyaTreeSpec& spec,
                        Rng& rng);

}  // namespace bapofi::pt
