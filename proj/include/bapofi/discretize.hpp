#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bapofi/dataset.hpp"

namespace bapofi {

// Discretization of one covariate into d in {2, 3} merged categories M_1..M_d.
struct CovariateBin {
  enum class Kind { Continuous, Categorical };
  std::string name;
  Kind kind = Kind::Continuous;
  double q33 = 0.0;  // continuous only
  double q67 = 0.0;
  // Categorical only: original value -> category index (0-based), plus the
  // display label of each merged category.
  std::map<double, int> merge;
  std::vector<std::string> category_labels;

  int categories() const {
    return kind == Kind::Continuous ? 3 : static_cast<int>(category_labels.size());
  }
  // 0-based category of value x. Continuous: x < q33 -> 0, q33 <= x < q67 -> 1,
  // x >= q67 -> 2. Throws std::out_of_range for an unmapped categorical value.
  int category(double x) const;
};

struct CovariateBins {
  std::vector<CovariateBin> covariates;
  std::size_t p() const { return covariates.size(); }
  // n x p category codes for every patient.
  std::vector<std::uint8_t> assign(const TrialDataset& d) const;
};

// Per-covariate override: force categorical and optionally give a merge map
// (original value -> merged label). Values mapped to the same label share a
// category; labels are ordered by first appearance in ascending value order.
struct BinOverride {
  bool categorical = false;
  std::map<double, std::string> merge;
};
using BinPolicy = std::map<std::string, BinOverride>;

// The "33%" and "67%" cut points are the exact terciles.
inline constexpr double kLowerTercile = 1.0 / 3.0;
inline constexpr double kUpperTercile = 2.0 / 3.0;

// Empirical q-quantile: the ceil(q*n)-th order statistic (1-based).
double empirical_quantile(std::span<const double> values, double q);

// Columns with at most three distinct values (or text-coded columns) become
// categorical; others are trichotomized at the empirical 33%/67% quantiles.
// Throws std::invalid_argument for constant columns, continuous columns with
// fewer than three distinct values, and categorical columns with more than
// three levels and no merge map.
CovariateBins fit_bins(const TrialDataset& d, const BinPolicy& policy = {});

// Frozen bins as JSON text.
void write_bins(std::ostream& out, const CovariateBins& bins);
CovariateBins read_bins(std::istream& in);

// Retained-category subsets W are bitmasks over categories (bit m = M_{m+1}).
// Admissible subsets for d = 3, in report order: {M1},{M2},{M3},{M1,M2},
// {M2,M3},{M1,M3}; for d = 2: {M1},{M2}.
std::span<const std::uint8_t> admissible_subsets(int categories);

struct SubgroupAction {
  enum class Kind { Null, All, OneCov, TwoCov };
  enum class Shape { Rectangular, LShaped };
  Kind kind = Kind::Null;
  int j = -1, k = -1;
  std::uint8_t wj = 0, wk = 0;
  Shape shape = Shape::Rectangular;

  static SubgroupAction null() { return {}; }
  static SubgroupAction all() { return {Kind::All}; }
  static SubgroupAction one(int j, std::uint8_t wj) { return {Kind::OneCov, j, -1, wj, 0}; }
  static SubgroupAction two(int j, int k, std::uint8_t wj, std::uint8_t wk, Shape shape) {
    return {Kind::TwoCov, j, k, wj, wk, shape};
  }

  // |J|: 0 for null/all, else the number of covariates used.
  int covariate_count() const {
    return kind == Kind::OneCov ? 1 : kind == Kind::TwoCov ? 2 : 0;
  }
  // Compact stable encoding, e.g. "null", "all", "1:3:110", "2:0:4:001:100:L".
  std::string encode() const;
  static SubgroupAction decode(const std::string& s);

  bool operator==(const SubgroupAction&) const = default;
};

// Subgroup membership from precomputed category codes of one patient.
bool member(std::span<const std::uint8_t> codes, const SubgroupAction& a);
// Membership of a raw covariate row. Throws std::invalid_argument for Null.
bool membership(std::span<const double> x, const SubgroupAction& a, const CovariateBins& bins);

// Null, All, every OneCov, then every TwoCov pair j<k in both shapes.
std::vector<SubgroupAction> enumerate_actions(const CovariateBins& bins);

// Human-readable label, e.g. "BMI >= Q67 and TN (Y)".
std::string describe(const SubgroupAction& a, const CovariateBins& bins);

}  // namespace bapofi
