#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bapofi/aft_sampler.hpp"
#include "bapofi/discretize.hpp"
#include "bapofi/toxicity.hpp"

namespace bapofi::decision {

struct TradeoffSpec {
  double delta0 = 0.2;
  double delta1 = 0.0;
  double tau = 720.0;  // days
  // Throws ConfigError unless delta0 >= 0 and tau > 0.
  void validate() const;
};

struct UtilityParams {
  double nu = 0.25;
  double zeta = 0.15;
  double u0 = -0.304;
  void validate() const;
};

// Predictive conditional treatment effects.
double pcte_tte(const aft::PosteriorDraws& draws, double tau, std::span<const double> x);
std::vector<double> pcte_tte_table(const aft::PosteriorDraws& draws, double tau);
double pcte_tox(const tox::ToxDraws& draws, std::span<const double> x);
std::vector<double> pcte_tox_table(const tox::ToxDraws& draws);

// Mean PCTE over observed members of `a`; nullopt for an empty subgroup.
// `codes` is the n x p category table from CovariateBins::assign.
std::optional<double> pate(const SubgroupAction& a, std::span<const double> pcte,
                           std::span<const std::uint8_t> codes, std::size_t p);

// delta0 + delta1 * PATE_tox. Throws std::invalid_argument for Null.
double average_mcmd(const SubgroupAction& a, double pate_tox, const TradeoffSpec& spec);

// u0 for Null; otherwise (PATE - deltabar) * (size + 1)^nu / (|J| + 1)^zeta.
double utility(const SubgroupAction& a, double pate_tte, double deltabar, double size,
               const UtilityParams& params);

// Count and PCTE sums per category cell: one 3-vector per covariate and one
// 3x3 table per covariate pair, so any enumerated action is scored in O(9).
class SubgroupTables {
 public:
  explicit SubgroupTables(std::size_t p);

  void add(std::span<const std::uint8_t> codes, double tte, double tox, double weight = 1.0);

  struct Stats {
    double weight = 0.0;
    double tte = 0.0;
    double tox = 0.0;
  };
  Stats stats(const SubgroupAction& a) const;
  std::size_t p() const { return p_; }

 private:
  std::size_t pair_index(int j, int k) const;

  std::size_t p_;
  Stats total_;
  std::vector<Stats> single_;  // p x 3
  std::vector<Stats> pair_;    // pairs x 9
};

struct ActionScore {
  SubgroupAction action;
  std::size_t index = 0;  // enumeration order
  double utility = 0.0;
  double pate_tte = 0.0;
  double pate_tox = 0.0;
  double deltabar = 0.0;
  double size = 0.0;
  int covariates = 0;
  bool top = false;
};

struct RankedReport {
  std::vector<ActionScore> ranked;     // descending utility
  std::vector<SubgroupAction> excluded;  // empty subgroups
  double population = 0.0;               // n used for sizes
  std::size_t report_size = 5;

  const ActionScore& best() const { return ranked.front(); }
  // 1-based rank of the action, 0 when excluded.
  std::size_t rank_of(const SubgroupAction& a) const;
  bool in_top(const SubgroupAction& a) const;
};

// Scores every enumerated action from cell tables. Sizes are weights times
// `size_scale`, which lets a large covariate sample stand in for n patients.
RankedReport score_actions(const std::vector<SubgroupAction>& actions, const SubgroupTables& tables,
                           double size_scale, const TradeoffSpec& spec,
                           const UtilityParams& params, std::size_t report_size = 5);

// Per-patient PCTEs from the draws, then score_actions over the enumerated
// family. `tox_draws` is required iff delta1 != 0.
RankedReport rank_actions(const TrialDataset& data, const CovariateBins& bins,
                          const aft::PosteriorDraws& tte_draws, const tox::ToxDraws* tox_draws,
                          const TradeoffSpec& spec, const UtilityParams& params);

// Same, from precomputed per-patient PCTE tables (pcte_tox may be empty).
RankedReport rank_from_pcte(const TrialDataset& data, const CovariateBins& bins,
                            std::span<const double> pcte_tte, std::span<const double> pcte_tox,
                            const TradeoffSpec& spec, const UtilityParams& params);

// Machine-readable report (JSON text) and a fixed-width table.
std::string report_json(const RankedReport& report, const CovariateBins& bins, std::size_t rows);
void write_report_table(std::ostream& out, const RankedReport& report, const CovariateBins& bins,
                        std::size_t rows);

}  // namespace bapofi::decision
