#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bapofi/aft_sampler.hpp"
#include "bapofi/decision.hpp"
#include "bapofi/discretize.hpp"

namespace bapofi::sim {

// Interval condition Q^lo <= x_var < Q^hi on the N(0,1) quantile scale;
// lo = 0 and hi = 1 mean unbounded.
struct Interval {
  int var = 0;
  double lo = 0.0;
  double hi = 1.0;
  bool operator==(const Interval&) const = default;
};

// Union of intersections of intervals. No clauses means everywhere.
struct Region {
  std::vector<std::vector<Interval>> clauses;

  bool everywhere() const { return clauses.empty(); }
  bool contains(std::span<const double> x) const;
  // Probability of the region under iid N(0,1) covariates (exact for the
  // independent-interval regions used here, via inclusion-exclusion over
  // the clauses).
  double probability() const;
  int max_var() const;
  bool operator==(const Region&) const = default;
};

struct ScenarioSpec {
  std::string id = "0";
  bool efficacy = false;  // TTE effect present
  bool toxicity = false;  // toxicity effect present
  Region tte_region;
  Region tox_region;
  double effect_tte = 0.0;  // S(tau) difference N - C in the sensitive region
  double effect_tox = 0.0;  // Pr(tox) difference N - C in the sensitive region
  double tau = 90.0;
  double s = 1.0;
  double surv_control = 0.20;
  double surv_nonsensitive = 0.30;
  double tox_control = 0.10;

  // Truth coefficients, set by calibrate_scenario.
  double beta_c = 0.0;
  double beta0 = 0.0;
  double gamma = 0.0;
  double alpha_c = 0.0;
  double gamma_tox = 0.0;
  bool calibrated = false;

  // Linear predictors of the truth.
  double g_tte(int z, std::span<const double> x) const;
  double g_tox(int z, std::span<const double> x) const;
  double survival(int z, std::span<const double> x) const;   // Pr(T > tau)
  double tox_rate(int z, std::span<const double> x) const;   // Pr(tox = 1)
  int required_p() const;
};

double h_tte(std::span<const double> x);
double h_tox(std::span<const double> x);

// Known ids: 0, E1..E10, T1, T2, E1*T1, E1*T2, E2*T1, E2*T2, E4*T1, E4*T2.
// Throws ConfigError for anything else.
ScenarioSpec make_scenario(const std::string& id, double effect_tte = 0.40, double effect_tox = 0.25);
std::vector<std::string> scenario_ids();

// Covariate sample shared by calibration and truth scoring.
struct CovariateSample {
  std::size_t size = 0;
  std::size_t p = 0;
  std::vector<double> x;  // row-major
  std::span<const double> row(std::size_t i) const { return {x.data() + i * p, p}; }
};
CovariateSample draw_covariates(std::size_t size, std::size_t p, std::uint64_t seed);

// Bisection on beta_c, beta0, gamma (TTE) and alpha_c, gamma_tox
// (toxicity) in turn so that the Monte Carlo marginals hit the targets.
// Throws NumericalError when a bracket cannot be found.
ScenarioSpec calibrate_scenario(ScenarioSpec spec, const CovariateSample& sample);

struct MarginalCheck {
  double surv_control = 0.0;
  double surv_treated_nonsensitive = 0.0;
  double surv_treated_sensitive = 0.0;
  double tox_control = 0.0;
  double tox_treated_sensitive = 0.0;
};
MarginalCheck marginals(const ScenarioSpec& spec, const CovariateSample& sample);

// n patients, exactly n/2 per arm in random order, event times from the
// log-linear truth with no censoring.
TrialDataset generate_tte(const ScenarioSpec& spec, std::size_t n, std::size_t p, Rng& rng);
// floor(q n) random patients get C ~ U(0, T) as their observed time.
TrialDataset apply_censoring(const TrialDataset& data, double q, Rng& rng);
// Adds a toxicity column from the logistic truth.
TrialDataset generate_tox(const ScenarioSpec& spec, const TrialDataset& data, Rng& rng);

// Bins at the theoretical N(0,1) terciles for p continuous covariates.
CovariateBins theoretical_bins(std::size_t p);

enum class Hypothesis { Null, All, Subgroup };
const char* hypothesis_name(Hypothesis h);

struct Truth {
  decision::RankedReport report;
  SubgroupAction action;
  Hypothesis hypothesis = Hypothesis::Null;
};

// Truth utility of every action: true PCTEs averaged over the covariate
// sample, sizes n * fraction.
Truth true_subgroup(const ScenarioSpec& spec, const CovariateSample& sample, std::size_t n,
                    const decision::TradeoffSpec& tradeoff, const decision::UtilityParams& params);
double true_utility(const SubgroupAction& a, const Truth& truth);

struct SimConfig {
  std::size_t n = 400;
  std::size_t p = 10;
  int reps = 200;
  double censor = 0.10;
  std::uint64_t seed = 1;
  int jobs = 1;
  aft::SamplerConfig sampler;
  decision::TradeoffSpec tradeoff{0.2, 0.0, 90.0};
  decision::UtilityParams utility;
  std::size_t mc_size = 1000000;
  // Per-replicate JSON-lines log; completed replicates found there are
  // reused instead of rerun.
  std::string log_path;
  std::function<void(int done, int total)> progress;
  // Extra (nu, zeta) points whose null cutoffs are recorded per replicate
  // from the same chains; used by tuning.
  std::vector<decision::UtilityParams> tune_grid;
};

struct ReplicateRecord {
  int rep = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::vector<std::string> top;  // encoded top-report actions
  bool null_in = false;
  bool all_in = false;
  bool true_in = false;
  // Non-null utilities at ranks 1 and report_size among non-null actions.
  double max_nonnull = 0.0;
  double cutoff_nonnull = 0.0;
  // cutoff_nonnull under each tune_grid point.
  std::vector<double> grid_cutoffs;
  double mu_acceptance = 0.0;
  double sigma_acceptance = 0.0;
};

struct OCSummary {
  Hypothesis hypothesis = Hypothesis::Null;
  int reps = 0;       // successful replicates
  int failures = 0;
  double tdr = 0.0;   // TNR, TPR or TSR
  double fnr = 0.0;
  double fpr = 0.0;
  double fsr = 0.0;
  double fdr = 0.0;
  double t1e = 0.0;   // H0 only
  double mu_acceptance = 0.0;
  double sigma_acceptance = 0.0;

  static double standard_error(double rate, int reps);
};

// Rates from replicate records under a given truth.
OCSummary summarize(std::span<const ReplicateRecord> records, Hypothesis hypothesis);

struct ReplicateRun {
  ScenarioSpec spec;
  Truth truth;
  std::vector<ReplicateRecord> records;
  OCSummary summary;
};

// One simulated trial analysed up to the per-patient effect tables.
struct FittedReplicate {
  TrialDataset data;
  CovariateBins bins;
  std::vector<double> pcte_tte;
  std::vector<double> pcte_tox;  // empty unless delta1 != 0
  aft::Diagnostics diagnostics;
};

// Seed of replicate r is seed + r. Sub-streams of it drive covariates and
// outcomes, censoring, toxicity, and the two chains.
FittedReplicate fit_replicate(const ScenarioSpec& spec, const SimConfig& config, int rep);
ReplicateRecord run_replicate(const ScenarioSpec& spec, const Truth& truth, const SimConfig& config,
                              int rep);
ReplicateRun run_replicates(const ScenarioSpec& spec, const SimConfig& config);

// u0 = the ceil((1 - target) R)-th smallest of the per-replicate
// report_size-th largest non-null utilities, so the null report misses the
// top list in a `target` share of replicates. target = 1 gives -inf.
// Throws std::invalid_argument when R < 1 / target.
double tune_u0(std::span<const double> cutoffs, double target_t1e);

struct TunePoint {
  double nu = 0.0;
  double zeta = 0.0;
  double u0 = 0.0;
};
struct TuneResult {
  std::vector<TunePoint> points;  // one per grid point, or config.utility
  std::vector<ReplicateRecord> records;
};
// Scenario 0 replicates; every grid point is scored from the same chains.
TuneResult tune(const SimConfig& config, double target_t1e,
                const std::vector<decision::UtilityParams>& grid = {});

}  // namespace bapofi::sim
