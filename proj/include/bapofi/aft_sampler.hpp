#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bapofi/bart.hpp"
#include "bapofi/dataset.hpp"
#include "bapofi/polya_tree.hpp"
#include "bapofi/rng.hpp"

namespace bapofi {

// Run length and forest settings shared by the TTE and toxicity chains.
struct ChainSettings {
  int iterations = 5000;
  int burn_in = 2500;
  int thin = 5;
  std::uint64_t seed = 1;
  bart::ForestHyper forest;
  // Keep a forest snapshot per recorded draw so that predictions at
  // arbitrary covariate rows are possible.
  bool keep_forests = false;

  // Throws ConfigError unless iterations > burn_in >= 0 and thin >= 1.
  void validate() const;
  std::size_t recorded_draws() const;
};

}  // namespace bapofi

namespace bapofi::aft {

struct SamplerConfig {
  ChainSettings chain;
  // Scaled inverse-gamma prior on sigma2 with the given shape; when no scale
  // is given it is set so that the prior mode equals the residual variance of
  // a regression of the initial log times on arm.
  double sigma_shape = 3.0;
  std::optional<double> sigma_scale;
  int pt_depth = 6;
  double pt_c = 1.0;
  // Verify Polya-tree counts against the residuals after every step.
  bool check_consistency = false;

  void validate() const;
};

// State of one chain over (mu, sigma2, kappa).
struct ChainState {
  bart::ForestState forest;
  double sigma2 = 1.0;
  CompleteData complete;
  pt::PolyaTreeSpec pt;
  pt::PolyaTreeCounts counts;
  std::vector<double> residuals;  // y_log - forest.fit
  double correction = 0.0;        // correction_factor(counts, pt)
  double prior_shape = 3.0;
  double prior_scale = 1.0;

  // Counts, residuals and cached correction all match the current partition.
  bool consistent() const;
};

ChainState initialize(const TrialDataset& data, const bart::Design& design,
                      const SamplerConfig& config);

// Step 1: propose mu' by one forest sweep under the Gaussian working model and
// accept with probability min(1, exp(corr(u') - corr(u))). Returns the accept
// flag; on rejection the state is unchanged.
bool step_mu(ChainState& state, const bart::Design& design, Rng& rng);
// Step 2: propose sigma2' from the conjugate inverse-gamma full conditional
// and accept with probability min(1, exp(corr(u; sigma2') - corr(u; sigma2))).
bool step_sigma(ChainState& state, Rng& rng);
// Step 3: impute each censored log time in turn from the Polya-tree
// predictive of its residual given all others, truncated above the
// censoring time.
void step_impute(ChainState& state, const TrialDataset& data, Rng& rng);

struct Draw {
  double sigma2 = 1.0;
  std::vector<double> mean_control;  // eta(0, x_i) for every patient
  std::vector<double> mean_treated;  // eta(1, x_i)
  pt::PolyaTreeCounts counts;
  std::optional<bart::ForestState> forest;
};

struct Diagnostics {
  int iterations = 0;
  int mu_accepted = 0;
  int sigma_accepted = 0;
  // Iterations whose acceptance probability was strictly below one.
  int mu_uncertain = 0;
  int sigma_uncertain = 0;
  double sigma2_mean = 0.0;
  double sigma2_sd = 0.0;
  double sigma2_min = 0.0;
  double sigma2_max = 0.0;

  double mu_acceptance() const { return iterations ? double(mu_accepted) / iterations : 0.0; }
  double sigma_acceptance() const { return iterations ? double(sigma_accepted) / iterations : 0.0; }
};

struct PosteriorDraws {
  std::vector<Draw> draws;
  int burn_in = 0;
  int thin = 1;
  std::uint64_t seed = 0;
  int pt_depth = 1;
  double pt_c = 1.0;
  Diagnostics diagnostics;

  pt::PolyaTreeSpec spec(std::size_t d) const { return {pt_depth, pt_c, draws[d].sigma2}; }
};

PosteriorDraws run_chain(const TrialDataset& data, const SamplerConfig& config);

// Posterior predictive Pr(T > tau | arm, x): the Monte Carlo average over
// draws of the Polya-tree predictive tail above log(tau) - eta(arm, x).
// Needs forest snapshots; throws std::logic_error without them.
double survival_probability(const PosteriorDraws& draws, double tau, int arm,
                            std::span<const double> x);
// Same, at the covariates of observed patient i (uses cached means).
double survival_probability(const PosteriorDraws& draws, double tau, int arm, std::size_t i);
// Survival probability for every observed patient under `arm`.
std::vector<double> survival_table(const PosteriorDraws& draws, double tau, int arm);

}  // namespace bapofi::aft
