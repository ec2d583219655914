#pragma once

#include <optional>
#include <span>
#include <vector>

#include "bapofi/aft_sampler.hpp"
#include "bapofi/bart.hpp"
#include "bapofi/dataset.hpp"

namespace bapofi::tox {

// Probit sum-of-trees: y_tox = 1 iff w > 0, w ~ N(eta(z, x), 1).
struct ToxChainState {
  bart::ForestState forest;
  std::vector<double> latent;

  // Every latent has the sign implied by its toxicity indicator.
  bool consistent(std::span<const int> y) const;
};

ToxChainState initialize(const TrialDataset& data, const bart::Design& design,
                         const ChainSettings& settings);
// Redraws each latent from N(eta_i, 1) truncated to the side set by y_i.
void latent_step(ToxChainState& state, std::span<const int> y, Rng& rng);

struct ToxDraws {
  std::vector<std::vector<double>> eta_control;  // per draw, per patient
  std::vector<std::vector<double>> eta_treated;
  std::vector<bart::ForestState> forests;  // only with keep_forests
  std::uint64_t seed = 0;

  std::size_t size() const { return eta_control.size(); }
};

// Throws SchemaError when the dataset has no toxicity column.
ToxDraws run_tox_chain(const TrialDataset& data, const ChainSettings& settings);

// Monte Carlo average of Phi(eta) at new covariates (needs forests).
double tox_probability(const ToxDraws& draws, int arm, std::span<const double> x);
// Same at observed patient i.
double tox_probability(const ToxDraws& draws, int arm, std::size_t i);
std::vector<double> tox_table(const ToxDraws& draws, int arm);

}  // namespace bapofi::tox
