#include "bapofi/toxicity.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "bapofi/error.hpp"
#include "bapofi/normal.hpp"

namespace bapofi::tox {

bool ToxChainState::consistent(std::span<const int> y) const {
  if (latent.size() != y.size()) return false;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 1 ? !(latent[i] > 0.0) : !(latent[i] < 0.0)) return false;
  }
  return true;
}

ToxChainState initialize(const TrialDataset& data, const bart::Design& design,
                         const ChainSettings& settings) {
  if (!data.has_tox()) throw SchemaError("toxicity column required");
  const auto& y = data.tox();
  const double n = static_cast<double>(y.size());
  const double events = std::accumulate(y.begin(), y.end(), 0.0);
  // Offset at the smoothed marginal rate; leaves cover +-3 on the latent scale.
  const double offset = normal::quantile((events + 0.5) / (n + 1.0));
  const double scale = 3.0 / (settings.forest.k * std::sqrt(double(settings.forest.trees)));
  ToxChainState s;
  s.forest = bart::make_forest(settings.forest, design, offset, scale, offset);
  s.latent.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) s.latent[i] = y[i] == 1 ? 0.5 : -0.5;
  return s;
}

void latent_step(ToxChainState& s, std::span<const int> y, Rng& rng) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double eta = s.forest.fit[i];
    // Standardized bounds for w - eta.
    s.latent[i] = eta + (y[i] == 1 ? normal::sample_truncated(-eta, inf, rng)
                                   : normal::sample_truncated(-inf, -eta, rng));
  }
}

ToxDraws run_tox_chain(const TrialDataset& data, const ChainSettings& settings) {
  settings.validate();
  if (!data.has_tox()) throw SchemaError("toxicity column required");
  const bart::Design design(data);
  ToxChainState s = initialize(data, design, settings);
  const auto& y = data.tox();
  Rng rng(settings.seed);
  ToxDraws out;
  out.seed = settings.seed;
  for (int it = 0; it < settings.iterations; ++it) {
    latent_step(s, y, rng);
    bart::gibbs_sweep(s.forest, s.latent, design, 1.0, rng);
    if (it < settings.burn_in || (it - settings.burn_in) % settings.thin != 0) continue;
    out.eta_control.push_back(bart::predict_rows(s.forest, design, 0));
    out.eta_treated.push_back(bart::predict_rows(s.forest, design, 1));
    if (settings.keep_forests) {
      out.forests.push_back(s.forest);
      out.forests.back().fit.clear();
    }
  }
  return out;
}

double tox_probability(const ToxDraws& draws, int arm, std::span<const double> x) {
  if (draws.forests.empty()) throw std::logic_error("toxicity at new covariates needs forest snapshots");
  double p = 0.0;
  for (const auto& f : draws.forests) p += normal::cdf(bart::predict(f, arm, x));
  return p / static_cast<double>(draws.forests.size());
}

double tox_probability(const ToxDraws& draws, int arm, std::size_t i) {
  if (draws.size() == 0) throw std::logic_error("no toxicity draws");
  const auto& eta = arm == 1 ? draws.eta_treated : draws.eta_control;
  double p = 0.0;
  for (const auto& e : eta) p += normal::cdf(e.at(i));
  return p / static_cast<double>(eta.size());
}

std::vector<double> tox_table(const ToxDraws& draws, int arm) {
  if (draws.size() == 0) throw std::logic_error("no toxicity draws");
  const auto& eta = arm == 1 ? draws.eta_treated : draws.eta_control;
  std::vector<double> out(eta.front().size(), 0.0);
  for (const auto& e : eta) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += normal::cdf(e[i]);
  }
  for (double& v : out) v /= static_cast<double>(eta.size());
  return out;
}

}  // namespace bapofi::tox
