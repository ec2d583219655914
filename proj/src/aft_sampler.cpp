#include "bapofi/aft_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "bapofi/error.hpp"

namespace bapofi {

void ChainSettings::validate() const {
  if (iterations <= burn_in) throw ConfigError("iterations must exceed burn-in");
  if (burn_in < 0) throw ConfigError("burn-in must be nonnegative");
  if (thin < 1) throw ConfigError("thinning interval must be at least 1");
  if (forest.trees < 1) throw ConfigError("forest needs at least one tree");
  if (!(forest.split_base > 0.0 && forest.split_base < 1.0)) throw ConfigError("split base must be in (0,1)");
  if (!(forest.split_power >= 0.0)) throw ConfigError("split power must be nonnegative");
  if (!(forest.k > 0.0)) throw ConfigError("forest k must be positive");
}

std::size_t ChainSettings::recorded_draws() const {
  return static_cast<std::size_t>((iterations - burn_in + thin - 1) / thin);
}

}  // namespace bapofi

namespace bapofi::aft {

void SamplerConfig::validate() const {
  chain.validate();
  if (!(sigma_shape > 0.0)) throw ConfigError("sigma2 prior shape must be positive");
  if (sigma_scale && !(*sigma_scale > 0.0)) throw ConfigError("sigma2 prior scale must be positive");
  try {
    pt::PolyaTreeSpec{pt_depth, pt_c, 1.0}.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

bool ChainState::consistent() const {
  const std::size_t n = residuals.size();
  if (forest.fit.size() != n || complete.y_log.size() != n) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if (residuals[i] != complete.y_log[i] - forest.fit[i]) return false;
  }
  if (!counts.consistent() || pt.sigma2 != sigma2) return false;
  if (!(counts == pt::PolyaTreeCounts::from_residuals(residuals, pt))) return false;
  return correction == pt::correction_factor(counts, pt);
}

namespace {

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(std::span<const double> v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(std::max<std::size_t>(1, v.size() - 1));
}

// Residual variance of a least-squares fit of y on arm (two group means).
double arm_regression_variance(std::span<const double> y, std::span<const int> arm) {
  double sum[2] = {0, 0};
  double cnt[2] = {0, 0};
  for (std::size_t i = 0; i < y.size(); ++i) {
    sum[arm[i]] += y[i];
    cnt[arm[i]] += 1;
  }
  double ss = 0.0;
  int groups = 0;
  for (int a = 0; a < 2; ++a) groups += cnt[a] > 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double m = sum[arm[i]] / cnt[arm[i]];
    ss += (y[i] - m) * (y[i] - m);
  }
  const double df = static_cast<double>(y.size()) - groups;
  return df > 0 ? ss / df : variance_of(y);
}

void refresh_residuals(ChainState& s) {
  for (std::size_t i = 0; i < s.residuals.size(); ++i) {
    s.residuals[i] = s.complete.y_log[i] - s.forest.fit[i];
  }
}

void check(const ChainState& s, bool enabled, const char* step) {
  if (enabled && !s.consistent()) {
    throw NumericalError(std::string("Polya tree state inconsistent after ") + step);
  }
}

}  // namespace

ChainState initialize(const TrialDataset& data, const bart::Design& design,
                      const SamplerConfig& config) {
  config.validate();
  const std::size_t n = data.n();
  if (n < 2) throw std::invalid_argument("need at least two patients");
  ChainState s;
  const auto& y_obs = data.log_time();
  const double half_sd = 0.5 * std::sqrt(variance_of(y_obs));
  s.complete.y_log = y_obs;
  s.complete.kappa.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (data.event()[i] == 0) {
      s.complete.kappa[i] = half_sd > 0.0 ? half_sd : 1.0;
      s.complete.y_log[i] += s.complete.kappa[i];
    }
  }
  s.forest = bart::make_regression_forest(config.chain.forest, design, s.complete.y_log);
  s.residuals.resize(n);
  refresh_residuals(s);
  s.sigma2 = variance_of(s.residuals);
  if (!(s.sigma2 > 0.0)) s.sigma2 = 1.0;
  s.prior_shape = config.sigma_shape;
  s.prior_scale = config.sigma_scale.value_or(
      arm_regression_variance(s.complete.y_log, data.arm()) * (config.sigma_shape + 1.0));
  if (!(s.prior_scale > 0.0)) s.prior_scale = config.sigma_shape + 1.0;
  s.pt = pt::PolyaTreeSpec{config.pt_depth, config.pt_c, s.sigma2};
  s.counts = pt::PolyaTreeCounts::from_residuals(s.residuals, s.pt);
  s.correction = pt::correction_factor(s.counts, s.pt);
  return s;
}

bool step_mu(ChainState& s, const bart::Design& design, Rng& rng) {
  bart::ForestState proposal = s.forest;
  bart::gibbs_sweep(proposal, s.complete.y_log, design, s.sigma2, rng);
  std::vector<double> u(s.residuals.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = s.complete.y_log[i] - proposal.fit[i];
  auto counts = pt::PolyaTreeCounts::from_residuals(u, s.pt);
  const double corr = pt::correction_factor(counts, s.pt);
  const double log_ratio = corr - s.correction;
  if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio) {
    s.forest = std::move(proposal);
    s.residuals = std::move(u);
    s.counts = std::move(counts);
    s.correction = corr;
    return true;
  }
  return false;
}

bool step_sigma(ChainState& s, Rng& rng) {
  double ss = 0.0;
  for (double u : s.residuals) ss += u * u;
  const double shape = s.prior_shape + 0.5 * static_cast<double>(s.residuals.size());
  const double rate = s.prior_scale + 0.5 * ss;
  const double proposal = 1.0 / rng.gamma(shape, 1.0 / rate);
  if (!(proposal > 0.0) || !std::isfinite(proposal)) {
    throw NumericalError("sigma2 proposal is not a positive finite number");
  }
  const auto spec = s.pt.with_sigma2(proposal);
  auto counts = pt::PolyaTreeCounts::from_residuals(s.residuals, spec);
  const double corr = pt::correction_factor(counts, spec);
  const double log_ratio = corr - s.correction;
  if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio) {
    s.sigma2 = proposal;
    s.pt = spec;
    s.counts = std::move(counts);
    s.correction = corr;
    return true;
  }
  return false;
}

void step_impute(ChainState& s, const TrialDataset& data, Rng& rng) {
  const auto& y_obs = data.log_time();
  bool changed = false;
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (data.event()[i] == 1) continue;
    s.counts.remove(pt::bin_index(s.residuals[i], s.pt));
    const pt::Predictive pred(s.counts, s.pt);
    const double eta = s.forest.fit[i];
    const double lower = y_obs[i] - eta;
    double y = 0.0;
    // The bound holds for u; the loop guards the rounding of eta + u.
    do {
      y = eta + pred.sample_above(lower, rng);
    } while (!(y > y_obs[i]));
    s.complete.y_log[i] = y;
    s.complete.kappa[i] = y - y_obs[i];
    s.residuals[i] = y - eta;
    s.counts.add(pt::bin_index(s.residuals[i], s.pt));
    changed = true;
  }
  if (changed) s.correction = pt::correction_factor(s.counts, s.pt);
}

PosteriorDraws run_chain(const TrialDataset& data, const SamplerConfig& config) {
  config.validate();
  const bart::Design design(data);
  ChainState s = initialize(data, design, config);
  Rng rng(config.chain.seed);

  PosteriorDraws out;
  out.burn_in = config.chain.burn_in;
  out.thin = config.chain.thin;
  out.seed = config.chain.seed;
  out.pt_depth = config.pt_depth;
  out.pt_c = config.pt_c;
  out.draws.reserve(config.chain.recorded_draws());
  auto& diag = out.diagnostics;

  double s_sum = 0.0, s_sq = 0.0;
  double s_min = std::numeric_limits<double>::infinity(), s_max = 0.0;
  int kept = 0;
  for (int it = 0; it < config.chain.iterations; ++it) {
    const double corr_before_mu = s.correction;
    if (step_mu(s, design, rng)) ++diag.mu_accepted;
    // Acceptance probability < 1 exactly when the correction decreased.
    if (s.correction < corr_before_mu) ++diag.mu_uncertain;
    check(s, config.check_consistency, "step 1");

    const double corr_before_sigma = s.correction;
    if (step_sigma(s, rng)) ++diag.sigma_accepted;
    if (s.correction < corr_before_sigma) ++diag.sigma_uncertain;
    check(s, config.check_consistency, "step 2");

    step_impute(s, data, rng);
    check(s, config.check_consistency, "step 3");
    ++diag.iterations;

    if (it < config.chain.burn_in) continue;
    s_sum += s.sigma2;
    s_sq += s.sigma2 * s.sigma2;
    s_min = std::min(s_min, s.sigma2);
    s_max = std::max(s_max, s.sigma2);
    ++kept;
    if ((it - config.chain.burn_in) % config.chain.thin != 0) continue;
    Draw d;
    d.sigma2 = s.sigma2;
    d.mean_control = bart::predict_rows(s.forest, design, 0);
    d.mean_treated = bart::predict_rows(s.forest, design, 1);
    d.counts = s.counts;
    if (config.chain.keep_forests) {
      d.forest = s.forest;
      d.forest->fit.clear();
    }
    out.draws.push_back(std::move(d));
  }
  if (kept > 0) {
    diag.sigma2_mean = s_sum / kept;
    diag.sigma2_sd = std::sqrt(std::max(0.0, s_sq / kept - diag.sigma2_mean * diag.sigma2_mean));
    diag.sigma2_min = s_min;
    diag.sigma2_max = s_max;
  }
  return out;
}

namespace {

void require_tau(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
}

}  // namespace

double survival_probability(const PosteriorDraws& draws, double tau, int arm,
                            std::span<const double> x) {
  require_tau(tau);
  if (draws.draws.empty()) throw std::logic_error("no posterior draws");
  const double log_tau = std::log(tau);
  double s = 0.0;
  for (std::size_t d = 0; d < draws.draws.size(); ++d) {
    const auto& draw = draws.draws[d];
    if (!draw.forest) throw std::logic_error("survival at new covariates needs forest snapshots");
    const double eta = bart::predict(*draw.forest, arm, x);
    s += pt::Predictive(draw.counts, draws.spec(d)).tail(log_tau - eta);
  }
  return s / static_cast<double>(draws.draws.size());
}

double survival_probability(const PosteriorDraws& draws, double tau, int arm, std::size_t i) {
  require_tau(tau);
  if (draws.draws.empty()) throw std::logic_error("no posterior draws");
  const double log_tau = std::log(tau);
  double s = 0.0;
  for (std::size_t d = 0; d < draws.draws.size(); ++d) {
    const auto& draw = draws.draws[d];
    const double eta = arm == 1 ? draw.mean_treated.at(i) : draw.mean_control.at(i);
    s += pt::Predictive(draw.counts, draws.spec(d)).tail(log_tau - eta);
  }
  return s / static_cast<double>(draws.draws.size());
}

std::vector<double> survival_table(const PosteriorDraws& draws, double tau, int arm) {
  require_tau(tau);
  if (draws.draws.empty()) throw std::logic_error("no posterior draws");
  const double log_tau = std::log(tau);
  const std::size_t n = draws.draws.front().mean_control.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t d = 0; d < draws.draws.size(); ++d) {
    const auto& draw = draws.draws[d];
    const pt::Predictive pred(draw.counts, draws.spec(d));
    const auto& eta = arm == 1 ? draw.mean_treated : draw.mean_control;
    for (std::size_t i = 0; i < n; ++i) out[i] += pred.tail(log_tau - eta[i]);
  }
  for (double& v : out) v /= static_cast<double>(draws.draws.size());
  return out;
}

}  // namespace bapofi::aft
