#include "bapofi/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "bapofi/error.hpp"
#include "bapofi/normal.hpp"

namespace bapofi::sim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Fixed stream for the calibration / truth covariate sample, so that the
// truth of a scenario does not depend on the replicate seeds.
constexpr std::uint64_t kTruthSeed = 0x7e57ab1e;

double level_quantile(double q) {
  if (q <= 0.0) return -kInf;
  if (q >= 1.0) return kInf;
  return normal::quantile(q);
}

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

bool Region::contains(std::span<const double> x) const {
  if (clauses.empty()) return true;
  for (const auto& clause : clauses) {
    bool all = true;
    for (const auto& iv : clause) {
      const double v = x[static_cast<std::size_t>(iv.var)];
      if (!(v >= level_quantile(iv.lo) && v < level_quantile(iv.hi))) {
        all = false;
        break;
      }
    }
    if (all) return true;
  }
  return false;
}

double Region::probability() const {
  if (clauses.empty()) return 1.0;
  const std::size_t m = clauses.size();
  double total = 0.0;
  for (std::size_t mask = 1; mask < (std::size_t{1} << m); ++mask) {
    std::map<int, std::pair<double, double>> box;
    for (std::size_t c = 0; c < m; ++c) {
      if (!((mask >> c) & 1)) continue;
      for (const auto& iv : clauses[c]) {
        auto [it, fresh] = box.try_emplace(iv.var, iv.lo, iv.hi);
        if (!fresh) {
          it->second.first = std::max(it->second.first, iv.lo);
          it->second.second = std::min(it->second.second, iv.hi);
        }
      }
    }
    double pr = 1.0;
    for (const auto& [var, lh] : box) pr *= std::max(0.0, lh.second - lh.first);
    total += (std::popcount(mask) % 2 == 1 ? 1.0 : -1.0) * pr;
  }
  return total;
}

int Region::max_var() const {
  int v = -1;
  for (const auto& c : clauses) {
    for (const auto& iv : c) v = std::max(v, iv.var);
  }
  return v;
}

double h_tte(std::span<const double> x) {
  return 0.1 * x[0] + 0.05 * x[1] - 0.1 * x[2] - 0.1 * x[3] + 0.05 * x[4] - 0.05 * x[0] * x[2];
}

double h_tox(std::span<const double> x) {
  return 0.05 * x[5] - 0.1 * x[6] - 0.1 * x[7] + 0.05 * x[8] + 0.1 * x[9] - 0.05 * x[5] * x[7];
}

double ScenarioSpec::g_tte(int z, std::span<const double> x) const {
  double g = beta_c + h_tte(x);
  if (z == 1) g += beta0 + (gamma != 0.0 && tte_region.contains(x) ? gamma : 0.0);
  return g;
}

double ScenarioSpec::g_tox(int z, std::span<const double> x) const {
  double g = alpha_c + h_tox(x);
  if (z == 1 && gamma_tox != 0.0 && tox_region.contains(x)) g += gamma_tox;
  return g;
}

double ScenarioSpec::survival(int z, std::span<const double> x) const {
  return normal::cdf((g_tte(z, x) - std::log(tau)) / s);
}

double ScenarioSpec::tox_rate(int z, std::span<const double> x) const { return logistic(g_tox(z, x)); }

int ScenarioSpec::required_p() const { return 10; }

std::vector<std::string> scenario_ids() {
  return {"0",  "E1", "E2", "E3", "E4",    "E5",    "E6",    "E7",    "E8",
          "E9", "E10", "T1", "T2", "E1*T1", "E1*T2", "E2*T1", "E2*T2", "E4*T1", "E4*T2"};
}

namespace {

bool efficacy_region(const std::string& id, Region& r) {
  constexpr double t1 = 1.0 / 3.0, t2 = 2.0 / 3.0;
  static const std::map<std::string, Region> table = {
      {"E1", Region{}},
      {"E2", Region{{{{0, t1, 1.0}}}}},
      {"E3", Region{{{{0, 0.5, 1.0}}}}},
      {"E4", Region{{{{0, t2, 1.0}}}}},
      {"E5", Region{{{{0, t1, 1.0}, {1, t1, 1.0}}}}},
      {"E6", Region{{{{0, 0.5, 1.0}, {1, 0.5, 1.0}}}}},
      {"E7", Region{{{{0, t1, 1.0}, {1, t2, 1.0}}}}},
      {"E8", Region{{{{0, t1, t2}}}}},
      {"E9", Region{{{{0, 0.0, 0.25}}, {{0, 0.75, 1.0}}}}},
      {"E10", Region{{{{0, t2, 1.0}}, {{1, t2, 1.0}}}}},
  };
  auto it = table.find(id);
  if (it == table.end()) return false;
  r = it->second;
  return true;
}

bool toxicity_region(const std::string& id, Region& r) {
  if (id == "T1") r = Region{{{{5, 0.0, 1.0 / 3.0}}}};
  else if (id == "T2") r = Region{{{{5, 0.0, 2.0 / 3.0}}}};
  else return false;
  return true;
}

}  // namespace

ScenarioSpec make_scenario(const std::string& id, double effect_tte, double effect_tox) {
  ScenarioSpec s;
  s.id = id;
  if (id == "0") return s;
  const auto star = id.find('*');
  const std::string e = star == std::string::npos ? (id[0] == 'E' ? id : "") : id.substr(0, star);
  const std::string t = star == std::string::npos ? (id[0] == 'T' ? id : "") : id.substr(star + 1);
  static const std::vector<std::string> products = {"E1*T1", "E1*T2", "E2*T1",
                                                    "E2*T2", "E4*T1", "E4*T2"};
  if (star != std::string::npos && std::find(products.begin(), products.end(), id) == products.end()) {
    throw ConfigError("unknown scenario id: " + id);
  }
  if (!e.empty()) {
    if (!efficacy_region(e, s.tte_region)) throw ConfigError("unknown scenario id: " + id);
    s.efficacy = true;
    s.effect_tte = effect_tte;
  }
  if (!t.empty()) {
    if (!toxicity_region(t, s.tox_region)) throw ConfigError("unknown scenario id: " + id);
    s.toxicity = true;
    s.effect_tox = effect_tox;
  }
  if (!s.efficacy && !s.toxicity) throw ConfigError("unknown scenario id: " + id);
  if (s.efficacy && !(s.surv_control + effect_tte > 0.0 && s.surv_control + effect_tte < 1.0)) {
    throw ConfigError("efficacy effect puts S(tau) outside (0,1)");
  }
  if (s.toxicity && !(s.tox_control + effect_tox > 0.0 && s.tox_control + effect_tox < 1.0)) {
    throw ConfigError("toxicity effect puts Pr(tox) outside (0,1)");
  }
  return s;
}

CovariateSample draw_covariates(std::size_t size, std::size_t p, std::uint64_t seed) {
  CovariateSample out;
  out.size = size;
  out.p = p;
  out.x.resize(size * p);
  Rng rng(seed);
  for (double& v : out.x) v = rng.normal();
  return out;
}

namespace {

// Solves mean(f(b, i) over selected rows) = target for increasing f.
template <class F>
double bisect(F&& mean_at, double target, const char* what) {
  double lo = -1.0, hi = 1.0;
  for (int k = 0; mean_at(lo) > target; ++k) {
    lo *= 2.0;
    if (k > 40) throw NumericalError(std::string("cannot bracket ") + what);
  }
  for (int k = 0; mean_at(hi) < target; ++k) {
    hi *= 2.0;
    if (k > 40) throw NumericalError(std::string("cannot bracket ") + what);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_at(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct SampleCache {
  std::vector<double> h_tte, h_tox;
  std::vector<char> in_tte, in_tox;
};

SampleCache cache_sample(const ScenarioSpec& spec, const CovariateSample& sample) {
  if (sample.p < 10) throw std::invalid_argument("scenarios need at least 10 covariates");
  SampleCache c;
  c.h_tte.resize(sample.size);
  c.h_tox.resize(sample.size);
  c.in_tte.resize(sample.size);
  c.in_tox.resize(sample.size);
  for (std::size_t i = 0; i < sample.size; ++i) {
    const auto x = sample.row(i);
    c.h_tte[i] = h_tte(x);
    c.h_tox[i] = h_tox(x);
    c.in_tte[i] = spec.tte_region.contains(x);
    c.in_tox[i] = spec.tox_region.contains(x);
  }
  return c;
}

// Mean of link(base + shift + h_i) over rows with sel(i).
template <class Link, class Sel>
double average(const std::vector<double>& h, double shift, Link&& link, Sel&& sel) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (!sel(i)) continue;
    s += link(shift + h[i]);
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace

ScenarioSpec calibrate_scenario(ScenarioSpec spec, const CovariateSample& sample) {
  const auto c = cache_sample(spec, sample);
  const double log_tau = std::log(spec.tau);
  auto surv = [&](double g) { return normal::cdf((g - log_tau) / spec.s); };
  auto every = [](std::size_t) { return true; };
  auto sensitive = [&](std::size_t i) { return c.in_tte[i] != 0; };
  auto outside = [&](std::size_t i) { return c.in_tte[i] == 0; };

  spec.beta_c = bisect([&](double b) { return average(c.h_tte, b, surv, every); },
                       spec.surv_control, "beta_c");
  spec.beta0 = 0.0;
  spec.gamma = 0.0;
  if (spec.efficacy) {
    const double sens_target = spec.surv_control + spec.effect_tte;
    if (spec.tte_region.everywhere()) {
      spec.beta0 = bisect([&](double b) { return average(c.h_tte, spec.beta_c + b, surv, every); },
                          sens_target, "beta0");
    } else {
      spec.beta0 = bisect(
          [&](double b) { return average(c.h_tte, spec.beta_c + b, surv, outside); },
          spec.surv_nonsensitive, "beta0");
      spec.gamma = bisect(
          [&](double g) { return average(c.h_tte, spec.beta_c + spec.beta0 + g, surv, sensitive); },
          sens_target, "gamma");
    }
  }
  spec.alpha_c = bisect([&](double a) { return average(c.h_tox, a, logistic, every); },
                        spec.tox_control, "alpha_c");
  spec.gamma_tox = 0.0;
  if (spec.toxicity) {
    auto tox_in = [&](std::size_t i) { return c.in_tox[i] != 0; };
    spec.gamma_tox = bisect(
        [&](double g) { return average(c.h_tox, spec.alpha_c + g, logistic, tox_in); },
        spec.tox_control + spec.effect_tox, "gamma_tox");
  }
  spec.calibrated = true;
  return spec;
}

MarginalCheck marginals(const ScenarioSpec& spec, const CovariateSample& sample) {
  MarginalCheck m;
  double n_out = 0, n_in = 0, n_tox = 0;
  for (std::size_t i = 0; i < sample.size; ++i) {
    const auto x = sample.row(i);
    m.surv_control += spec.survival(0, x);
    m.tox_control += spec.tox_rate(0, x);
    if (spec.tte_region.contains(x)) {
      m.surv_treated_sensitive += spec.survival(1, x);
      ++n_in;
    } else {
      m.surv_treated_nonsensitive += spec.survival(1, x);
      ++n_out;
    }
    if (spec.tox_region.contains(x)) {
      m.tox_treated_sensitive += spec.tox_rate(1, x);
      ++n_tox;
    }
  }
  const double n = static_cast<double>(sample.size);
  m.surv_control /= n;
  m.tox_control /= n;
  if (n_in > 0) m.surv_treated_sensitive /= n_in;
  if (n_out > 0) m.surv_treated_nonsensitive /= n_out;
  if (n_tox > 0) m.tox_treated_sensitive /= n_tox;
  return m;
}

TrialDataset generate_tte(const ScenarioSpec& spec, std::size_t n, std::size_t p, Rng& rng) {
  if (n < 2 || n % 2 != 0) throw std::invalid_argument("n must be even and at least 2");
  if (p < 10) throw std::invalid_argument("scenarios need at least 10 covariates");
  std::vector<int> arm(n, 0);
  std::fill(arm.begin() + static_cast<std::ptrdiff_t>(n / 2), arm.end(), 1);
  std::shuffle(arm.begin(), arm.end(), rng.engine());
  std::vector<double> x(n * p);
  for (double& v : x) v = rng.normal();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> row(x.data() + i * p, p);
    y[i] = spec.g_tte(arm[i], row) + spec.s * rng.normal();
  }
  std::vector<Covariate> covs(p);
  for (std::size_t j = 0; j < p; ++j) covs[j].name = "x" + std::to_string(j + 1);
  return TrialDataset(std::move(arm), std::move(x), std::move(covs), std::move(y),
                      std::vector<int>(n, 1), std::nullopt);
}

TrialDataset apply_censoring(const TrialDataset& data, double q, Rng& rng) {
  if (!(q >= 0.0 && q < 1.0)) throw std::invalid_argument("censoring proportion must be in [0,1)");
  const std::size_t n = data.n();
  const auto m = static_cast<std::size_t>(std::floor(q * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: the first m entries are a uniform sample.
  for (std::size_t k = 0; k < m; ++k) std::swap(idx[k], idx[k + rng.index(n - k)]);
  auto y = data.log_time();
  auto event = data.event();
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = idx[k];
    double u = 0.0;
    while (!(u > 0.0)) u = rng.uniform();
    y[i] += std::log(u);
    event[i] = 0;
  }
  std::optional<std::vector<int>> tox;
  if (data.has_tox()) tox = data.tox();
  return TrialDataset(data.arm(), data.x(), data.covariates(), std::move(y), std::move(event),
                      std::move(tox));
}

TrialDataset generate_tox(const ScenarioSpec& spec, const TrialDataset& data, Rng& rng) {
  if (data.p() < 10) throw std::invalid_argument("scenarios need at least 10 covariates");
  std::vector<int> tox(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    tox[i] = rng.uniform() < spec.tox_rate(data.arm(i), data.row(i)) ? 1 : 0;
  }
  return TrialDataset(data.arm(), data.x(), data.covariates(), data.log_time(), data.event(),
                      std::move(tox));
}

CovariateBins theoretical_bins(std::size_t p) {
  CovariateBins bins;
  for (std::size_t j = 0; j < p; ++j) {
    CovariateBin b;
    b.name = "x" + std::to_string(j + 1);
    b.q33 = normal::quantile(kLowerTercile);
    b.q67 = normal::quantile(kUpperTercile);
    bins.covariates.push_back(b);
  }
  return bins;
}

const char* hypothesis_name(Hypothesis h) {
  switch (h) {
    case Hypothesis::Null: return "H0";
    case Hypothesis::All: return "H1";
    case Hypothesis::Subgroup: return "Ha";
  }
  return "?";
}

Truth true_subgroup(const ScenarioSpec& spec, const CovariateSample& sample, std::size_t n,
                    const decision::TradeoffSpec& tradeoff, const decision::UtilityParams& params) {
  if (!spec.calibrated) throw std::logic_error("scenario must be calibrated first");
  const auto bins = theoretical_bins(sample.p);
  decision::SubgroupTables tables(sample.p);
  std::vector<std::uint8_t> codes(sample.p);
  for (std::size_t i = 0; i < sample.size; ++i) {
    const auto x = sample.row(i);
    for (std::size_t j = 0; j < sample.p; ++j) {
      codes[j] = static_cast<std::uint8_t>(bins.covariates[j].category(x[j]));
    }
    tables.add(codes, spec.survival(1, x) - spec.survival(0, x), spec.tox_rate(1, x) - spec.tox_rate(0, x));
  }
  decision::TradeoffSpec t = tradeoff;
  t.tau = spec.tau;
  Truth out;
  out.report = decision::score_actions(enumerate_actions(bins), tables,
                                       static_cast<double>(n) / static_cast<double>(sample.size),
                                       t, params);
  out.action = out.report.best().action;
  switch (out.action.kind) {
    case SubgroupAction::Kind::Null: out.hypothesis = Hypothesis::Null; break;
    case SubgroupAction::Kind::All: out.hypothesis = Hypothesis::All; break;
    default: out.hypothesis = Hypothesis::Subgroup; break;
  }
  return out;
}

double true_utility(const SubgroupAction& a, const Truth& truth) {
  for (const auto& s : truth.report.ranked) {
    if (s.action == a) return s.utility;
  }
  return -kInf;  // empty subgroup
}

double OCSummary::standard_error(double rate, int reps) {
  return reps > 0 ? std::sqrt(rate * (1.0 - rate) / reps) : 0.0;
}

OCSummary summarize(std::span<const ReplicateRecord> records, Hypothesis hypothesis) {
  OCSummary s;
  s.hypothesis = hypothesis;
  int null_in = 0, all_in = 0, true_in = 0, null_miss = 0, all_miss = 0, other = 0;
  for (const auto& r : records) {
    if (!r.ok) {
      ++s.failures;
      continue;
    }
    ++s.reps;
    s.mu_acceptance += r.mu_acceptance;
    s.sigma_acceptance += r.sigma_acceptance;
    null_in += r.null_in;
    all_in += r.all_in;
    true_in += r.true_in;
    switch (hypothesis) {
      case Hypothesis::Null: break;
      case Hypothesis::All:
        null_miss += r.null_in && !r.all_in;
        other += !(r.null_in || r.all_in);
        break;
      case Hypothesis::Subgroup:
        null_miss += r.null_in && !r.true_in;
        all_miss += r.all_in && !r.true_in;
        other += !(r.true_in || r.null_in || r.all_in);
        break;
    }
  }
  if (s.reps == 0) return s;
  const double R = s.reps;
  s.mu_acceptance /= R;
  s.sigma_acceptance /= R;
  switch (hypothesis) {
    case Hypothesis::Null:
      s.tdr = null_in / R;
      s.t1e = 1.0 - s.tdr;
      s.fdr = s.t1e;
      break;
    case Hypothesis::All:
      s.tdr = all_in / R;
      s.fnr = null_miss / R;
      s.fsr = other / R;
      s.fdr = s.fnr + s.fsr;
      break;
    case Hypothesis::Subgroup:
      s.tdr = true_in / R;
      s.fnr = null_miss / R;
      s.fpr = all_miss / R;
      s.fsr = other / R;
      s.fdr = s.fnr + s.fpr + s.fsr;
      break;
  }
  return s;
}

namespace {

std::string replicate_key(const ScenarioSpec& spec, const SimConfig& c, int rep) {
  std::ostringstream k;
  k.precision(17);
  const auto& ch = c.sampler.chain;
  k << spec.id << '|' << spec.effect_tte << '|' << spec.effect_tox << '|' << c.n << '|' << c.p << '|'
    << c.censor << '|' << c.seed << '|' << rep << '|' << c.tradeoff.delta0 << '|'
    << c.tradeoff.delta1 << '|' << c.utility.nu << '|' << c.utility.zeta << '|' << c.utility.u0
    << '|' << ch.iterations << '|' << ch.burn_in << '|' << ch.thin << '|' << ch.forest.trees << '|'
    << ch.forest.k << '|' << c.sampler.pt_depth << '|' << c.sampler.pt_c << '|'
    << c.sampler.sigma_shape << '|' << c.sampler.sigma_scale.value_or(-1.0);
  for (const auto& g : c.tune_grid) k << '|' << g.nu << ',' << g.zeta;
  return k.str();
}

nlohmann::json record_json(const ReplicateRecord& r, const std::string& key) {
  nlohmann::json j;
  j["key"] = key;
  j["rep"] = r.rep;
  j["seed"] = r.seed;
  j["ok"] = r.ok;
  if (!r.ok) j["error"] = r.error;
  j["top"] = r.top;
  j["null_in"] = r.null_in;
  j["all_in"] = r.all_in;
  j["true_in"] = r.true_in;
  j["max_nonnull"] = r.max_nonnull;
  j["cutoff_nonnull"] = r.cutoff_nonnull;
  j["grid_cutoffs"] = r.grid_cutoffs;
  j["mu_acceptance"] = r.mu_acceptance;
  j["sigma_acceptance"] = r.sigma_acceptance;
  return j;
}

ReplicateRecord record_from_json(const nlohmann::json& j) {
  ReplicateRecord r;
  r.rep = j.at("rep").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.ok = j.at("ok").get<bool>();
  if (j.contains("error")) r.error = j["error"].get<std::string>();
  r.top = j.at("top").get<std::vector<std::string>>();
  r.null_in = j.at("null_in").get<bool>();
  r.all_in = j.at("all_in").get<bool>();
  r.true_in = j.at("true_in").get<bool>();
  r.max_nonnull = j.at("max_nonnull").get<double>();
  r.cutoff_nonnull = j.at("cutoff_nonnull").get<double>();
  r.grid_cutoffs = j.at("grid_cutoffs").get<std::vector<double>>();
  r.mu_acceptance = j.at("mu_acceptance").get<double>();
  r.sigma_acceptance = j.at("sigma_acceptance").get<double>();
  return r;
}

std::map<std::string, ReplicateRecord> load_log(const std::string& path) {
  std::map<std::string, ReplicateRecord> out;
  if (path.empty()) return out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      // A replicate that failed is retried on resume.
      if (j.at("ok").get<bool>()) out[j.at("key").get<std::string>()] = record_from_json(j);
    } catch (const std::exception&) {
      // A torn last line from an interrupted run is simply redone.
    }
  }
  return out;
}

}  // namespace

FittedReplicate fit_replicate(const ScenarioSpec& spec, const SimConfig& config, int rep) {
  const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(rep);
  Rng data_rng(Rng::derive(seed, 1));
  auto data = generate_tte(spec, config.n, config.p, data_rng);
  Rng censor_rng(Rng::derive(seed, 2));
  data = apply_censoring(data, config.censor, censor_rng);
  const bool tradeoff = config.tradeoff.delta1 != 0.0;
  if (tradeoff) {
    Rng tox_rng(Rng::derive(seed, 3));
    data = generate_tox(spec, data, tox_rng);
  }
  FittedReplicate out;
  out.bins = fit_bins(data);
  auto sampler = config.sampler;
  sampler.chain.seed = Rng::derive(seed, 4);
  sampler.chain.keep_forests = false;
  const auto draws = aft::run_chain(data, sampler);
  out.pcte_tte = decision::pcte_tte_table(draws, spec.tau);
  out.diagnostics = draws.diagnostics;
  if (tradeoff) {
    auto settings = sampler.chain;
    settings.seed = Rng::derive(seed, 5);
    out.pcte_tox = decision::pcte_tox_table(tox::run_tox_chain(data, settings));
  }
  out.data = std::move(data);
  return out;
}

namespace {

// Utility of the report_size-th best non-null action (-inf if fewer).
double nonnull_cutoff(const decision::RankedReport& report, double* max_nonnull) {
  std::size_t seen = 0;
  for (const auto& s : report.ranked) {
    if (s.action.kind == SubgroupAction::Kind::Null) continue;
    if (seen == 0 && max_nonnull) *max_nonnull = s.utility;
    if (++seen == report.report_size) return s.utility;
  }
  return -kInf;
}

}  // namespace

ReplicateRecord run_replicate(const ScenarioSpec& spec, const Truth& truth, const SimConfig& config,
                              int rep) {
  ReplicateRecord rec;
  rec.rep = rep;
  rec.seed = config.seed + static_cast<std::uint64_t>(rep);
  try {
    const auto fit = fit_replicate(spec, config, rep);
    decision::TradeoffSpec t = config.tradeoff;
    t.tau = spec.tau;
    const auto report =
        decision::rank_from_pcte(fit.data, fit.bins, fit.pcte_tte, fit.pcte_tox, t, config.utility);
    for (std::size_t r = 0; r < report.ranked.size() && r < report.report_size; ++r) {
      rec.top.push_back(report.ranked[r].action.encode());
    }
    rec.null_in = report.in_top(SubgroupAction::null());
    rec.all_in = report.in_top(SubgroupAction::all());
    rec.true_in = report.in_top(truth.action);
    rec.cutoff_nonnull = nonnull_cutoff(report, &rec.max_nonnull);
    for (const auto& params : config.tune_grid) {
      const auto r = decision::rank_from_pcte(fit.data, fit.bins, fit.pcte_tte, fit.pcte_tox, t, params);
      rec.grid_cutoffs.push_back(nonnull_cutoff(r, nullptr));
    }
    rec.mu_acceptance = fit.diagnostics.mu_acceptance();
    rec.sigma_acceptance = fit.diagnostics.sigma_acceptance();
  } catch (const std::exception& e) {
    rec = ReplicateRecord{};
    rec.rep = rep;
    rec.seed = config.seed + static_cast<std::uint64_t>(rep);
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

namespace {

std::vector<ReplicateRecord> run_all(const ScenarioSpec& spec, const Truth& truth,
                                     const SimConfig& config) {
  if (config.reps < 1) throw ConfigError("reps must be at least 1");
  config.sampler.validate();
  auto done = load_log(config.log_path);
  std::vector<ReplicateRecord> records(static_cast<std::size_t>(config.reps));
  std::vector<int> todo;
  for (int r = 0; r < config.reps; ++r) {
    auto it = done.find(replicate_key(spec, config, r));
    if (it != done.end()) records[static_cast<std::size_t>(r)] = it->second;
    else todo.push_back(r);
  }
  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path, std::ios::app);
    if (!log) throw ConfigError("cannot open replicate log " + config.log_path);
  }
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  int finished = config.reps - static_cast<int>(todo.size());
  auto worker = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      const int r = todo[k];
      auto rec = run_replicate(spec, truth, config, r);
      std::lock_guard<std::mutex> lock(mu);
      if (log.is_open()) log << record_json(rec, replicate_key(spec, config, r)).dump() << '\n' << std::flush;
      records[static_cast<std::size_t>(r)] = std::move(rec);
      ++finished;
      if (config.progress) config.progress(finished, config.reps);
    }
  };
  const int jobs = std::max(1, std::min<int>(config.jobs, static_cast<int>(todo.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return records;
}

}  // namespace

ReplicateRun run_replicates(const ScenarioSpec& spec_in, const SimConfig& config) {
  config.tradeoff.validate();
  config.utility.validate();
  ReplicateRun out;
  const auto sample = draw_covariates(config.mc_size, std::max<std::size_t>(config.p, 10), kTruthSeed);
  out.spec = spec_in.calibrated ? spec_in : calibrate_scenario(spec_in, sample);
  out.truth = true_subgroup(out.spec, sample, config.n, config.tradeoff, config.utility);
  out.records = run_all(out.spec, out.truth, config);
  out.summary = summarize(out.records, out.truth.hypothesis);
  return out;
}

double tune_u0(std::span<const double> cutoffs, double target_t1e) {
  if (!(target_t1e > 0.0 && target_t1e <= 1.0)) {
    throw std::invalid_argument("target type I error must be in (0,1]");
  }
  if (target_t1e == 1.0) return -kInf;
  const double R = static_cast<double>(cutoffs.size());
  if (R * target_t1e < 1.0 - 1e-12) {
    throw std::invalid_argument("too few replicates for the target type I error");
  }
  std::vector<double> v(cutoffs.begin(), cutoffs.end());
  std::sort(v.begin(), v.end());
  auto k = static_cast<std::size_t>(std::ceil((1.0 - target_t1e) * R - 1e-9));
  k = std::clamp<std::size_t>(k, 1, v.size());
  return v[k - 1];
}

TuneResult tune(const SimConfig& config, double target_t1e,
                const std::vector<decision::UtilityParams>& grid) {
  SimConfig c = config;
  // The cutoffs do not depend on u0; pin it so resumed logs match.
  c.utility.u0 = 0.0;
  c.tradeoff.delta1 = 0.0;
  c.tune_grid = grid;
  const auto sample = draw_covariates(std::min<std::size_t>(c.mc_size, 100000),
                                      std::max<std::size_t>(c.p, 10), kTruthSeed);
  const auto spec = calibrate_scenario(make_scenario("0"), sample);
  Truth truth;
  truth.action = SubgroupAction::null();
  TuneResult out;
  out.records = run_all(spec, truth, c);
  auto solve = [&](auto cutoff_of, double nu, double zeta) {
    std::vector<double> cutoffs;
    for (const auto& r : out.records) {
      if (r.ok) cutoffs.push_back(cutoff_of(r));
    }
    out.points.push_back({nu, zeta, tune_u0(cutoffs, target_t1e)});
  };
  if (grid.empty()) {
    solve([](const ReplicateRecord& r) { return r.cutoff_nonnull; }, c.utility.nu, c.utility.zeta);
  } else {
    for (std::size_t g = 0; g < grid.size(); ++g) {
      solve([g](const ReplicateRecord& r) { return r.grid_cutoffs.at(g); }, grid[g].nu, grid[g].zeta);
    }
  }
  return out;
}

}  // namespace bapofi::sim
