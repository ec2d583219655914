#include "bapofi/decision.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "bapofi/error.hpp"

namespace bapofi::decision {

void TradeoffSpec::validate() const {
  if (!(delta0 >= 0.0)) throw ConfigError("delta0 must be nonnegative");
  if (!std::isfinite(delta1)) throw ConfigError("delta1 must be finite");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
}

void UtilityParams::validate() const {
  if (!(nu > 0.0)) throw ConfigError("nu must be positive");
  if (!(zeta > 0.0)) throw ConfigError("zeta must be positive");
  if (std::isnan(u0)) throw ConfigError("u0 must be a number");
}

double pcte_tte(const aft::PosteriorDraws& draws, double tau, std::span<const double> x) {
  return aft::survival_probability(draws, tau, 1, x) - aft::survival_probability(draws, tau, 0, x);
}

std::vector<double> pcte_tte_table(const aft::PosteriorDraws& draws, double tau) {
  auto out = aft::survival_table(draws, tau, 1);
  const auto control = aft::survival_table(draws, tau, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= control[i];
  return out;
}

double pcte_tox(const tox::ToxDraws& draws, std::span<const double> x) {
  return tox::tox_probability(draws, 1, x) - tox::tox_probability(draws, 0, x);
}

std::vector<double> pcte_tox_table(const tox::ToxDraws& draws) {
  auto out = tox::tox_table(draws, 1);
  const auto control = tox::tox_table(draws, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= control[i];
  return out;
}

std::optional<double> pate(const SubgroupAction& a, std::span<const double> pcte,
                           std::span<const std::uint8_t> codes, std::size_t p) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pcte.size(); ++i) {
    if (member(codes.subspan(i * p, p), a)) {
      sum += pcte[i];
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

double average_mcmd(const SubgroupAction& a, double pate_tox, const TradeoffSpec& spec) {
  if (a.kind == SubgroupAction::Kind::Null) throw std::invalid_argument("no MCMD for the null report");
  return spec.delta0 + spec.delta1 * pate_tox;
}

double utility(const SubgroupAction& a, double pate_tte, double deltabar, double size,
               const UtilityParams& params) {
  if (a.kind == SubgroupAction::Kind::Null) return params.u0;
  return (pate_tte - deltabar) * std::pow(size + 1.0, params.nu) /
         std::pow(a.covariate_count() + 1.0, params.zeta);
}

SubgroupTables::SubgroupTables(std::size_t p)
    : p_(p), single_(p * 3), pair_(p * (p - (p > 0)) / 2 * 9) {}

std::size_t SubgroupTables::pair_index(int j, int k) const {
  // Row-major upper triangle without the diagonal.
  const std::size_t a = static_cast<std::size_t>(j), b = static_cast<std::size_t>(k);
  return a * p_ - a * (a + 1) / 2 + (b - a - 1);
}

void SubgroupTables::add(std::span<const std::uint8_t> codes, double tte, double tox, double weight) {
  auto bump = [&](Stats& s) {
    s.weight += weight;
    s.tte += weight * tte;
    s.tox += weight * tox;
  };
  bump(total_);
  for (std::size_t j = 0; j < p_; ++j) {
    bump(single_[j * 3 + codes[j]]);
    for (std::size_t k = j + 1; k < p_; ++k) {
      bump(pair_[pair_index(int(j), int(k)) * 9 + codes[j] * 3 + codes[k]]);
    }
  }
}

SubgroupTables::Stats SubgroupTables::stats(const SubgroupAction& a) const {
  using K = SubgroupAction::Kind;
  Stats s;
  auto take = [&](const Stats& c) {
    s.weight += c.weight;
    s.tte += c.tte;
    s.tox += c.tox;
  };
  switch (a.kind) {
    case K::Null: throw std::invalid_argument("no subgroup for the null report");
    case K::All: return total_;
    case K::OneCov:
      for (int c = 0; c < 3; ++c) {
        if ((a.wj >> c) & 1) take(single_[a.j * 3 + c]);
      }
      return s;
    case K::TwoCov: {
      const Stats* cells = &pair_[pair_index(a.j, a.k) * 9];
      const bool rect = a.shape == SubgroupAction::Shape::Rectangular;
      for (int cj = 0; cj < 3; ++cj) {
        for (int ck = 0; ck < 3; ++ck) {
          const bool in_j = (a.wj >> cj) & 1, in_k = (a.wk >> ck) & 1;
          if (rect ? (in_j && in_k) : (in_j || in_k)) take(cells[cj * 3 + ck]);
        }
      }
      return s;
    }
  }
  return s;
}

std::size_t RankedReport::rank_of(const SubgroupAction& a) const {
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (ranked[r].action == a) return r + 1;
  }
  return 0;
}

bool RankedReport::in_top(const SubgroupAction& a) const {
  const std::size_t r = rank_of(a);
  return r > 0 && r <= report_size;
}

RankedReport score_actions(const std::vector<SubgroupAction>& actions, const SubgroupTables& tables,
                           double size_scale, const TradeoffSpec& spec,
                           const UtilityParams& params, std::size_t report_size) {
  RankedReport out;
  out.report_size = report_size;
  out.ranked.reserve(actions.size());
  for (std::size_t idx = 0; idx < actions.size(); ++idx) {
    const auto& a = actions[idx];
    ActionScore sc;
    sc.action = a;
    sc.index = idx;
    sc.covariates = a.covariate_count();
    if (a.kind == SubgroupAction::Kind::Null) {
      sc.utility = params.u0;
      out.ranked.push_back(sc);
      continue;
    }
    const auto st = tables.stats(a);
    if (a.kind == SubgroupAction::Kind::All) out.population = st.weight * size_scale;
    if (!(st.weight > 0.0)) {
      out.excluded.push_back(a);
      continue;
    }
    sc.size = st.weight * size_scale;
    sc.pate_tte = st.tte / st.weight;
    sc.pate_tox = st.tox / st.weight;
    sc.deltabar = average_mcmd(a, sc.pate_tox, spec);
    sc.utility = utility(a, sc.pate_tte, sc.deltabar, sc.size, params);
    out.ranked.push_back(sc);
  }
  if (out.ranked.size() <= 1) throw std::invalid_argument("no nonempty actions to rank");
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const ActionScore& x, const ActionScore& y) { return x.utility > y.utility; });
  for (std::size_t r = 0; r < out.ranked.size() && r < report_size; ++r) out.ranked[r].top = true;
  return out;
}

RankedReport rank_from_pcte(const TrialDataset& data, const CovariateBins& bins,
                            std::span<const double> pcte_tte, std::span<const double> pcte_tox,
                            const TradeoffSpec& spec, const UtilityParams& params) {
  spec.validate();
  params.validate();
  if (spec.delta1 != 0.0 && pcte_tox.empty()) {
    throw std::invalid_argument("toxicity effects required when delta1 != 0");
  }
  const std::size_t n = data.n(), p = bins.p();
  if (pcte_tte.size() != n || (!pcte_tox.empty() && pcte_tox.size() != n)) {
    throw std::invalid_argument("PCTE table length does not match the dataset");
  }
  const auto codes = bins.assign(data);
  SubgroupTables tables(p);
  const std::span<const std::uint8_t> all_codes(codes);
  for (std::size_t i = 0; i < n; ++i) {
    // With delta1 = 0 toxicity never enters the score.
    const double tox = spec.delta1 != 0.0 ? pcte_tox[i] : 0.0;
    tables.add(all_codes.subspan(i * p, p), pcte_tte[i], tox);
  }
  return score_actions(enumerate_actions(bins), tables, 1.0, spec, params);
}

RankedReport rank_actions(const TrialDataset& data, const CovariateBins& bins,
                          const aft::PosteriorDraws& tte_draws, const tox::ToxDraws* tox_draws,
                          const TradeoffSpec& spec, const UtilityParams& params) {
  spec.validate();
  if (spec.delta1 != 0.0 && tox_draws == nullptr) {
    throw std::invalid_argument("toxicity draws required when delta1 != 0");
  }
  const auto tte = pcte_tte_table(tte_draws, spec.tau);
  std::vector<double> tox;
  if (spec.delta1 != 0.0) tox = pcte_tox_table(*tox_draws);
  return rank_from_pcte(data, bins, tte, tox, spec, params);
}

std::string report_json(const RankedReport& report, const CovariateBins& bins, std::size_t rows) {
  nlohmann::ordered_json actions = nlohmann::ordered_json::array();
  const std::size_t shown = std::min(rows, report.ranked.size());
  for (std::size_t r = 0; r < shown; ++r) {
    const auto& s = report.ranked[r];
    nlohmann::ordered_json row;
    row["rank"] = r + 1;
    row["action"] = s.action.encode();
    row["label"] = describe(s.action, bins);
    row["top"] = s.top;
    row["utility"] = s.utility;
    if (s.action.kind != SubgroupAction::Kind::Null) {
      row["size"] = s.size;
      row["size_percent"] = report.population > 0 ? 100.0 * s.size / report.population : 0.0;
      row["covariates"] = s.covariates;
      row["pate_tte"] = s.pate_tte;
      row["pate_tox"] = s.pate_tox;
      row["deltabar"] = s.deltabar;
    }
    actions.push_back(row);
  }
  nlohmann::ordered_json out;
  out["population"] = report.population;
  out["report_size"] = report.report_size;
  out["scored"] = report.ranked.size();
  nlohmann::ordered_json excluded = nlohmann::ordered_json::array();
  for (const auto& a : report.excluded) excluded.push_back(a.encode());
  out["excluded"] = excluded;
  out["actions"] = actions;
  return out.dump(2);
}

void write_report_table(std::ostream& out, const RankedReport& report, const CovariateBins& bins,
                        std::size_t rows) {
  const std::size_t shown = std::min(rows, report.ranked.size());
  std::size_t width = 6;
  for (std::size_t r = 0; r < shown; ++r) {
    width = std::max(width, describe(report.ranked[r].action, bins).size());
  }
  const auto flags = out.flags();
  out << std::left << std::setw(5) << "rank" << std::setw(int(width) + 2) << "action"
      << std::right << std::setw(8) << "size%" << std::setw(10) << "U" << std::setw(10)
      << "PATE" << std::setw(10) << "PATEtox" << std::setw(10) << "delta" << '\n';
  out << std::fixed;
  for (std::size_t r = 0; r < shown; ++r) {
    const auto& s = report.ranked[r];
    out << std::left << std::setw(5) << (std::to_string(r + 1) + (s.top ? "*" : ""))
        << std::setw(int(width) + 2) << describe(s.action, bins) << std::right;
    if (s.action.kind == SubgroupAction::Kind::Null) {
      out << std::setw(8) << "" << std::setprecision(4) << std::setw(10) << s.utility << '\n';
      continue;
    }
    const double pct = report.population > 0 ? 100.0 * s.size / report.population : 0.0;
    out << std::setprecision(1) << std::setw(8) << pct << std::setprecision(4) << std::setw(10)
        << s.utility << std::setw(10) << s.pate_tte << std::setw(10) << s.pate_tox
        << std::setw(10) << s.deltabar << '\n';
  }
  out.flags(flags);
}

}  // namespace bapofi::decision
