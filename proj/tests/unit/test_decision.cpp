#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "bapofi/decision.hpp"
#include "bapofi/error.hpp"

using namespace bapofi;
using namespace bapofi::decision;

namespace {

struct Fixture {
  TrialDataset data;
  CovariateBins bins;
  std::vector<std::uint8_t> codes;
};

Fixture fixture(std::size_t n, std::size_t p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> arm(n);
  std::vector<double> x(n * p);
  for (std::size_t i = 0; i < n; ++i) arm[i] = i % 2;
  for (double& v : x) v = rng.normal();
  std::vector<Covariate> covs(p);
  for (std::size_t j = 0; j < p; ++j) covs[j].name = "x" + std::to_string(j + 1);
  Fixture f{TrialDataset(arm, x, covs, std::vector<double>(n, 1.0), std::vector<int>(n, 1), std::nullopt),
            {}, {}};
  f.bins = fit_bins(f.data);
  f.codes = f.bins.assign(f.data);
  return f;
}

}  // namespace

TEST_SUITE("decision") {
  TEST_CASE("average MCMD") {
    const auto a = SubgroupAction::all();
    CHECK(average_mcmd(a, 0.2, {0.2, 1.5, 720}) == 0.5);
    CHECK(average_mcmd(a, 0.7, {0.2, 0.0, 720}) == 0.2);
    CHECK(average_mcmd(a, 0.0, {0.2, 1.5, 720}) == 0.2);
    CHECK_THROWS_AS(average_mcmd(SubgroupAction::null(), 0.1, {}), std::invalid_argument);
  }

  TEST_CASE("utility worked example and null") {
    const UtilityParams params{0.25, 0.15, -0.304};
    const auto one = SubgroupAction::one(0, 0b110);
    const double hand = 0.2 * std::pow(100.0, 0.25) / std::pow(2.0, 0.15);
    CHECK(std::abs(utility(one, 0.4, 0.2, 99, params) - hand) < 1e-12);
    CHECK(hand == doctest::Approx(0.570).epsilon(1e-3));
    CHECK(utility(SubgroupAction::null(), 0.9, 0.1, 400, params) == -0.304);
    CHECK(utility(one, 0.2, 0.2, 57, params) == 0.0);
    // All is scored with |J| = 0.
    CHECK(utility(SubgroupAction::all(), 0.3, 0.2, 99, params) ==
          doctest::Approx(0.1 * std::pow(100.0, 0.25)));
  }

  TEST_CASE("utility is monotone in subgroup size with the sign of the benefit") {
    const UtilityParams params{0.3, 0.2, 0.0};
    const auto a = SubgroupAction::two(0, 1, 1, 1, SubgroupAction::Shape::Rectangular);
    for (double size = 1; size < 400; size += 37) {
      CHECK(utility(a, 0.5, 0.2, size + 1, params) > utility(a, 0.5, 0.2, size, params));
      CHECK(utility(a, 0.1, 0.2, size + 1, params) < utility(a, 0.1, 0.2, size, params));
    }
  }

  TEST_CASE("PATE edge cases") {
    const auto f = fixture(30, 3, 1);
    std::vector<double> pcte(30);
    for (std::size_t i = 0; i < 30; ++i) pcte[i] = 0.01 * double(i);
    const double mean = std::accumulate(pcte.begin(), pcte.end(), 0.0) / 30;
    CHECK(*pate(SubgroupAction::all(), pcte, f.codes, 3) == doctest::Approx(mean));
    std::vector<double> flat(30, 0.3);
    for (const auto& a : enumerate_actions(f.bins)) {
      if (a.kind == SubgroupAction::Kind::Null) continue;
      const auto v = pate(a, flat, f.codes, 3);
      if (v) CHECK(*v == doctest::Approx(0.3));
    }
    // One patient: a rectangle that only patient 0 occupies, if any.
    const std::span<const std::uint8_t> row(f.codes.data(), 3);
    const auto single = SubgroupAction::two(0, 1, std::uint8_t(1u << row[0]), std::uint8_t(1u << row[1]),
                                            SubgroupAction::Shape::Rectangular);
    int members = 0;
    for (std::size_t i = 0; i < 30; ++i) members += member({f.codes.data() + 3 * i, 3}, single);
    if (members == 1) CHECK(*pate(single, pcte, f.codes, 3) == pcte[0]);
  }

  TEST_CASE("cell tables agree with direct membership") {
    const auto f = fixture(120, 4, 2);
    Rng rng(3);
    std::vector<double> tte(120), tox(120);
    for (auto& v : tte) v = rng.normal() * 0.2;
    for (auto& v : tox) v = rng.uniform() * 0.1;
    SubgroupTables tables(4);
    for (std::size_t i = 0; i < 120; ++i) tables.add({f.codes.data() + 4 * i, 4}, tte[i], tox[i]);
    for (const auto& a : enumerate_actions(f.bins)) {
      if (a.kind == SubgroupAction::Kind::Null) continue;
      const auto st = tables.stats(a);
      const auto direct = pate(a, tte, f.codes, 4);
      if (!direct) {
        CHECK(st.weight == 0.0);
        continue;
      }
      CHECK(st.tte / st.weight == doctest::Approx(*direct).epsilon(1e-12));
      CHECK(st.tox / st.weight == doctest::Approx(*pate(a, tox, f.codes, 4)).epsilon(1e-12));
    }
  }

  TEST_CASE("no treatment effect with positive u0 ranks null first") {
    const auto f = fixture(90, 3, 4);
    const std::vector<double> zero(90, 0.0);
    const auto report = rank_from_pcte(f.data, f.bins, zero, {}, {0.2, 0.0, 90}, {0.25, 0.15, 0.01});
    CHECK(report.best().action == SubgroupAction::null());
    CHECK(report.ranked.front().top);
    CHECK(report.ranked[4].top);
    CHECK_FALSE(report.ranked[5].top);
    for (std::size_t r = 1; r < report.ranked.size(); ++r) {
      CHECK(report.ranked[r - 1].utility >= report.ranked[r].utility);
    }
  }

  TEST_CASE("ties keep enumeration order") {
    const auto f = fixture(60, 2, 5);
    // Dyadic effects average exactly, so every non-null benefit is exactly
    // zero and all actions tie with u0 = 0.
    const std::vector<double> same(60, 0.25);
    const auto report = rank_from_pcte(f.data, f.bins, same, {}, {0.25, 0.0, 90}, {0.25, 0.15, 0.0});
    for (std::size_t r = 1; r < report.ranked.size(); ++r) {
      CHECK(report.ranked[r - 1].index < report.ranked[r].index);
    }
  }

  TEST_CASE("toxicity is ignored when delta1 is zero and required otherwise") {
    const auto f = fixture(90, 3, 6);
    Rng rng(1);
    std::vector<double> tte(90), tox_a(90), tox_b(90);
    for (auto& v : tte) v = 0.3 + 0.2 * rng.normal();
    for (auto& v : tox_a) v = rng.uniform();
    for (auto& v : tox_b) v = -rng.uniform();
    const TradeoffSpec eff{0.2, 0.0, 90};
    const UtilityParams params{0.25, 0.15, -0.3};
    const auto a = rank_from_pcte(f.data, f.bins, tte, tox_a, eff, params);
    const auto b = rank_from_pcte(f.data, f.bins, tte, tox_b, eff, params);
    const auto c = rank_from_pcte(f.data, f.bins, tte, {}, eff, params);
    for (std::size_t r = 0; r < a.ranked.size(); ++r) {
      CHECK(a.ranked[r].action == b.ranked[r].action);
      CHECK(a.ranked[r].action == c.ranked[r].action);
      CHECK(a.ranked[r].utility == c.ranked[r].utility);
    }
    CHECK_THROWS_AS(rank_from_pcte(f.data, f.bins, tte, {}, {0.2, 1.5, 90}, params), std::invalid_argument);
  }

  TEST_CASE("shifting non-null utilities keeps their order") {
    const auto f = fixture(90, 3, 7);
    Rng rng(2);
    std::vector<double> tte(90);
    for (auto& v : tte) v = 0.2 * rng.normal();
    const UtilityParams params{0.25, 0.15, -0.3};
    const auto a = rank_from_pcte(f.data, f.bins, tte, {}, {0.2, 0.0, 90}, params);
    std::vector<ActionScore> nonnull;
    for (const auto& s : a.ranked) {
      if (s.action.kind != SubgroupAction::Kind::Null) nonnull.push_back(s);
    }
    auto shifted = nonnull;
    for (auto& s : shifted) s.utility += 0.7;
    std::stable_sort(shifted.begin(), shifted.end(),
                     [](const ActionScore& x, const ActionScore& y) { return x.utility > y.utility; });
    for (std::size_t r = 0; r < nonnull.size(); ++r) CHECK(shifted[r].action == nonnull[r].action);
  }

  TEST_CASE("empty subgroups are excluded") {
    // Two binary covariates that never disagree: the off-diagonal cells are empty.
    std::vector<double> x;
    for (int i = 0; i < 20; ++i) {
      x.push_back(i % 2);
      x.push_back(i % 2);
    }
    std::vector<int> arm(20);
    for (int i = 0; i < 20; ++i) arm[i] = (i / 2) % 2;
    TrialDataset d(arm, x, {{"a", {}}, {"b", {}}}, std::vector<double>(20, 1.0), std::vector<int>(20, 1),
                   std::nullopt);
    const auto bins = fit_bins(d);
    const auto report = rank_from_pcte(d, bins, std::vector<double>(20, 0.1), {}, {0.2, 0.0, 90},
                                       {0.25, 0.15, -0.3});
    CHECK(report.excluded.size() == 2);
    CHECK(report.ranked.size() + report.excluded.size() == enumerate_actions(bins).size());
    CHECK(report.rank_of(report.excluded.front()) == 0);
  }

  TEST_CASE("report renderings") {
    const auto f = fixture(60, 3, 8);
    std::vector<double> tte(60, 0.35);
    const auto report = rank_from_pcte(f.data, f.bins, tte, {}, {0.2, 0.0, 90}, {0.25, 0.15, -0.3});
    const auto j = nlohmann::json::parse(report_json(report, f.bins, 5));
    CHECK(j["actions"].size() == 5);
    CHECK(j["actions"][0]["action"] == "all");
    CHECK(j["actions"][0]["size_percent"] == doctest::Approx(100.0));
    std::ostringstream table;
    write_report_table(table, report, f.bins, 5);
    CHECK(table.str().find("all patients") != std::string::npos);
  }

  TEST_CASE("parameter validation") {
    CHECK_THROWS_AS((TradeoffSpec{-0.1, 0, 90}.validate()), ConfigError);
    CHECK_THROWS_AS((TradeoffSpec{0.1, 0, 0}.validate()), ConfigError);
    CHECK_THROWS_AS((UtilityParams{0.0, 0.1, 0}.validate()), ConfigError);
    CHECK_THROWS_AS((UtilityParams{0.1, -1, 0}.validate()), ConfigError);
  }
}
