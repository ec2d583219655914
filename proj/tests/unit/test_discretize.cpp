#include <doctest.h>

#include <set>
#include <sstream>

#include "bapofi/discretize.hpp"
#include "bapofi/rng.hpp"

using namespace bapofi;

namespace {

TrialDataset numeric(std::size_t n, std::size_t p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> arm(n);
  std::vector<double> x(n * p), y(n);
  for (std::size_t i = 0; i < n; ++i) arm[i] = i % 2;
  for (double& v : x) v = rng.normal();
  for (double& v : y) v = rng.normal();
  std::vector<Covariate> covs(p);
  for (std::size_t j = 0; j < p; ++j) covs[j].name = "x" + std::to_string(j + 1);
  return TrialDataset(arm, x, covs, y, std::vector<int>(n, 1), std::nullopt);
}

}  // namespace

TEST_SUITE("discretize") {
  TEST_CASE("terciles of 1..300 are the 100th and 200th values") {
    std::vector<double> v(300);
    for (int i = 0; i < 300; ++i) v[i] = 300 - i;
    CHECK(empirical_quantile(v, kLowerTercile) == 100.0);
    CHECK(empirical_quantile(v, kUpperTercile) == 200.0);
    CHECK(empirical_quantile(v, 0.5) == 150.0);
  }

  TEST_CASE("continuous bins are left-closed") {
    CovariateBin b;
    b.q33 = -0.5;
    b.q67 = 0.5;
    CHECK(b.category(-0.6) == 0);
    CHECK(b.category(-0.5) == 1);
    CHECK(b.category(0.5) == 2);
  }

  TEST_CASE("fit_bins chooses kinds and rejects degenerate columns") {
    std::vector<double> x;
    for (int i = 0; i < 12; ++i) {
      x.push_back(i);        // continuous
      x.push_back(i % 2);    // binary
      x.push_back(i % 3);    // three levels
    }
    TrialDataset d(std::vector<int>(12, 0), x, {{"a", {}}, {"b", {}}, {"c", {}}},
                   std::vector<double>(12, 1.0), std::vector<int>(12, 1), std::nullopt);
    const auto bins = fit_bins(d);
    CHECK(bins.covariates[0].kind == CovariateBin::Kind::Continuous);
    CHECK(bins.covariates[0].q33 == 3.0);
    CHECK(bins.covariates[0].q67 == 7.0);
    CHECK(bins.covariates[1].categories() == 2);
    CHECK(bins.covariates[2].categories() == 3);

    TrialDataset flat(std::vector<int>(4, 0), std::vector<double>(4, 2.0), {{"k", {}}},
                      std::vector<double>(4, 1.0), std::vector<int>(4, 1), std::nullopt);
    CHECK_THROWS_AS(fit_bins(flat), std::invalid_argument);
  }

  TEST_CASE("merge maps collapse categories") {
    std::vector<double> x{1, 2, 3, 4, 5, 1, 2, 3};
    TrialDataset d(std::vector<int>(8, 0), x, {{"stage", {}}}, std::vector<double>(8, 1.0),
                   std::vector<int>(8, 1), std::nullopt);
    BinPolicy policy{{"stage", BinOverride{true, {{1, "I"}, {2, "I"}, {3, "II"}, {4, "III"}, {5, "III"}}}}};
    const auto bins = fit_bins(d, policy);
    const auto& b = bins.covariates[0];
    CHECK(b.categories() == 3);
    CHECK(b.category(2) == 0);
    CHECK(b.category(5) == 2);
    CHECK_THROWS(fit_bins(d, {{"stage", BinOverride{true, {}}}}));
  }

  TEST_CASE("bins round trip through JSON") {
    const auto d = numeric(60, 3, 4);
    const auto bins = fit_bins(d);
    std::stringstream io;
    write_bins(io, bins);
    const auto back = read_bins(io);
    REQUIRE(back.p() == 3);
    CHECK(back.covariates[1].q33 == bins.covariates[1].q33);
    CHECK(back.assign(d) == bins.assign(d));
  }

  TEST_CASE("action family has the expected size and unique encodings") {
    const auto bins = fit_bins(numeric(90, 10, 5));
    const auto actions = enumerate_actions(bins);
    CHECK(actions.size() == 3302);
    CHECK(actions[0] == SubgroupAction::null());
    CHECK(actions[1] == SubgroupAction::all());
    std::set<std::string> seen;
    for (const auto& a : actions) {
      const auto code = a.encode();
      CHECK(SubgroupAction::decode(code) == a);
      seen.insert(code);
    }
    CHECK(seen.size() == actions.size());
  }

  TEST_CASE("membership for rectangles and L shapes") {
    CovariateBins bins;
    for (const char* name : {"BMI", "age"}) {
      CovariateBin b;
      b.name = name;
      b.q33 = -1;
      b.q67 = 1;
      bins.covariates.push_back(b);
    }
    const auto rect = SubgroupAction::two(0, 1, 0b100, 0b001, SubgroupAction::Shape::Rectangular);
    const auto ell = SubgroupAction::two(0, 1, 0b100, 0b001, SubgroupAction::Shape::LShaped);
    const std::vector<double> both{2, -2}, one{2, 0}, none{0, 0};
    CHECK(membership(both, rect, bins));
    CHECK_FALSE(membership(one, rect, bins));
    CHECK(membership(one, ell, bins));
    CHECK_FALSE(membership(none, ell, bins));
    CHECK(membership(none, SubgroupAction::all(), bins));
    CHECK_THROWS_AS(membership(none, SubgroupAction::null(), bins), std::invalid_argument);
    CHECK(describe(SubgroupAction::one(0, 0b100), bins) == "BMI >= Q67");
  }
}
