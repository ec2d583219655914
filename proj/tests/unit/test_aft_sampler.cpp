#include <doctest.h>

#include <cmath>
#include <numeric>

#include "bapofi/aft_sampler.hpp"
#include "bapofi/error.hpp"
#include "bapofi/normal.hpp"

using namespace bapofi;

namespace {

// Lognormal AFT data: y = 1 + shift*z + 0.3 x1 + N(0,1), with a random
// fraction censored uniformly below the event time.
TrialDataset lognormal(std::size_t n, double shift, double censor, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> arm(n), event(n, 1);
  std::vector<double> x(n * 2), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    arm[i] = i % 2;
    x[2 * i] = rng.normal();
    x[2 * i + 1] = rng.normal();
    y[i] = 1.0 + shift * arm[i] + 0.3 * x[2 * i] + rng.normal();
    if (rng.uniform() < censor) {
      y[i] += std::log(rng.uniform());
      event[i] = 0;
    }
  }
  return TrialDataset(arm, x, {{"x1", {}}, {"x2", {}}}, y, event, std::nullopt);
}

aft::SamplerConfig short_config(int iterations, std::uint64_t seed) {
  aft::SamplerConfig c;
  c.chain.iterations = iterations;
  c.chain.burn_in = iterations / 2;
  c.chain.thin = 2;
  c.chain.seed = seed;
  c.chain.forest.trees = 20;
  return c;
}

}  // namespace

TEST_SUITE("aft_sampler") {
  TEST_CASE("config validation") {
    aft::SamplerConfig c;
    c.chain.iterations = 10;
    c.chain.burn_in = 10;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.chain.burn_in = 2;
    c.chain.thin = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.chain.thin = 1;
    c.pt_depth = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.pt_depth = 6;
    CHECK_NOTHROW(c.validate());
    CHECK(c.chain.recorded_draws() == 8);
  }

  TEST_CASE("initial state") {
    const auto d = lognormal(60, 0.5, 0.3, 1);
    const bart::Design design(d);
    const auto s = aft::initialize(d, design, short_config(10, 1));
    CHECK(s.consistent());
    const double mean = std::accumulate(s.complete.y_log.begin(), s.complete.y_log.end(), 0.0) / 60;
    for (double f : s.forest.fit) CHECK(f == doctest::Approx(mean));
    for (std::size_t i = 0; i < d.n(); ++i) {
      if (d.event()[i] == 0) {
        CHECK(s.complete.y_log[i] > d.log_time()[i]);
      } else {
        CHECK(s.complete.y_log[i] == d.log_time()[i]);
      }
    }
    // Prior mode equals the arm-regression residual variance.
    CHECK(s.prior_scale / (s.prior_shape + 1) > 0.3);
  }

  TEST_CASE("steps keep the state consistent and imputations above censoring") {
    const auto d = lognormal(80, 0.5, 0.4, 2);
    const bart::Design design(d);
    auto s = aft::initialize(d, design, short_config(10, 2));
    Rng rng(3);
    for (int it = 0; it < 50; ++it) {
      aft::step_mu(s, design, rng);
      REQUIRE(s.consistent());
      aft::step_sigma(s, rng);
      REQUIRE(s.consistent());
      const auto before = s.complete.y_log;
      aft::step_impute(s, d, rng);
      REQUIRE(s.consistent());
      for (std::size_t i = 0; i < d.n(); ++i) {
        if (d.event()[i] == 1) {
          REQUIRE(s.complete.y_log[i] == before[i]);
        } else {
          REQUIRE(s.complete.y_log[i] > d.log_time()[i]);
          REQUIRE(s.complete.kappa[i] > 0.0);
        }
      }
    }
  }

  TEST_CASE("no censoring makes imputation the identity") {
    const auto d = lognormal(40, 0.0, 0.0, 4);
    const bart::Design design(d);
    auto s = aft::initialize(d, design, short_config(10, 4));
    const auto before = s.complete.y_log;
    const auto counts = s.counts;
    Rng rng(1);
    aft::step_impute(s, d, rng);
    CHECK(s.complete.y_log == before);
    CHECK(s.counts == counts);
  }

  TEST_CASE("depth one accepts every proposal") {
    const auto d = lognormal(60, 0.5, 0.1, 5);
    auto c = short_config(200, 5);
    c.pt_depth = 1;
    const auto draws = aft::run_chain(d, c);
    CHECK(draws.diagnostics.mu_accepted == 200);
    CHECK(draws.diagnostics.sigma_accepted == 200);
    CHECK(draws.diagnostics.mu_uncertain == 0);
    CHECK(draws.diagnostics.sigma_uncertain == 0);
  }

  TEST_CASE("fixed seed gives bit-identical draws") {
    const auto d = lognormal(50, 0.5, 0.2, 6);
    auto c = short_config(60, 9);
    c.check_consistency = true;
    const auto a = aft::run_chain(d, c);
    const auto b = aft::run_chain(d, c);
    REQUIRE(a.draws.size() == 15);
    for (std::size_t k = 0; k < a.draws.size(); ++k) {
      CHECK(a.draws[k].sigma2 == b.draws[k].sigma2);
      CHECK(a.draws[k].mean_treated == b.draws[k].mean_treated);
      CHECK(a.draws[k].counts == b.draws[k].counts);
    }
    c.chain.seed = 10;
    CHECK(aft::run_chain(d, c).draws.back().sigma2 != a.draws.back().sigma2);
  }

  TEST_CASE("survival probability edge cases") {
    aft::PosteriorDraws draws;
    draws.pt_depth = 6;
    aft::Draw d;
    d.sigma2 = 1.0;
    d.counts = pt::PolyaTreeCounts(6);
    d.mean_control = {std::log(90.0)};
    d.mean_treated = {std::log(90.0) + 1.0};
    draws.draws.push_back(d);
    CHECK(aft::survival_probability(draws, 90.0, 0, std::size_t{0}) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(aft::survival_probability(draws, 90.0, 1, std::size_t{0}) ==
          doctest::Approx(normal::cdf(1.0)).epsilon(1e-12));
    CHECK(aft::survival_probability(draws, 1e-300, 0, std::size_t{0}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(aft::survival_probability(draws, 0.0, 0, std::size_t{0}), std::invalid_argument);
    const std::vector<double> x{0.0};
    CHECK_THROWS_AS(aft::survival_probability(draws, 90.0, 0, x), std::logic_error);
  }

  TEST_CASE("survival is a nonincreasing probability and new rows match cached rows") {
    const auto d = lognormal(80, 0.5, 0.1, 7);
    auto c = short_config(100, 7);
    c.chain.keep_forests = true;
    const auto draws = aft::run_chain(d, c);
    double prev = 1.0;
    for (double tau = 0.5; tau < 200; tau *= 1.7) {
      const double s = aft::survival_probability(draws, tau, 1, std::size_t{3});
      CHECK(s >= 0.0);
      CHECK(s <= prev + 1e-15);
      prev = s;
    }
    const auto table = aft::survival_table(draws, 5.0, 0);
    for (std::size_t i : {0u, 17u, 55u}) {
      CHECK(aft::survival_probability(draws, 5.0, 0, d.row(i)) == doctest::Approx(table[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("null data gives a shift near zero") {
    const auto d = lognormal(200, 0.0, 0.1, 8);
    auto c = short_config(600, 8);
    c.chain.forest.trees = 50;
    const auto draws = aft::run_chain(d, c);
    std::vector<double> shifts;
    for (const auto& dr : draws.draws) {
      double s = 0.0;
      for (std::size_t i = 0; i < d.n(); ++i) s += dr.mean_treated[i] - dr.mean_control[i];
      shifts.push_back(s / d.n());
    }
    const double m = std::accumulate(shifts.begin(), shifts.end(), 0.0) / shifts.size();
    double v = 0.0;
    for (double s : shifts) v += (s - m) * (s - m);
    const double sd = std::sqrt(v / (shifts.size() - 1));
    CHECK(std::abs(m) < 3 * sd + 0.05);
  }
}
