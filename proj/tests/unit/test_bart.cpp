#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "bapofi/bart.hpp"

using namespace bapofi;
using namespace bapofi::bart;

namespace {

// Prior law of a single tree on one variable with `cuts` distinct cut
// points: expected leaf count, by recursion over cut intervals.
double prior_leaves(int lo, int hi, int depth, const ForestHyper& h, std::vector<std::vector<double>>& memo) {
  if (hi < lo) return 1.0;
  double& m = memo[depth * 64 + lo][hi];
  if (m > 0) return m;
  const double ps = h.split_probability(depth);
  double grown = 0.0;
  for (int c = lo; c <= hi; ++c) {
    grown += prior_leaves(lo, c - 1, depth + 1, h, memo) + prior_leaves(c + 1, hi, depth + 1, h, memo);
  }
  grown /= (hi - lo + 1);
  return m = (1 - ps) + ps * grown;
}

}  // namespace

TEST_SUITE("bart") {
  TEST_CASE("cut grids and ranks") {
    const std::vector<int> arm{0, 1, 0, 1};
    const std::vector<double> x{3.0, 1.0, 2.0, 1.0};
    Design d(arm, x, 1);
    CHECK(d.vars() == 2);
    CHECK(d.cuts(0) == std::vector<double>{1.0});
    CHECK(d.cuts(1) == std::vector<double>{2.0, 3.0});
    CHECK(d.rank(0, 1) == 2);
    CHECK(d.rank(1, 1) == 0);
    CHECK(d.rank(2, 1) == 1);
  }

  TEST_CASE("grow, route, prune") {
    const std::vector<int> arm{0, 1, 0, 1};
    const std::vector<double> x{3.0, 1.0, 2.0, 1.0};
    Design d(arm, x, 1);
    Tree t(0.5);
    t.grow(0, 1, 1, 3.0);
    CHECK(t.leaf_count() == 2);
    const int left = t.node(0).left, right = t.node(0).right;
    CHECK(t.leaf_for(d, 0) == right);
    CHECK(t.leaf_for(d, 2) == left);
    const std::vector<double> probe{2.5};
    CHECK(t.leaf_for(0, probe) == left);
    t.grow(left, 0, 0, 1.0);
    CHECK(t.depth(t.node(left).left) == 2);
    CHECK(t.leaf_for(d, 1) == t.node(left).right);
    t.prune(left);
    CHECK(t.leaf_count() == 2);
    t.prune(0);
    CHECK(t.size() == 1);
  }

  TEST_CASE("split probability and root prior") {
    ForestHyper h;
    CHECK(h.split_probability(0) == doctest::Approx(0.95));
    CHECK(h.split_probability(2) == doctest::Approx(0.95 / 9));
    const std::vector<int> arm{0, 1};
    const std::vector<double> x{0.0, 1.0};
    Design d(arm, x, 1);
    CHECK(log_tree_prior(Tree{}, d, h) == doctest::Approx(std::log(0.05)));
    Tree t;
    t.grow(0, 1, 0, 1.0);
    // Children have no cuts left on x but may split on the arm.
    CHECK(log_tree_prior(t, d, h) ==
          doctest::Approx(std::log(0.95) + std::log(0.5) + 2 * std::log(1 - h.split_probability(1))));
  }

  TEST_CASE("gaussian loglik") {
    const std::vector<double> y{1.0, 2.0}, m{1.0, 1.0};
    CHECK(gaussian_loglik(y, m, 2.0) ==
          doctest::Approx(-std::log(4 * M_PI) - 0.25));
    CHECK_THROWS_AS(gaussian_loglik(y, m, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_loglik(y, std::vector<double>{1.0}, 1.0), std::invalid_argument);
  }

  TEST_CASE("flat likelihood leaves the tree prior invariant") {
    // Arm constant, so only the covariate splits; 12 distinct values.
    const int n = 12;
    std::vector<int> arm(n, 0);
    std::vector<double> x(n), y(n, 0.0);
    for (int i = 0; i < n; ++i) x[i] = i;
    Design d(arm, x, 1);
    ForestHyper h;
    h.trees = 1;
    auto state = make_forest(h, d, 0.0, 1.0, 0.0);
    Rng rng(17);
    double leaves = 0.0;
    const int sweeps = 200000;
    for (int s = 0; s < sweeps; ++s) {
      gibbs_sweep(state, y, d, 1e12, rng);
      leaves += static_cast<double>(state.trees[0].leaf_count());
    }
    std::vector<std::vector<double>> memo(64 * 64, std::vector<double>(64, 0.0));
    const double expect = prior_leaves(0, n - 2, 0, h, memo);
    CHECK(leaves / sweeps == doctest::Approx(expect).epsilon(0.02));
  }

  TEST_CASE("forest recovers a step function and keeps its cache") {
    Rng rng(5);
    const int n = 300;
    std::vector<int> arm(n);
    std::vector<double> x(n * 2), y(n), f(n);
    for (int i = 0; i < n; ++i) {
      arm[i] = i % 2;
      x[2 * i] = rng.uniform();
      x[2 * i + 1] = rng.uniform();
      f[i] = (x[2 * i] > 0.5 ? 2.0 : 0.0) + (arm[i] == 1 ? 1.0 : 0.0);
      y[i] = f[i] + 0.1 * rng.normal();
    }
    Design d(arm, x, 2);
    auto state = make_regression_forest(ForestHyper{}, d, y);
    SweepStats stats;
    for (int s = 0; s < 300; ++s) gibbs_sweep(state, y, d, 0.01, rng, &stats);
    double sse = 0.0;
    for (int i = 0; i < n; ++i) sse += (state.fit[i] - f[i]) * (state.fit[i] - f[i]);
    CHECK(std::sqrt(sse / n) < 0.1);
    const auto again = predict_rows(state, d);
    for (int i = 0; i < n; ++i) CHECK(again[i] == doctest::Approx(state.fit[i]).epsilon(1e-9));
    const std::vector<double> row{0.9, 0.2};
    CHECK(predict(state, 1, row) - predict(state, 0, row) == doctest::Approx(1.0).epsilon(0.15));
    CHECK(stats.proposed[0] > 0);
    CHECK(stats.accepted[0] > 0);
  }

  TEST_CASE("forest serialization round trips") {
    Rng rng(8);
    std::vector<int> arm{0, 1, 0, 1, 1, 0};
    std::vector<double> x{0.1, 0.5, 0.3, 0.9, 0.7, 0.2}, y{1, 2, 1, 3, 2, 1};
    Design d(arm, x, 1);
    auto state = make_regression_forest(ForestHyper{}, d, y);
    for (int s = 0; s < 20; ++s) gibbs_sweep(state, y, d, 0.5, rng);
    std::stringstream io;
    write_forest(io, state);
    auto back = read_forest(io);
    CHECK(back.trees == state.trees);
    CHECK(back.offset == state.offset);
    CHECK(predict_rows(back, d) == predict_rows(state, d));
  }
}
