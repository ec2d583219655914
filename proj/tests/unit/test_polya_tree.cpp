#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "bapofi/normal.hpp"
#include "bapofi/polya_tree.hpp"

using namespace bapofi;
using pt::PolyaTreeCounts;
using pt::PolyaTreeSpec;

namespace {

// Level-m bin of u, computed from the centring CDF directly.
long level_bin(double u, int m, double sigma) {
  const double f = 0.5 * std::erfc(-u / sigma / std::sqrt(2.0));
  return std::min<long>(static_cast<long>(std::floor(f * std::ldexp(1.0, m))), (1L << m) - 1);
}

// Sum of sequential predictive log densities, counting earlier residuals
// node by node.
double sequential_oracle(const std::vector<double>& u, int depth, double c, double sigma2) {
  const double sigma = std::sqrt(sigma2);
  double total = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double log_p = -0.5 * std::log(2 * M_PI * sigma2) - u[i] * u[i] / (2 * sigma2);
    for (int m = 2; m <= depth; ++m) {
      const double alpha = c * m * m;
      int in_node = 0, in_parent = 0;
      for (std::size_t j = 0; j < i; ++j) {
        in_node += level_bin(u[j], m, sigma) == level_bin(u[i], m, sigma);
        in_parent += level_bin(u[j], m - 1, sigma) == level_bin(u[i], m - 1, sigma);
      }
      log_p += std::log(2.0 * (alpha + in_node) / (2.0 * alpha + in_parent));
    }
    total += log_p;
  }
  return total;
}

double integrate(const pt::Predictive& pred, const PolyaTreeSpec& spec) {
  using boost::math::quadrature::gauss_kronrod;
  const auto f = [&](double x) { return pred.density(x); };
  double total = 0.0;
  for (std::size_t k = 0; k < spec.bins(); ++k) {
    total += gauss_kronrod<double, 61>::integrate(f, pt::bin_lower(k, spec), pt::bin_upper(k, spec), 15, 1e-12);
  }
  return total;
}

}  // namespace

TEST_SUITE("polya_tree") {
  TEST_CASE("bin paths follow the dyadic quantiles") {
    PolyaTreeSpec s{2, 1.0, 1.0};
    CHECK(pt::bin_path(-0.1, s).front() == 0);
    CHECK(pt::bin_path(0.0, s).front() == 1);
    CHECK(pt::bin_path(normal::quantile(0.6), s) == std::vector<int>{1, 0});
    CHECK(pt::bin_index(normal::quantile(0.75), s) == 3);
    PolyaTreeSpec wide{3, 1.0, 4.0};
    CHECK(pt::bin_lower(5, wide) == doctest::Approx(2.0 * normal::quantile(5.0 / 8)));
    CHECK(pt::bin_index(2.0 * normal::quantile(0.3), wide) == 2);
  }

  TEST_CASE("single observation gets the centring density") {
    PolyaTreeSpec s{6, 1.0, 1.0};
    const std::vector<double> u{0.3};
    CHECK(pt::marginal_loglik(u, s) == doctest::Approx(normal::log_density(0.3, 0, 1)).epsilon(1e-14));
    CHECK(pt::correction_factor(u, s) == 0.0);
  }

  TEST_CASE("two residuals on a shared path at depth 3") {
    PolyaTreeSpec s{3, 1.0, 1.0};
    const std::vector<double> u{0.10, 0.12};
    REQUIRE(pt::bin_index(0.10, s) == pt::bin_index(0.12, s));
    const double expect = std::log((2.0 * 5 / 9) * (2.0 * 10 / 19));
    CHECK(pt::correction_factor(u, s) == doctest::Approx(expect).epsilon(1e-13));
    CHECK(expect == doctest::Approx(0.1567).epsilon(1e-3));
    CHECK(pt::marginal_loglik(u, s) ==
          doctest::Approx(normal::log_density(0.10, 0, 1) + normal::log_density(0.12, 0, 1) + expect));
  }

  TEST_CASE("depth one has no correction") {
    PolyaTreeSpec s{1, 3.0, 2.0};
    const std::vector<double> u{-1.0, 0.2, 0.3, 5.0};
    CHECK(pt::correction_factor(u, s) == 0.0);
  }

  TEST_CASE("marginal matches the sequential oracle under every ordering") {
    Rng rng(99);
    for (int depth = 1; depth <= 3; ++depth) {
      for (std::size_t n = 1; n <= 5; ++n) {
        for (int rep = 0; rep < 4; ++rep) {
          std::vector<double> u(n);
          // Coarse values so that shared bins are common.
          for (double& x : u) x = std::round(rng.normal() * 4) / 4 + 0.01;
          const double c = 0.5 + rep;
          const double s2 = 0.5 + 0.5 * rep;
          PolyaTreeSpec s{depth, c, s2};
          const double value = pt::marginal_loglik(u, s);
          std::sort(u.begin(), u.end());
          do {
            CHECK(std::abs(sequential_oracle(u, depth, c, s2) - value) < 1e-10);
          } while (std::next_permutation(u.begin(), u.end()));
        }
      }
    }
  }

  TEST_CASE("large samples agree with sequential predictive densities") {
    // Nodes above and below the lgamma switch both match the chain rule.
    PolyaTreeSpec s{6, 1.0, 1.5};
    Rng rng(4);
    for (std::size_t n : {100, 400}) {
      std::vector<double> u(n);
      for (auto& v : u) v = 0.8 * rng.normal() + 0.3;
      PolyaTreeCounts c(s.depth);
      double seq = 0.0;
      for (double v : u) {
        seq += std::log(pt::Predictive(c, s).density(v));
        c.add(pt::bin_index(v, s));
      }
      CHECK(pt::marginal_loglik(u, s) == doctest::Approx(seq).epsilon(1e-12));
    }
  }

  TEST_CASE("counts stay consistent under add and remove") {
    PolyaTreeSpec s{4, 1.0, 1.0};
    const std::vector<double> u{-2.0, -0.3, 0.0, 0.1, 0.1, 1.7};
    auto c = PolyaTreeCounts::from_residuals(u, s);
    CHECK(c.consistent());
    CHECK(c.total() == 6);
    CHECK(c.count(1, 0) == 2);
    c.remove(pt::bin_index(0.1, s));
    c.add(pt::bin_index(-3.0, s));
    CHECK(c.consistent());
    CHECK(c.count(1, 0) == 3);
    auto d = PolyaTreeCounts::from_leaf_counts(4, c.leaf_counts());
    CHECK(d == c);
    PolyaTreeCounts empty(4);
    CHECK_THROWS_AS(empty.remove(3), std::logic_error);
  }

  TEST_CASE("empty predictive is the centring normal") {
    PolyaTreeSpec s{6, 1.0, 2.0};
    PolyaTreeCounts c(6);
    pt::Predictive p(c, s);
    CHECK(p.tail(0.0) == doctest::Approx(0.5).epsilon(1e-14));
    for (double x : {-3.0, -0.2, 0.0, 0.4, 2.5}) {
      CHECK(p.density(x) == doctest::Approx(normal::density(x, 0, 2.0)).epsilon(1e-12));
      CHECK(p.tail(x) == doctest::Approx(normal::upper_tail(x / std::sqrt(2.0))).epsilon(1e-12));
    }
    CHECK(std::abs(integrate(p, s) - 1.0) < 1e-6);
  }

  TEST_CASE("predictive integrates to one for random counts") {
    Rng rng(3);
    for (int rep = 0; rep < 100; ++rep) {
      const int depth = 1 + static_cast<int>(rng.index(6));
      PolyaTreeSpec s{depth, 0.2 + 3 * rng.uniform(), 0.3 + 2 * rng.uniform()};
      std::vector<int> leaves(s.bins());
      for (int& v : leaves) v = static_cast<int>(rng.index(4) * rng.index(3));
      const auto c = PolyaTreeCounts::from_leaf_counts(depth, leaves);
      pt::Predictive p(c, s);
      CHECK(std::abs(integrate(p, s) - 1.0) < 1e-6);
      double mass = 0.0;
      for (std::size_t k = 0; k < s.bins(); ++k) mass += p.bin_probability(k);
      CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("tail is exact and monotone") {
    PolyaTreeSpec s{5, 1.0, 1.0};
    const std::vector<double> u{-1.1, -0.4, 0.2, 0.25, 0.3, 0.9, 1.4, 2.2};
    const auto c = PolyaTreeCounts::from_residuals(u, s);
    pt::Predictive p(c, s);
    using boost::math::quadrature::gauss_kronrod;
    double prev = 1.0;
    for (double t = -4.0; t <= 4.0; t += 0.37) {
      const double tail = p.tail(t);
      CHECK(tail <= prev + 1e-15);
      prev = tail;
      // Quadrature oracle above t, split at the bin edges.
      double q = 0.0;
      for (std::size_t k = pt::bin_index(t, s); k < s.bins(); ++k) {
        const double lo = std::max(t, pt::bin_lower(k, s));
        q += gauss_kronrod<double, 61>::integrate([&](double x) { return p.density(x); }, lo,
                                                  pt::bin_upper(k, s), 15, 1e-12);
      }
      CHECK(std::abs(q - tail) < 1e-8);
    }
    CHECK(p.tail(-INFINITY) == 1.0);
    CHECK(p.tail(INFINITY) == 0.0);
  }

  TEST_CASE("root split stays at one half when mass moves right") {
    PolyaTreeSpec s{3, 1.0, 1.0};
    std::vector<double> u(20, normal::quantile(0.9));
    const auto c = PolyaTreeCounts::from_residuals(u, s);
    CHECK(c.count(2, 3) == 20);
    pt::Predictive p(c, s);
    CHECK(p.tail(0.0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(p.tail(normal::quantile(0.75)) > 0.25);
  }

  TEST_CASE("truncated sampling is strictly above and follows the predictive") {
    PolyaTreeSpec s{6, 1.0, 1.5};
    Rng rng(11);
    std::vector<double> u(40);
    for (double& x : u) x = rng.normal() * 1.2;
    const auto c = PolyaTreeCounts::from_residuals(u, s);
    pt::Predictive p(c, s);
    for (double lower : {-5.0, -0.3, 0.0, 0.77, 2.9, 6.5}) {
      const double probe = lower + 0.4;
      const double expect = p.tail(probe) / p.tail(lower);
      const int draws = 20000;
      int above = 0;
      for (int i = 0; i < draws; ++i) {
        const double x = p.sample_above(lower, rng);
        REQUIRE(x > lower);
        above += x > probe;
      }
      CHECK(std::abs(above / double(draws) - expect) <
            4 * std::sqrt(expect * (1 - expect) / draws) + 1e-3);
    }
    CHECK_THROWS_AS(p.sample_above(INFINITY, rng), std::invalid_argument);
  }

  TEST_CASE("spec validation") {
    CHECK_THROWS_AS((PolyaTreeSpec{0, 1, 1}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((PolyaTreeSpec{3, 0, 1}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((PolyaTreeSpec{3, 1, -1}.validate()), std::invalid_argument);
    CHECK_NOTHROW((PolyaTreeSpec{14, 1, 1}.validate()));
  }
}
