#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "bapofi/dataset.hpp"
#include "bapofi/rng.hpp"

namespace bapofi::bart {

// Column-major design over (z, x_1..x_p). Variable 0 is the arm indicator, so
// treatment-by-covariate interactions arise from ordinary tree paths.
//
// Each variable carries a cut grid: its sorted distinct observed values
// without the minimum. A rule (v, c) sends x left iff x_v < cuts(v)[c]. The
// rank of an observation is the number of grid values <= x, so the rule is
// rank <= c, and the cut indices available at a node form an interval that
// depends only on the ancestors' rules.
class Design {
 public:
  Design() = default;
  // `x` row-major n x p.
  Design(std::span<const int> arm, std::span<const double> x, std::size_t p);
  explicit Design(const TrialDataset& d);

  std::size_t n() const { return n_; }
  std::size_t vars() const { return cuts_.size(); }
  double value(std::size_t i, std::size_t v) const { return values_[v * n_ + i]; }
  std::uint16_t rank(std::size_t i, std::size_t v) const { return ranks_[v * n_ + i]; }
  const std::vector<double>& cuts(std::size_t v) const { return cuts_[v]; }
  int arm(std::size_t i) const { return static_cast<int>(value(i, 0)); }

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
  std::vector<std::uint16_t> ranks_;
  std::vector<std::vector<double>> cuts_;
};

struct Node {
  int var = -1;  // -1 for a leaf
  int cut = 0;   // index into the variable's cut grid
  double cut_value = 0.0;
  int left = -1;
  int right = -1;
  int parent = -1;
  double value = 0.0;  // leaf value
  bool is_leaf() const { return var < 0; }
  bool operator==(const Node&) const = default;
};

class Tree {
 public:
  Tree() { nodes_.push_back(Node{}); }
  explicit Tree(double root_value) { nodes_.push_back(Node{.value = root_value}); }
  explicit Tree(std::vector<Node> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<Node>& nodes() { return nodes_; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t leaf_count() const;
  int depth(int id) const;

  // Splits leaf `id` with rule (var, cut); children start at the leaf's value.
  void grow(int id, int var, int cut, double cut_value);
  // Collapses internal node `id` whose children are both leaves.
  void prune(int id);

  // Leaf reached by design row i (rank routing).
  int leaf_for(const Design& d, std::size_t i) const;
  // Leaf reached by an arbitrary point over (z, x).
  int leaf_for(int arm, std::span<const double> x) const;

  bool operator==(const Tree&) const = default;

 private:
  std::vector<Node> nodes_;
};

struct ForestHyper {
  int trees = 50;
  double split_base = 0.95;   // a_split
  double split_power = 2.0;   // b_split
  double k = 2.0;
  // Move proposal weights: grow, prune, change, swap.
  std::array<double, 4> move_weights{0.25, 0.25, 0.40, 0.10};

  double split_probability(int depth) const;
};

// Sum-of-trees state. Predictions are offset + sum of the reached leaf
// values; `leaf_scale` is the prior sd of each leaf value. `fit` caches the
// prediction at every design row.
struct ForestState {
  ForestHyper hyper;
  double offset = 0.0;
  double leaf_scale = 1.0;
  std::vector<Tree> trees;
  std::vector<double> fit;
};

// Root-only forest whose prediction is `initial_mean` everywhere.
ForestState make_forest(const ForestHyper& hyper, const Design& design, double offset,
                        double leaf_scale, double initial_mean);

// Regression calibration: responses are centred at the midrange and scaled by
// the range, so that k * sqrt(m) * leaf_scale covers half the range. The
// forest starts at the response mean.
ForestState make_regression_forest(const ForestHyper& hyper, const Design& design,
                                   std::span<const double> y);

struct SweepStats {
  std::array<std::size_t, 4> proposed{};
  std::array<std::size_t, 4> accepted{};
};

// One sweep over all trees: a grow/prune/change/swap Metropolis-Hastings
// move on each tree's topology under the Gaussian working likelihood of the
// partial residuals (leaf values integrated out), then conjugate draws of the
// tree's leaf values. Updates `state.fit`.
void gibbs_sweep(ForestState& state, std::span<const double> y, const Design& design,
                 double sigma2, Rng& rng, SweepStats* stats = nullptr);

double predict(const ForestState& state, int arm, std::span<const double> x);
// Predictions at every design row with the arm set to `arm` (0 or 1).
std::vector<double> predict_rows(const ForestState& state, const Design& design, int arm);
// Recomputes the prediction cache from the trees.
std::vector<double> predict_rows(const ForestState& state, const Design& design);

// sum_i log N(y_i; mean_i, sigma2). Throws std::invalid_argument when
// sigma2 <= 0 or lengths differ.
double gaussian_loglik(std::span<const double> y, std::span<const double> means, double sigma2);

// Log of the tree prior: split/no-split probabilities by depth and uniform
// rule choice over the variables and cuts available at each node. Returns
// -inf when a rule falls outside its node's available range.
double log_tree_prior(const Tree& tree, const Design& design, const ForestHyper& hyper);

// Node list per tree, one line per node; doubles written with round-trip
// precision. `fit` is not serialized (recompute with predict_rows).
void write_forest(std::ostream& out, const ForestState& state);
ForestState read_forest(std::istream& in);

}  // namespace bapofi::bart
