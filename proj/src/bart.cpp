#include "bapofi/bart.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>

#include "bapofi/normal.hpp"

namespace bapofi::bart {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------- Design --

Design::Design(std::span<const int> arm, std::span<const double> x, std::size_t p)
    : n_(arm.size()) {
  if (x.size() != n_ * p) throw std::invalid_argument("design: x has wrong size");
  const std::size_t vars = p + 1;
  values_.resize(vars * n_);
  ranks_.resize(vars * n_);
  cuts_.resize(vars);
  for (std::size_t i = 0; i < n_; ++i) {
    values_[i] = static_cast<double>(arm[i]);
    for (std::size_t j = 0; j < p; ++j) values_[(j + 1) * n_ + i] = x[i * p + j];
  }
  for (std::size_t v = 0; v < vars; ++v) {
    std::set<double> distinct(values_.begin() + static_cast<std::ptrdiff_t>(v * n_),
                              values_.begin() + static_cast<std::ptrdiff_t>((v + 1) * n_));
    std::vector<double> grid(distinct.begin(), distinct.end());
    if (!grid.empty()) grid.erase(grid.begin());
    if (grid.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::invalid_argument("design: too many distinct values for one variable");
    }
    for (std::size_t i = 0; i < n_; ++i) {
      const double xv = values_[v * n_ + i];
      ranks_[v * n_ + i] = static_cast<std::uint16_t>(
          std::upper_bound(grid.begin(), grid.end(), xv) - grid.begin());
    }
    cuts_[v] = std::move(grid);
  }
}

Design::Design(const TrialDataset& d) : Design(d.arm(), d.x(), d.p()) {}

// ------------------------------------------------------------------ Tree --

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.is_leaf(); }));
}

int Tree::depth(int id) const {
  int d = 0;
  while (node(id).parent >= 0) {
    id = node(id).parent;
    ++d;
  }
  return d;
}

void Tree::grow(int id, int var, int cut, double cut_value) {
  const double value = node(id).value;
  const int l = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{.parent = id, .value = value});
  nodes_.push_back(Node{.parent = id, .value = value});
  Node& n = node(id);
  n.var = var;
  n.cut = cut;
  n.cut_value = cut_value;
  n.left = l;
  n.right = l + 1;
}

void Tree::prune(int id) {
  Node& n = node(id);
  const int a = std::max(n.left, n.right);
  const int b = std::min(n.left, n.right);
  n.value = 0.5 * (node(a).value + node(b).value);
  n.var = -1;
  n.left = n.right = -1;
  nodes_.erase(nodes_.begin() + a);
  nodes_.erase(nodes_.begin() + b);
  auto fix = [&](int& ref) {
    if (ref > a) --ref;
    if (ref > b) --ref;
  };
  for (Node& m : nodes_) {
    fix(m.left);
    fix(m.right);
    fix(m.parent);
  }
}

int Tree::leaf_for(const Design& d, std::size_t i) const {
  int id = 0;
  while (!nodes_[static_cast<std::size_t>(id)].is_leaf()) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    id = d.rank(i, static_cast<std::size_t>(n.var)) <= n.cut ? n.left : n.right;
  }
  return id;
}

int Tree::leaf_for(int arm, std::span<const double> x) const {
  int id = 0;
  while (!nodes_[static_cast<std::size_t>(id)].is_leaf()) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const double v = n.var == 0 ? static_cast<double>(arm) : x[static_cast<std::size_t>(n.var - 1)];
    id = v < n.cut_value ? n.left : n.right;
  }
  return id;
}

double ForestHyper::split_probability(int depth) const {
  return split_base * std::pow(1.0 + depth, -split_power);
}

// ------------------------------------------------------- tree bookkeeping --

namespace {

// Cut-index interval [lo, hi] per variable available at a node.
struct Region {
  std::vector<int> lo, hi;
  explicit Region(const Design& d) : lo(d.vars(), 0), hi(d.vars()) {
    for (std::size_t v = 0; v < d.vars(); ++v) hi[v] = static_cast<int>(d.cuts(v).size()) - 1;
  }
  int cuts(int v) const { return std::max(0, hi[v] - lo[v] + 1); }
  int available_vars() const {
    int c = 0;
    for (std::size_t v = 0; v < lo.size(); ++v) c += lo[v] <= hi[v];
    return c;
  }
};

Region region_of(const Tree& t, int id, const Design& d) {
  Region r(d);
  int child = id;
  int parent = t.node(id).parent;
  while (parent >= 0) {
    const Node& p = t.node(parent);
    if (p.left == child) r.hi[p.var] = std::min(r.hi[p.var], p.cut - 1);
    else r.lo[p.var] = std::max(r.lo[p.var], p.cut + 1);
    child = parent;
    parent = p.parent;
  }
  return r;
}

struct TreeSummary {
  std::vector<int> growable;   // leaves with at least one available variable
  std::vector<int> prunable;   // internal nodes with two leaf children
  std::vector<int> internals;
  std::vector<std::pair<int, int>> swap_pairs;  // (parent, internal child)
  double log_prior = 0.0;
};

void summarize(const Tree& t, int id, const Region& r, int depth, const Design& d,
               const ForestHyper& h, TreeSummary& s) {
  const Node& n = t.node(id);
  const int nvars = r.available_vars();
  if (n.is_leaf()) {
    if (nvars > 0) {
      s.growable.push_back(id);
      s.log_prior += std::log1p(-h.split_probability(depth));
    }
    return;
  }
  s.internals.push_back(id);
  if (t.node(n.left).is_leaf() && t.node(n.right).is_leaf()) s.prunable.push_back(id);
  if (!t.node(n.left).is_leaf()) s.swap_pairs.emplace_back(id, n.left);
  if (!t.node(n.right).is_leaf()) s.swap_pairs.emplace_back(id, n.right);
  if (nvars == 0 || n.cut < r.lo[n.var] || n.cut > r.hi[n.var]) {
    s.log_prior = kNegInf;
  } else {
    s.log_prior += std::log(h.split_probability(depth)) - std::log(static_cast<double>(nvars)) -
                   std::log(static_cast<double>(r.cuts(n.var)));
  }
  Region left = r, right = r;
  left.hi[n.var] = std::min(left.hi[n.var], n.cut - 1);
  right.lo[n.var] = std::max(right.lo[n.var], n.cut + 1);
  summarize(t, n.left, left, depth + 1, d, h, s);
  summarize(t, n.right, right, depth + 1, d, h, s);
}

TreeSummary summarize(const Tree& t, const Design& d, const ForestHyper& h) {
  TreeSummary s;
  summarize(t, 0, Region(d), 0, d, h, s);
  return s;
}

enum Move { kGrow = 0, kPrune = 1, kChange = 2, kSwap = 3 };

double move_probability(const TreeSummary& s, int move, const ForestHyper& h) {
  const std::array<bool, 4> feasible{!s.growable.empty(), !s.prunable.empty(),
                                     !s.internals.empty(), !s.swap_pairs.empty()};
  double total = 0.0;
  for (int m = 0; m < 4; ++m) total += feasible[m] ? h.move_weights[m] : 0.0;
  if (!feasible[move] || total <= 0.0) return 0.0;
  return h.move_weights[move] / total;
}

int choose_move(const TreeSummary& s, const ForestHyper& h, Rng& rng) {
  double u = rng.uniform();
  int last = -1;
  for (int m = 0; m < 4; ++m) {
    const double p = move_probability(s, m, h);
    if (p <= 0.0) continue;
    last = m;
    if (u < p) return m;
    u -= p;
  }
  return last;
}

// Picks a variable uniformly among those with available cuts, then a cut.
std::pair<int, int> draw_rule(const Region& r, Rng& rng) {
  std::vector<int> vars;
  for (std::size_t v = 0; v < r.lo.size(); ++v) {
    if (r.lo[v] <= r.hi[v]) vars.push_back(static_cast<int>(v));
  }
  const int v = vars[rng.index(vars.size())];
  const int c = r.lo[v] + static_cast<int>(rng.index(static_cast<std::size_t>(r.cuts(v))));
  return {v, c};
}

struct LeafStats {
  std::vector<int> count;
  std::vector<double> sum;
};

// Routes every row; returns false when some leaf is empty.
bool route(const Tree& t, const Design& d, std::span<const double> r, std::vector<int>& leaf_of,
           LeafStats& st) {
  st.count.assign(t.size(), 0);
  st.sum.assign(t.size(), 0.0);
  for (std::size_t i = 0; i < d.n(); ++i) {
    const int leaf = t.leaf_for(d, i);
    leaf_of[i] = leaf;
    ++st.count[static_cast<std::size_t>(leaf)];
    st.sum[static_cast<std::size_t>(leaf)] += r[i];
  }
  for (std::size_t id = 0; id < t.size(); ++id) {
    if (t.nodes()[id].is_leaf() && st.count[id] == 0) return false;
  }
  return true;
}

// Log marginal likelihood of the partial residuals with leaf values
// integrated out, dropping terms common to all trees.
double integrated_loglik(const Tree& t, const LeafStats& st, double sigma2, double tau2) {
  double ll = 0.0;
  for (std::size_t id = 0; id < t.size(); ++id) {
    if (!t.nodes()[id].is_leaf()) continue;
    const double n = st.count[id];
    const double s = st.sum[id];
    const double denom = sigma2 + n * tau2;
    ll += -0.5 * std::log(denom / sigma2) + 0.5 * tau2 * s * s / (sigma2 * denom);
  }
  return ll;
}

void apply_swap(Tree& t, int parent, int child) {
  Node& p = t.node(parent);
  Node& c = t.node(child);
  const int sibling = p.left == child ? p.right : p.left;
  const bool both = !t.node(sibling).is_leaf() && t.node(sibling).var == c.var &&
                    t.node(sibling).cut == c.cut;
  std::swap(p.var, c.var);
  std::swap(p.cut, c.cut);
  std::swap(p.cut_value, c.cut_value);
  if (both) {
    Node& s = t.node(sibling);
    s.var = c.var;
    s.cut = c.cut;
    s.cut_value = c.cut_value;
  }
}

}  // namespace

double log_tree_prior(const Tree& tree, const Design& design, const ForestHyper& hyper) {
  return summarize(tree, design, hyper).log_prior;
}

// ---------------------------------------------------------------- forest --

ForestState make_forest(const ForestHyper& hyper, const Design& design, double offset,
                        double leaf_scale, double initial_mean) {
  if (hyper.trees < 1) throw std::invalid_argument("forest needs at least one tree");
  if (!(leaf_scale > 0.0)) throw std::invalid_argument("leaf scale must be positive");
  ForestState s;
  s.hyper = hyper;
  s.offset = offset;
  s.leaf_scale = leaf_scale;
  const double leaf = (initial_mean - offset) / hyper.trees;
  s.trees.assign(static_cast<std::size_t>(hyper.trees), Tree(leaf));
  s.fit.assign(design.n(), offset + leaf * hyper.trees);
  return s;
}

ForestState make_regression_forest(const ForestHyper& hyper, const Design& design,
                                   std::span<const double> y) {
  if (y.empty()) throw std::invalid_argument("empty response");
  const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
  double half_range = 0.5 * (*hi - *lo);
  if (!(half_range > 0.0)) half_range = 1.0;
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  const double scale = half_range / (hyper.k * std::sqrt(static_cast<double>(hyper.trees)));
  return make_forest(hyper, design, 0.5 * (*lo + *hi), scale, mean);
}

void gibbs_sweep(ForestState& state, std::span<const double> y, const Design& design,
                 double sigma2, Rng& rng, SweepStats* stats) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("gibbs_sweep: sigma2 must be positive");
  const std::size_t n = design.n();
  if (y.size() != n || state.fit.size() != n) throw std::invalid_argument("gibbs_sweep: size mismatch");
  const ForestHyper& h = state.hyper;
  const double tau2 = state.leaf_scale * state.leaf_scale;

  std::vector<double> resid(n);
  std::vector<int> leaf_of(n), leaf_of_new(n);
  LeafStats st, st_new;

  for (Tree& tree : state.trees) {
    for (std::size_t i = 0; i < n; ++i) {
      const int leaf = tree.leaf_for(design, i);
      leaf_of[i] = leaf;
      resid[i] = y[i] - state.fit[i] + tree.node(leaf).value;
    }
    st.count.assign(tree.size(), 0);
    st.sum.assign(tree.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      ++st.count[static_cast<std::size_t>(leaf_of[i])];
      st.sum[static_cast<std::size_t>(leaf_of[i])] += resid[i];
    }

    const TreeSummary cur = summarize(tree, design, h);
    const int move = choose_move(cur, h, rng);
    if (move >= 0) {
      Tree prop = tree;
      double log_q_fwd = std::log(move_probability(cur, move, h));
      int touched = -1;
      int old_var = -1;
      bool valid = true;
      switch (move) {
        case kGrow: {
          const int leaf = cur.growable[rng.index(cur.growable.size())];
          const Region r = region_of(tree, leaf, design);
          const auto [v, c] = draw_rule(r, rng);
          prop.grow(leaf, v, c, design.cuts(static_cast<std::size_t>(v))[static_cast<std::size_t>(c)]);
          log_q_fwd -= std::log(static_cast<double>(cur.growable.size())) +
                       std::log(static_cast<double>(r.available_vars())) +
                       std::log(static_cast<double>(r.cuts(v)));
          touched = leaf;
          break;
        }
        case kPrune: {
          touched = cur.prunable[rng.index(cur.prunable.size())];
          prop.prune(touched);
          log_q_fwd -= std::log(static_cast<double>(cur.prunable.size()));
          break;
        }
        case kChange: {
          touched = cur.internals[rng.index(cur.internals.size())];
          const Region r = region_of(tree, touched, design);
          old_var = tree.node(touched).var;
          if (r.available_vars() == 0) {
            valid = false;
            break;
          }
          const auto [v, c] = draw_rule(r, rng);
          Node& nd = prop.node(touched);
          nd.var = v;
          nd.cut = c;
          nd.cut_value = design.cuts(static_cast<std::size_t>(v))[static_cast<std::size_t>(c)];
          log_q_fwd -= std::log(static_cast<double>(cur.internals.size())) +
                       std::log(static_cast<double>(r.available_vars())) +
                       std::log(static_cast<double>(r.cuts(v)));
          break;
        }
        case kSwap: {
          const auto [parent, child] = cur.swap_pairs[rng.index(cur.swap_pairs.size())];
          apply_swap(prop, parent, child);
          log_q_fwd -= std::log(static_cast<double>(cur.swap_pairs.size()));
          break;
        }
        default: break;
      }
      if (stats) ++stats->proposed[static_cast<std::size_t>(move)];

      if (valid && route(prop, design, resid, leaf_of_new, st_new)) {
        const TreeSummary next = summarize(prop, design, h);
        if (std::isfinite(next.log_prior)) {
          double log_q_rev = std::log(move_probability(next, move == kGrow    ? kPrune
                                                             : move == kPrune ? kGrow
                                                                              : move, h));
          switch (move) {
            case kGrow:
              log_q_rev -= std::log(static_cast<double>(next.prunable.size()));
              break;
            case kPrune: {
              const Region r = region_of(prop, touched, design);
              const int v = tree.node(touched).var;
              log_q_rev -= std::log(static_cast<double>(next.growable.size())) +
                           std::log(static_cast<double>(r.available_vars())) +
                           std::log(static_cast<double>(r.cuts(v)));
              break;
            }
            case kChange: {
              const Region r = region_of(prop, touched, design);
              log_q_rev -= std::log(static_cast<double>(next.internals.size())) +
                           std::log(static_cast<double>(r.available_vars())) +
                           std::log(static_cast<double>(r.cuts(old_var)));
              break;
            }
            case kSwap:
              log_q_rev -= std::log(static_cast<double>(next.swap_pairs.size()));
              break;
            default: break;
          }
          const double log_ratio = integrated_loglik(prop, st_new, sigma2, tau2) -
                                   integrated_loglik(tree, st, sigma2, tau2) + next.log_prior -
                                   cur.log_prior + log_q_rev - log_q_fwd;
          if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio) {
            tree = std::move(prop);
            std::swap(leaf_of, leaf_of_new);
            std::swap(st, st_new);
            if (stats) ++stats->accepted[static_cast<std::size_t>(move)];
          }
        }
      }
    }

    // Conjugate leaf draws given the (possibly new) topology.
    for (std::size_t id = 0; id < tree.size(); ++id) {
      Node& nd = tree.nodes()[id];
      if (!nd.is_leaf()) continue;
      const double prec = st.count[id] / sigma2 + 1.0 / tau2;
      const double var = 1.0 / prec;
      nd.value = rng.normal(var * st.sum[id] / sigma2, std::sqrt(var));
    }
    for (std::size_t i = 0; i < n; ++i) {
      state.fit[i] = y[i] - resid[i] + tree.node(leaf_of[i]).value;
    }
  }
}

double predict(const ForestState& state, int arm, std::span<const double> x) {
  double s = state.offset;
  for (const Tree& t : state.trees) s += t.node(t.leaf_for(arm, x)).value;
  return s;
}

std::vector<double> predict_rows(const ForestState& state, const Design& design, int arm) {
  std::vector<double> out(design.n(), state.offset);
  for (const Tree& t : state.trees) {
    for (std::size_t i = 0; i < design.n(); ++i) {
      int id = 0;
      while (!t.node(id).is_leaf()) {
        const Node& nd = t.node(id);
        const bool left = nd.var == 0 ? static_cast<double>(arm) < nd.cut_value
                                      : design.rank(i, static_cast<std::size_t>(nd.var)) <= nd.cut;
        id = left ? nd.left : nd.right;
      }
      out[i] += t.node(id).value;
    }
  }
  return out;
}

std::vector<double> predict_rows(const ForestState& state, const Design& design) {
  std::vector<double> out(design.n(), state.offset);
  for (const Tree& t : state.trees) {
    for (std::size_t i = 0; i < design.n(); ++i) out[i] += t.node(t.leaf_for(design, i)).value;
  }
  return out;
}

double gaussian_loglik(std::span<const double> y, std::span<const double> means, double sigma2) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("gaussian_loglik: sigma2 must be positive");
  if (y.size() != means.size()) throw std::invalid_argument("gaussian_loglik: length mismatch");
  double ss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - means[i];
    ss += d * d;
  }
  const double n = static_cast<double>(y.size());
  return -n * normal::kLogSqrt2Pi - 0.5 * n * std::log(sigma2) - 0.5 * ss / sigma2;
}

// -------------------------------------------------------- serialization --

void write_forest(std::ostream& out, const ForestState& state) {
  const auto& h = state.hyper;
  out << std::setprecision(17);
  out << "forest " << h.trees << ' ' << h.split_base << ' ' << h.split_power << ' ' << h.k << ' '
      << h.move_weights[0] << ' ' << h.move_weights[1] << ' ' << h.move_weights[2] << ' '
      << h.move_weights[3] << ' ' << state.offset << ' ' << state.leaf_scale << '\n';
  for (const Tree& t : state.trees) {
    out << "tree " << t.size() << '\n';
    for (const Node& nd : t.nodes()) {
      out << nd.var << ' ' << nd.cut << ' ' << nd.cut_value << ' ' << nd.left << ' ' << nd.right
          << ' ' << nd.parent << ' ' << nd.value << '\n';
    }
  }
}

ForestState read_forest(std::istream& in) {
  auto expect = [&](const char* word) {
    std::string w;
    if (!(in >> w) || w != word) throw std::runtime_error(std::string("forest: expected '") + word + "'");
  };
  ForestState s;
  auto& h = s.hyper;
  expect("forest");
  if (!(in >> h.trees >> h.split_base >> h.split_power >> h.k >> h.move_weights[0] >>
        h.move_weights[1] >> h.move_weights[2] >> h.move_weights[3] >> s.offset >> s.leaf_scale)) {
    throw std::runtime_error("forest: malformed header");
  }
  for (int t = 0; t < h.trees; ++t) {
    expect("tree");
    std::size_t size = 0;
    if (!(in >> size) || size == 0) throw std::runtime_error("forest: malformed tree header");
    std::vector<Node> nodes(size);
    for (Node& nd : nodes) {
      if (!(in >> nd.var >> nd.cut >> nd.cut_value >> nd.left >> nd.right >> nd.parent >> nd.value)) {
        throw std::runtime_error("forest: malformed node");
      }
    }
    s.trees.emplace_back(std::move(nodes));
  }
  return s;
}

}  // namespace bapofi::bart
