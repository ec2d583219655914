#include "bapofi/discretize.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace bapofi {

int CovariateBin::category(double x) const {
  if (kind == Kind::Continuous) return x < q33 ? 0 : (x < q67 ? 1 : 2);
  auto it = merge.find(x);
  if (it == merge.end()) {
    throw std::out_of_range("value " + std::to_string(x) + " not in merge map of '" + name + "'");
  }
  return it->second;
}

std::vector<std::uint8_t> CovariateBins::assign(const TrialDataset& d) const {
  if (d.p() != p()) throw std::invalid_argument("bins/dataset covariate count mismatch");
  std::vector<std::uint8_t> codes(d.n() * p());
  for (std::size_t i = 0; i < d.n(); ++i) {
    for (std::size_t j = 0; j < p(); ++j) {
      codes[i * p() + j] = static_cast<std::uint8_t>(covariates[j].category(d.x(i, j)));
    }
  }
  return codes;
}

double empirical_quantile(std::span<const double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  std::vector<double> v(values.begin(), values.end());
  const auto n = v.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rank - 1), v.end());
  return v[rank - 1];
}

namespace {

std::string format_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

CovariateBin categorical_bin(const Covariate& cov, const std::set<double>& values,
                             const BinOverride* over) {
  CovariateBin bin;
  bin.name = cov.name;
  bin.kind = CovariateBin::Kind::Categorical;
  auto label_of = [&](double v) {
    if (cov.is_coded()) return cov.levels.at(static_cast<std::size_t>(v));
    return format_value(v);
  };
  if (over && !over->merge.empty()) {
    for (double v : values) {
      if (!over->merge.contains(v)) {
        throw std::invalid_argument("merge map of '" + cov.name + "' does not cover value " +
                                    label_of(v));
      }
    }
    for (const auto& [value, label] : over->merge) {
      auto it = std::find(bin.category_labels.begin(), bin.category_labels.end(), label);
      if (it == bin.category_labels.end()) {
        bin.category_labels.push_back(label);
        it = bin.category_labels.end() - 1;
      }
      bin.merge[value] = static_cast<int>(it - bin.category_labels.begin());
    }
  } else {
    if (values.size() > 3) {
      throw std::invalid_argument("categorical covariate '" + cov.name + "' has " +
                                  std::to_string(values.size()) +
                                  " levels; supply a merge map to at most three categories");
    }
    int c = 0;
    for (double v : values) {
      bin.merge[v] = c++;
      bin.category_labels.push_back(label_of(v));
    }
  }
  const auto d = bin.category_labels.size();
  if (d < 2 || d > 3) {
    throw std::invalid_argument("covariate '" + cov.name + "' must have 2 or 3 categories");
  }
  return bin;
}

}  // namespace

CovariateBins fit_bins(const TrialDataset& d, const BinPolicy& policy) {
  CovariateBins bins;
  for (std::size_t j = 0; j < d.p(); ++j) {
    const auto& cov = d.covariates()[j];
    const auto column = d.column(j);
    const std::set<double> distinct(column.begin(), column.end());
    if (distinct.size() < 2) {
      throw std::invalid_argument("covariate '" + cov.name + "' is constant");
    }
    auto it = policy.find(cov.name);
    const BinOverride* over = it == policy.end() ? nullptr : &it->second;
    const bool categorical =
        cov.is_coded() || (over && over->categorical) || distinct.size() <= 3;
    if (categorical) {
      bins.covariates.push_back(categorical_bin(cov, distinct, over));
      continue;
    }
    CovariateBin bin;
    bin.name = cov.name;
    bin.q33 = empirical_quantile(column, kLowerTercile);
    bin.q67 = empirical_quantile(column, kUpperTercile);
    bins.covariates.push_back(std::move(bin));
  }
  return bins;
}

void write_bins(std::ostream& out, const CovariateBins& bins) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& b : bins.covariates) {
    nlohmann::json e;
    e["name"] = b.name;
    if (b.kind == CovariateBin::Kind::Continuous) {
      e["kind"] = "continuous";
      e["q33"] = b.q33;
      e["q67"] = b.q67;
    } else {
      e["kind"] = "categorical";
      e["categories"] = b.category_labels;
      nlohmann::json m = nlohmann::json::array();
      for (const auto& [v, c] : b.merge) m.push_back({v, c});
      e["merge"] = m;
    }
    j.push_back(e);
  }
  out << j.dump(2) << '\n';
}

CovariateBins read_bins(std::istream& in) {
  const auto j = nlohmann::json::parse(in);
  CovariateBins bins;
  for (const auto& e : j) {
    CovariateBin b;
    b.name = e.at("name").get<std::string>();
    if (e.at("kind") == "continuous") {
      b.q33 = e.at("q33").get<double>();
      b.q67 = e.at("q67").get<double>();
      if (b.q33 > b.q67) throw std::invalid_argument("bins for '" + b.name + "' have q33 > q67");
    } else {
      b.kind = CovariateBin::Kind::Categorical;
      b.category_labels = e.at("categories").get<std::vector<std::string>>();
      for (const auto& m : e.at("merge")) b.merge[m.at(0).get<double>()] = m.at(1).get<int>();
      if (b.categories() < 2 || b.categories() > 3) {
        throw std::invalid_argument("bins for '" + b.name + "' need 2 or 3 categories");
      }
    }
    bins.covariates.push_back(std::move(b));
  }
  return bins;
}

std::span<const std::uint8_t> admissible_subsets(int categories) {
  static constexpr std::array<std::uint8_t, 6> kThree{0b001, 0b010, 0b100, 0b011, 0b110, 0b101};
  static constexpr std::array<std::uint8_t, 2> kTwo{0b01, 0b10};
  if (categories == 3) return kThree;
  if (categories == 2) return kTwo;
  throw std::invalid_argument("covariates must have 2 or 3 categories");
}

namespace {

std::string mask_string(std::uint8_t w) {
  std::string s;
  for (int m = 0; m < 3; ++m) s += (w >> m) & 1 ? '1' : '0';
  return s;
}

std::uint8_t parse_mask(const std::string& s) {
  std::uint8_t w = 0;
  for (std::size_t m = 0; m < s.size(); ++m) {
    if (s[m] == '1') w |= static_cast<std::uint8_t>(1u << m);
    else if (s[m] != '0') throw std::invalid_argument("bad subset mask '" + s + "'");
  }
  return w;
}

}  // namespace

std::string SubgroupAction::encode() const {
  switch (kind) {
    case Kind::Null: return "null";
    case Kind::All: return "all";
    case Kind::OneCov: return "1:" + std::to_string(j) + ":" + mask_string(wj);
    case Kind::TwoCov:
      return "2:" + std::to_string(j) + ":" + std::to_string(k) + ":" + mask_string(wj) + ":" +
             mask_string(wk) + (shape == Shape::Rectangular ? ":R" : ":L");
  }
  return {};
}

SubgroupAction SubgroupAction::decode(const std::string& s) {
  if (s == "null") return null();
  if (s == "all") return all();
  std::vector<std::string> parts;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
  if (parts.size() == 3 && parts[0] == "1") return one(std::stoi(parts[1]), parse_mask(parts[2]));
  if (parts.size() == 6 && parts[0] == "2") {
    const auto shape = parts[5] == "R" ? Shape::Rectangular : Shape::LShaped;
    if (parts[5] != "R" && parts[5] != "L") throw std::invalid_argument("bad shape in '" + s + "'");
    return two(std::stoi(parts[1]), std::stoi(parts[2]), parse_mask(parts[3]),
               parse_mask(parts[4]), shape);
  }
  throw std::invalid_argument("cannot decode action '" + s + "'");
}

bool member(std::span<const std::uint8_t> codes, const SubgroupAction& a) {
  using K = SubgroupAction::Kind;
  switch (a.kind) {
    case K::Null: throw std::invalid_argument("membership is undefined for the null report");
    case K::All: return true;
    case K::OneCov: return (a.wj >> codes[a.j]) & 1;
    case K::TwoCov: {
      const bool in_j = (a.wj >> codes[a.j]) & 1;
      const bool in_k = (a.wk >> codes[a.k]) & 1;
      return a.shape == SubgroupAction::Shape::Rectangular ? (in_j && in_k) : (in_j || in_k);
    }
  }
  return false;
}

bool membership(std::span<const double> x, const SubgroupAction& a, const CovariateBins& bins) {
  std::vector<std::uint8_t> codes(bins.p(), 0);
  for (int j : {a.j, a.k}) {
    if (j >= 0) codes[j] = static_cast<std::uint8_t>(bins.covariates[j].category(x[j]));
  }
  return member(codes, a);
}

std::vector<SubgroupAction> enumerate_actions(const CovariateBins& bins) {
  std::vector<SubgroupAction> out{SubgroupAction::null(), SubgroupAction::all()};
  const int p = static_cast<int>(bins.p());
  for (int j = 0; j < p; ++j) {
    for (auto w : admissible_subsets(bins.covariates[j].categories())) {
      out.push_back(SubgroupAction::one(j, w));
    }
  }
  for (int j = 0; j < p; ++j) {
    for (int k = j + 1; k < p; ++k) {
      for (auto wj : admissible_subsets(bins.covariates[j].categories())) {
        for (auto wk : admissible_subsets(bins.covariates[k].categories())) {
          out.push_back(SubgroupAction::two(j, k, wj, wk, SubgroupAction::Shape::Rectangular));
          out.push_back(SubgroupAction::two(j, k, wj, wk, SubgroupAction::Shape::LShaped));
        }
      }
    }
  }
  return out;
}

namespace {

std::string describe_one(const CovariateBin& b, std::uint8_t w) {
  if (b.kind == CovariateBin::Kind::Continuous) {
    switch (w) {
      case 0b001: return b.name + " < Q33";
      case 0b010: return "Q33 <= " + b.name + " < Q67";
      case 0b100: return b.name + " >= Q67";
      case 0b011: return b.name + " < Q67";
      case 0b110: return b.name + " >= Q33";
      case 0b101: return b.name + " < Q33 or " + b.name + " >= Q67";
      default: break;
    }
  }
  std::string levels;
  for (int m = 0; m < b.categories(); ++m) {
    if ((w >> m) & 1) levels += (levels.empty() ? "" : ", ") + b.category_labels[m];
  }
  return b.name + " (" + levels + ")";
}

}  // namespace

std::string describe(const SubgroupAction& a, const CovariateBins& bins) {
  using K = SubgroupAction::Kind;
  switch (a.kind) {
    case K::Null: return "null (no differential effect)";
    case K::All: return "all patients";
    case K::OneCov: return describe_one(bins.covariates[a.j], a.wj);
    case K::TwoCov:
      return "[" + describe_one(bins.covariates[a.j], a.wj) +
             (a.shape == SubgroupAction::Shape::Rectangular ? "] and [" : "] or [") +
             describe_one(bins.covariates[a.k], a.wk) + "]";
  }
  return {};
}

}  // namespace bapofi
