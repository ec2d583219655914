#include "bapofi/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bapofi/error.hpp"

namespace bapofi {

using json = nlohmann::ordered_json;

void RunConfig::validate() const {
  if (mode != "analyze" && mode != "simulate" && mode != "tune") throw ConfigError("unknown mode " + mode);
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  for (double t : tau_sensitivity) {
    if (!(t > 0.0)) throw ConfigError("sensitivity tau must be positive");
  }
  decision::TradeoffSpec{delta0, delta1.value_or(0.0), tau}.validate();
  if (utility.nu <= 0.0 || utility.zeta <= 0.0) throw ConfigError("nu and zeta must be positive");
  if (std::isnan(utility.u0)) throw ConfigError("u0 must be a number");
  sampler.validate();
  if (n.empty() || censor.empty()) throw ConfigError("n and censor lists must be nonempty");
  for (auto v : n) {
    if (v < 2 || v % 2 != 0) throw ConfigError("n must be even and at least 2");
  }
  for (double q : censor) {
    if (!(q >= 0.0 && q < 1.0)) throw ConfigError("censoring proportion must be in [0,1)");
  }
  if (p < 10) throw ConfigError("simulation scenarios need p >= 10");
  if (reps < 1) throw ConfigError("reps must be at least 1");
  if (mc_size < 1000) throw ConfigError("mc_size must be at least 1000");
  if (!(target_t1e > 0.0 && target_t1e <= 1.0)) throw ConfigError("target type I error must be in (0,1]");
  for (double v : nu_grid) {
    if (!(v > 0.0)) throw ConfigError("nu grid values must be positive");
  }
  for (double v : zeta_grid) {
    if (!(v > 0.0)) throw ConfigError("zeta grid values must be positive");
  }
}

double RunConfig::resolved_delta1(bool tradeoff_scenario) const {
  if (delta1) return *delta1;
  return tradeoff_scenario ? 1.5 : 0.0;
}

namespace {

json forest_json(const bart::ForestHyper& f) {
  json j;
  j["trees"] = f.trees;
  j["split_base"] = f.split_base;
  j["split_power"] = f.split_power;
  j["k"] = f.k;
  j["move_weights"] = f.move_weights;
  return j;
}

// Reads keys of `j` into the targets, rejecting unknown keys.
struct Reader {
  const json& j;
  std::string where;
  std::set<std::string> seen;

  template <class T>
  void get(const char* key, T& out) {
    seen.insert(key);
    if (!j.contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, std::optional<double>>) {
        if (j[key].is_null()) out.reset();
        else out = j[key].template get<double>();
      } else {
        out = j[key].template get<T>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  const json& object(const char* key) {
    seen.insert(key);
    static const json empty = json::object();
    if (!j.contains(key)) return empty;
    if (!j[key].is_object()) throw ConfigError(where + key + " must be an object");
    return j[key];
  }
  void finish() const {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!seen.count(it.key())) throw ConfigError("unknown config key " + where + it.key());
    }
  }
};

}  // namespace

std::string to_json(const RunConfig& c) {
  json j;
  j["mode"] = c.mode;
  j["data"] = c.data;
  j["bins"] = c.bins;
  j["out"] = c.out;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["tau"] = c.tau;
  j["tau_sensitivity"] = c.tau_sensitivity;
  j["delta0"] = c.delta0;
  j["delta1"] = c.delta1 ? json(*c.delta1) : json(nullptr);
  j["nu"] = c.utility.nu;
  j["zeta"] = c.utility.zeta;
  // Infinite u0 (never report null) is written as a string.
  if (std::isinf(c.utility.u0)) j["u0"] = c.utility.u0 < 0 ? "-inf" : "inf";
  else j["u0"] = c.utility.u0;
  json m;
  m["iterations"] = c.sampler.chain.iterations;
  m["burn_in"] = c.sampler.chain.burn_in;
  m["thin"] = c.sampler.chain.thin;
  m["sigma_shape"] = c.sampler.sigma_shape;
  m["sigma_scale"] = c.sampler.sigma_scale ? json(*c.sampler.sigma_scale) : json(nullptr);
  m["pt_depth"] = c.sampler.pt_depth;
  m["pt_c"] = c.sampler.pt_c;
  m["forest"] = forest_json(c.sampler.chain.forest);
  j["mcmc"] = m;
  j["scenario"] = c.scenario;
  j["n"] = c.n;
  j["p"] = c.p;
  j["reps"] = c.reps;
  j["censor"] = c.censor;
  j["effect_tte"] = c.effect_tte;
  j["effect_tox"] = c.effect_tox;
  j["mc_size"] = c.mc_size;
  j["target_t1e"] = c.target_t1e;
  j["nu_grid"] = c.nu_grid;
  j["zeta_grid"] = c.zeta_grid;
  return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  Reader r{j, "", {}};
  r.get("mode", c.mode);
  r.get("data", c.data);
  r.get("bins", c.bins);
  r.get("out", c.out);
  r.get("seed", c.seed);
  r.get("jobs", c.jobs);
  r.get("tau", c.tau);
  r.get("tau_sensitivity", c.tau_sensitivity);
  r.get("delta0", c.delta0);
  r.get("delta1", c.delta1);
  r.get("nu", c.utility.nu);
  r.get("zeta", c.utility.zeta);
  r.seen.insert("u0");
  if (j.contains("u0")) {
    const auto& u = j["u0"];
    if (u.is_string() && (u == "-inf" || u == "inf")) {
      c.utility.u0 = (u == "-inf" ? -1.0 : 1.0) * std::numeric_limits<double>::infinity();
    } else if (u.is_number()) {
      c.utility.u0 = u.get<double>();
    } else {
      throw ConfigError("u0 must be a number, \"inf\" or \"-inf\"");
    }
  }
  const json& m = r.object("mcmc");
  Reader rm{m, "mcmc.", {}};
  rm.get("iterations", c.sampler.chain.iterations);
  rm.get("burn_in", c.sampler.chain.burn_in);
  rm.get("thin", c.sampler.chain.thin);
  rm.get("sigma_shape", c.sampler.sigma_shape);
  rm.get("sigma_scale", c.sampler.sigma_scale);
  rm.get("pt_depth", c.sampler.pt_depth);
  rm.get("pt_c", c.sampler.pt_c);
  const json& f = rm.object("forest");
  Reader rf{f, "mcmc.forest.", {}};
  rf.get("trees", c.sampler.chain.forest.trees);
  rf.get("split_base", c.sampler.chain.forest.split_base);
  rf.get("split_power", c.sampler.chain.forest.split_power);
  rf.get("k", c.sampler.chain.forest.k);
  rf.get("move_weights", c.sampler.chain.forest.move_weights);
  rf.finish();
  rm.finish();
  r.get("scenario", c.scenario);
  r.get("n", c.n);
  r.get("p", c.p);
  r.get("reps", c.reps);
  r.get("censor", c.censor);
  r.get("effect_tte", c.effect_tte);
  r.get("effect_tox", c.effect_tox);
  r.get("mc_size", c.mc_size);
  r.get("target_t1e", c.target_t1e);
  r.get("nu_grid", c.nu_grid);
  r.get("zeta_grid", c.zeta_grid);
  r.finish();
  return c;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

}  // namespace bapofi
