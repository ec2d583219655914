// bapofi: subgroup finding for time-to-event trials.
//
//   bapofi analyze  --data trial.csv --tau 720 690 750 --out report/
//   bapofi simulate --scenario E2 --n 400 --reps 200 --censor 0.10 --out sim/
//   bapofi tune     --nu 0.25 --zeta 0.15 --target-t1e 0.05 --out tune/

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bapofi/config.hpp"
#include "bapofi/decision.hpp"
#include "bapofi/discretize.hpp"
#include "bapofi/error.hpp"
#include "bapofi/simulation.hpp"
#include "bapofi/toxicity.hpp"

namespace fs = std::filesystem;
using namespace bapofi;
using json = nlohmann::ordered_json;

namespace {

struct Flags {
  std::string config;
  std::string data, bins, out, scenario;
  std::vector<double> tau, censor, effect_tte, effect_tox, nu_grid, zeta_grid;
  std::optional<double> delta0, delta1, nu, zeta, u0, target;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs, reps, iterations, burn_in, thin;
  std::vector<std::size_t> n;
  std::optional<std::size_t> p, mc_size;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config; flags override it")->check(CLI::ExistingFile);
  app->add_option("--out", f.out, "output directory");
  app->add_option("--delta0", f.delta0, "MCMD intercept");
  app->add_option("--delta1", f.delta1, "MCMD slope per unit toxicity difference");
  app->add_option("--nu", f.nu, "subgroup-size exponent");
  app->add_option("--zeta", f.zeta, "parsimony exponent");
  app->add_option("--u0", f.u0, "utility of the null report");
  app->add_option("--seed", f.seed, "master seed");
  app->add_option("--jobs", f.jobs, "worker threads");
  app->add_option("--iterations", f.iterations, "MCMC iterations per chain");
  app->add_option("--burn-in", f.burn_in, "burn-in iterations");
  app->add_option("--thin", f.thin, "thinning interval");
}

void add_sim(CLI::App* app, Flags& f) {
  app->add_option("--n", f.n, "patients per trial (one or more)");
  app->add_option("--p", f.p, "covariates");
  app->add_option("--reps", f.reps, "replicates");
  app->add_option("--censor", f.censor, "censoring proportion (one or more)");
  app->add_option("--mc-size", f.mc_size, "covariate sample size for calibration and truth");
}

RunConfig resolve(const Flags& f, const std::string& mode) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_config_file(f.config);
  c.mode = mode;
  if (!f.data.empty()) c.data = f.data;
  if (!f.bins.empty()) c.bins = f.bins;
  if (!f.out.empty()) c.out = f.out;
  if (!f.scenario.empty()) c.scenario = f.scenario;
  if (!f.tau.empty()) {
    c.tau = f.tau.front();
    c.tau_sensitivity.assign(f.tau.begin() + 1, f.tau.end());
  }
  if (f.delta0) c.delta0 = *f.delta0;
  if (f.delta1) c.delta1 = *f.delta1;
  if (f.nu) c.utility.nu = *f.nu;
  if (f.zeta) c.utility.zeta = *f.zeta;
  if (f.u0) c.utility.u0 = *f.u0;
  if (f.seed) c.seed = *f.seed;
  if (f.jobs) c.jobs = *f.jobs;
  if (f.iterations) c.sampler.chain.iterations = *f.iterations;
  if (f.burn_in) c.sampler.chain.burn_in = *f.burn_in;
  if (f.thin) c.sampler.chain.thin = *f.thin;
  if (!f.n.empty()) c.n = f.n;
  if (f.p) c.p = *f.p;
  if (f.reps) c.reps = *f.reps;
  if (!f.censor.empty()) c.censor = f.censor;
  if (!f.effect_tte.empty()) c.effect_tte = f.effect_tte;
  if (!f.effect_tox.empty()) c.effect_tox = f.effect_tox;
  if (f.mc_size) c.mc_size = *f.mc_size;
  if (f.target) c.target_t1e = *f.target;
  if (!f.nu_grid.empty()) c.nu_grid = f.nu_grid;
  if (!f.zeta_grid.empty()) c.zeta_grid = f.zeta_grid;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

json diagnostics_json(const aft::Diagnostics& d) {
  json j;
  j["iterations"] = d.iterations;
  j["step1_acceptance"] = d.mu_acceptance();
  j["step2_acceptance"] = d.sigma_acceptance();
  j["sigma2"] = {{"mean", d.sigma2_mean}, {"sd", d.sigma2_sd}, {"min", d.sigma2_min}, {"max", d.sigma2_max}};
  return j;
}

std::string format_tau(double tau) {
  std::ostringstream s;
  s << tau;
  return s.str();
}

int cmd_analyze(const RunConfig& c) {
  if (c.data.empty()) throw ConfigError("analyze needs --data");
  const auto data = load_dataset_file(c.data);
  const double delta1 = c.resolved_delta1(false);
  if (delta1 != 0.0 && !data.has_tox()) throw SchemaError("delta1 != 0 needs a tox column");
  fs::create_directories(c.out);

  CovariateBins bins;
  if (!c.bins.empty()) {
    std::ifstream in(c.bins);
    if (!in) throw ConfigError("cannot open bin file " + c.bins);
    try {
      bins = read_bins(in);
      bins.assign(data);
    } catch (const std::invalid_argument& e) {
      throw SchemaError(e.what());
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("bin file: ") + e.what());
    }
  } else {
    try {
      bins = fit_bins(data);
    } catch (const std::invalid_argument& e) {
      throw SchemaError(e.what());
    }
  }
  {
    std::ofstream out(fs::path(c.out) / "bins.json");
    write_bins(out, bins);
  }

  auto sampler = c.sampler;
  sampler.chain.seed = Rng::derive(c.seed, 1);
  std::cerr << "fitting TTE chain (" << sampler.chain.iterations << " iterations)\n";
  const auto draws = aft::run_chain(data, sampler);
  std::optional<tox::ToxDraws> tox_draws;
  if (delta1 != 0.0) {
    auto settings = sampler.chain;
    settings.seed = Rng::derive(c.seed, 2);
    std::cerr << "fitting toxicity chain\n";
    tox_draws = tox::run_tox_chain(data, settings);
  }

  json diag = diagnostics_json(draws.diagnostics);
  json warnings = json::array();
  const auto& d = draws.diagnostics;
  if (d.mu_acceptance() < 0.01) warnings.push_back("step 1 acceptance below 1%");
  if (d.sigma_acceptance() < 0.01) warnings.push_back("step 2 acceptance below 1%");
  diag["warnings"] = warnings;
  for (const auto& w : warnings) std::cerr << "warning: " << w.get<std::string>() << '\n';
  write_text(fs::path(c.out) / "diagnostics.json", diag.dump(2) + "\n");

  std::vector<double> taus{c.tau};
  taus.insert(taus.end(), c.tau_sensitivity.begin(), c.tau_sensitivity.end());
  const json config = json::parse(to_json(c));
  for (double tau : taus) {
    const decision::TradeoffSpec spec{c.delta0, delta1, tau};
    const auto report = decision::rank_actions(data, bins, draws, tox_draws ? &*tox_draws : nullptr,
                                               spec, c.utility);
    json j;
    j["config"] = config;
    j["seed"] = c.seed;
    j["tau"] = tau;
    j["delta1"] = delta1;
    j["diagnostics"] = diag;
    j["report"] = json::parse(decision::report_json(report, bins, report.ranked.size()));
    const std::string stem = "report_tau" + format_tau(tau);
    write_text(fs::path(c.out) / (stem + ".json"), j.dump(2) + "\n");
    std::ostringstream table;
    table << "tau = " << tau << "  delta0 = " << c.delta0 << "  delta1 = " << delta1
          << "  nu = " << c.utility.nu << "  zeta = " << c.utility.zeta << "  u0 = " << c.utility.u0
          << "  seed = " << c.seed << "\n\n";
    decision::write_report_table(table, report, bins, 20);
    write_text(fs::path(c.out) / (stem + ".txt"), table.str());
    std::cout << table.str() << '\n';
  }
  return 0;
}

std::string effect_label(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

int cmd_simulate(const RunConfig& c) {
  const auto ids = sim::scenario_ids();
  if (std::find(ids.begin(), ids.end(), c.scenario) == ids.end()) {
    throw ConfigError("unknown scenario id: " + c.scenario);
  }
  fs::create_directories(c.out);
  write_text(fs::path(c.out) / "config.json", to_json(c) + "\n");
  const auto probe = sim::make_scenario(c.scenario);
  std::vector<std::pair<double, double>> effects;
  for (double e : probe.efficacy ? c.effect_tte : std::vector<double>{0.0}) {
    for (double t : probe.toxicity ? c.effect_tox : std::vector<double>{0.0}) effects.emplace_back(e, t);
  }
  const fs::path csv_path = fs::path(c.out) / "oc.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw ConfigError("cannot write " + csv_path.string());
  csv << "scenario,hypothesis,true_action,effect_tte,effect_tox,n,censor,reps,failures,"
         "tdr,tdr_se,fnr,fnr_se,fpr,fpr_se,fsr,fsr_se,fdr,fdr_se,t1e,t1e_se,"
         "step1_acceptance,step2_acceptance,u0,nu,zeta,delta0,delta1,seed\n";
  csv.precision(10);
  const double delta1 = c.resolved_delta1(probe.toxicity);
  for (const auto& [e, t] : effects) {
    for (std::size_t n : c.n) {
      for (double q : c.censor) {
        sim::SimConfig s;
        s.n = n;
        s.p = c.p;
        s.reps = c.reps;
        s.censor = q;
        s.seed = c.seed;
        s.jobs = c.jobs;
        s.sampler = c.sampler;
        s.tradeoff = {c.delta0, delta1, 90.0};
        s.utility = c.utility;
        s.mc_size = c.mc_size;
        std::string tag = c.scenario + "_e" + effect_label(e) + "_t" + effect_label(t) + "_n" +
                          std::to_string(n) + "_c" + effect_label(q);
        std::replace(tag.begin(), tag.end(), '*', 'x');
        s.log_path = (fs::path(c.out) / ("replicates_" + tag + ".jsonl")).string();
        const auto start = std::chrono::steady_clock::now();
        s.progress = [&](int done, int total) {
          const double secs =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
          std::cerr << "\r" << tag << ": " << done << "/" << total << " replicates (" << int(secs)
                    << " s)" << std::flush;
        };
        const auto run = sim::run_replicates(sim::make_scenario(c.scenario, e, t), s);
        std::cerr << '\n';
        const auto& o = run.summary;
        auto se = [&](double r) { return sim::OCSummary::standard_error(r, o.reps); };
        csv << c.scenario << ',' << sim::hypothesis_name(o.hypothesis) << ','
            << run.truth.action.encode() << ',' << e << ',' << t << ',' << n << ',' << q << ','
            << o.reps << ',' << o.failures << ',' << o.tdr << ',' << se(o.tdr) << ',' << o.fnr << ','
            << se(o.fnr) << ',' << o.fpr << ',' << se(o.fpr) << ',' << o.fsr << ',' << se(o.fsr)
            << ',' << o.fdr << ',' << se(o.fdr) << ',' << o.t1e << ',' << se(o.t1e) << ','
            << o.mu_acceptance << ',' << o.sigma_acceptance << ',' << c.utility.u0 << ','
            << c.utility.nu << ',' << c.utility.zeta << ',' << c.delta0 << ',' << delta1 << ','
            << c.seed << '\n'
            << std::flush;
        std::cout << tag << "  " << sim::hypothesis_name(o.hypothesis) << "  TDR " << o.tdr
                  << "  FNR " << o.fnr << "  FPR " << o.fpr << "  FSR " << o.fsr << "  ("
                  << o.reps << " reps, " << o.failures << " failed)\n";
      }
    }
  }
  return 0;
}

int cmd_tune(const RunConfig& c) {
  fs::create_directories(c.out);
  write_text(fs::path(c.out) / "config.json", to_json(c) + "\n");
  sim::SimConfig s;
  s.n = c.n.front();
  s.p = c.p;
  s.reps = c.reps;
  s.censor = c.censor.front();
  s.seed = c.seed;
  s.jobs = c.jobs;
  s.sampler = c.sampler;
  s.tradeoff = {c.delta0, 0.0, 90.0};
  s.utility = c.utility;
  s.mc_size = c.mc_size;
  s.log_path = (fs::path(c.out) / "replicates_tune.jsonl").string();
  s.progress = [](int done, int total) {
    std::cerr << "\rtune: " << done << "/" << total << " replicates" << std::flush;
  };
  std::vector<decision::UtilityParams> grid;
  if (!c.nu_grid.empty() || !c.zeta_grid.empty()) {
    const auto nus = c.nu_grid.empty() ? std::vector<double>{c.utility.nu} : c.nu_grid;
    const auto zetas = c.zeta_grid.empty() ? std::vector<double>{c.utility.zeta} : c.zeta_grid;
    for (double nu : nus) {
      for (double zeta : zetas) grid.push_back({nu, zeta, 0.0});
    }
  }
  const auto result = sim::tune(s, c.target_t1e, grid);
  std::cerr << '\n';
  json points = json::array();
  for (const auto& pt : result.points) {
    json j;
    j["nu"] = pt.nu;
    j["zeta"] = pt.zeta;
    if (std::isinf(pt.u0)) j["u0"] = "-inf";
    else j["u0"] = pt.u0;
    points.push_back(j);
    std::cout << "nu " << pt.nu << "  zeta " << pt.zeta << "  u0 " << pt.u0 << '\n';
  }
  int failed = 0;
  for (const auto& r : result.records) failed += !r.ok;
  json out;
  out["config"] = json::parse(to_json(c));
  out["seed"] = c.seed;
  out["target_t1e"] = c.target_t1e;
  out["reps"] = c.reps - failed;
  out["failures"] = failed;
  out["points"] = points;
  write_text(fs::path(c.out) / "tune.json", out.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian subgroup finding for time-to-event trials"};
  app.require_subcommand(1);
  Flags f;

  auto* analyze = app.add_subcommand("analyze", "rank subgroup reports for a trial dataset");
  add_common(analyze, f);
  analyze->add_option("--data", f.data, "trial CSV (arm, time, event, [tox], covariates)");
  analyze->add_option("--bins", f.bins, "frozen bin file to reuse");
  analyze->add_option("--tau", f.tau, "time horizon(s); extra values are sensitivity runs");

  auto* simulate = app.add_subcommand("simulate", "operating characteristics for a scenario");
  add_common(simulate, f);
  add_sim(simulate, f);
  simulate->add_option("--scenario", f.scenario, "0, E1..E10, T1, T2, E1*T1, ..., E4*T2");
  simulate->add_option("--effect-tte", f.effect_tte, "S(tau) differences in the sensitive region");
  simulate->add_option("--effect-tox", f.effect_tox, "Pr(tox) differences in the sensitive region");

  auto* tune = app.add_subcommand("tune", "calibrate u0 under the null scenario");
  add_common(tune, f);
  add_sim(tune, f);
  tune->add_option("--target-t1e", f.target, "target type I error");
  tune->add_option("--nu-grid", f.nu_grid, "nu values to tune over");
  tune->add_option("--zeta-grid", f.zeta_grid, "zeta values to tune over");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 3;
  }

  try {
    if (*analyze) return cmd_analyze(resolve(f, "analyze"));
    if (*simulate) return cmd_simulate(resolve(f, "simulate"));
    return cmd_tune(resolve(f, "tune"));
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
