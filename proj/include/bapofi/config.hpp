#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bapofi/aft_sampler.hpp"
#include "bapofi/decision.hpp"

namespace bapofi {

// Resolved settings of one CLI run. Every tunable lives here once; the JSON
// form is embedded in each output so a run can be replayed from it.
struct RunConfig {
  std::string mode = "analyze";  // analyze | simulate | tune
  std::string data;              // analyze: CSV path
  std::string bins;              // analyze: optional frozen bin file
  std::string out = "out";
  std::uint64_t seed = 20240917;
  int jobs = 1;

  // Decision layer. delta1 unset means 0 for analysis and efficacy
  // scenarios, 1.5 for trade-off scenarios.
  double tau = 720.0;
  std::vector<double> tau_sensitivity;
  double delta0 = 0.2;
  std::optional<double> delta1;
  decision::UtilityParams utility;

  aft::SamplerConfig sampler;

  // Simulation.
  std::string scenario = "0";
  std::vector<std::size_t> n{400};
  std::size_t p = 10;
  int reps = 200;
  std::vector<double> censor{0.10};
  std::vector<double> effect_tte{0.30, 0.40, 0.50};
  std::vector<double> effect_tox{0.15, 0.25};
  std::size_t mc_size = 1000000;
  double target_t1e = 0.05;
  std::vector<double> nu_grid;    // tune: empty means the single utility.nu
  std::vector<double> zeta_grid;

  // Throws ConfigError on any invalid field.
  void validate() const;
  double resolved_delta1(bool tradeoff_scenario) const;
};

std::string to_json(const RunConfig& c);
// Fields absent from the text keep their defaults; unknown keys are an error.
RunConfig config_from_json(const std::string& text);
RunConfig load_config_file(const std::string& path);

}  // namespace bapofi
