#pragma once

#include "sls/brd_engine.hpp"
#include "sls/simulate.hpp"

#include <json.hpp>

#include <string>

namespace sls {

using Json = nlohmann::ordered_json;

// GameSpec <-> JSON. Parsing is strict: unknown keys are rejected.
Json game_to_json(const GameSpec& spec);
GameSpec game_from_json(const Json& j);

Json kernel_to_json(const FirKernel& k);
FirKernel kernel_from_json(const Json& j);

Json profile_to_json(const StrategyProfile& profile);
StrategyProfile profile_from_json(const GameSpec& spec, const Json& j);

Json policies_to_json(const std::vector<PolicyKernel>& policies);
std::vector<PolicyKernel> policies_from_json(const Json& j);

/// Simulation block of a run configuration.
struct SimulationConfig {
  int stages = 0;            // 0: skip simulation
  std::string noise = "uniform";  // uniform | zero | market_script | impulse
  int impulse_index = 0;
  std::vector<VectorXd> script;  // for noise == "scripted"
  VectorXd x0;                   // empty: origin
  int window_start = -1;  // optional export window (start, end], stages
  int window_end = -1;
};

struct RunConfig {
  // exactly one game source: a generator name or an inline/loaded spec
  std::string generator;  // "chain" | "market" | "" (inline spec)
  int chain_nodes = 14;
  std::vector<double> chain_betas{10.0, 40.0, 10.0};
  MarketParams market;
  std::optional<GameSpec> inline_spec;

  BrdConfig brd;
  SimulationConfig simulation;
  std::string reference = "none";  // none | dpg | last
  std::string output_dir;
  std::uint64_t seed = 0;

  GameSpec make_game() const;
};

RunConfig run_config_from_json(const Json& j);
Json run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::string& path);

void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);
Json load_json_file(const std::string& path);

/// Deterministic float formatting used by every CSV/JSON writer (%.17g).
std::string format_double(double v);

std::string convergence_csv(const IterationLog& log);
std::string trajectory_csv(const GameSpec& spec, const Trajectory& traj,
                           std::uint64_t seed, int t_begin = 0, int t_end = -1);

}  // namespace sls
