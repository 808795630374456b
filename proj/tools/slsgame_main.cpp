// Command-line front end: validate game specs, run the equilibrium-seeking
// iteration, simulate learned policies, and reproduce the bundled chain and
// market experiments.

#include <CLI11.hpp>

#include "sls/analysis.hpp"
#include "sls/serialization.hpp"

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace sls;

namespace {

constexpr const char* kVersion = "sls-games 0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitInfeasible = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitConfig = 4;

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string kernels_path;
  std::string reference;
  std::int64_t seed = -1;
  int max_updates = -1;
  bool exact_fir = false;
  bool dump_constraints = false;
  int samples = 0;
};

RunConfig load_config(const CommonFlags& flags) {
  RunConfig config = load_run_config(flags.config_path);
  if (flags.seed >= 0) config.seed = static_cast<std::uint64_t>(flags.seed);
  if (flags.max_updates > 0) config.brd.max_updates = flags.max_updates;
  if (flags.exact_fir) config.brd.exact_fir = true;
  if (!flags.reference.empty()) config.reference = flags.reference;
  if (!flags.out_dir.empty()) config.output_dir = flags.out_dir;
  return config;
}

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

std::string status_name(RunStatus s) {
  switch (s) {
    case RunStatus::kConverged: return "converged";
    case RunStatus::kMaxUpdates: return "max_updates";
    case RunStatus::kInfeasible: return "infeasible";
    case RunStatus::kDiverged: return "diverged";
  }
  return "unknown";
}

std::string constraint_dump(const GameSpec& spec, int horizon) {
  std::ostringstream out;
  for (int p = 0; p < spec.n_players; ++p) {
    const CompiledConstraints cc = compile(spec, p, horizon);
    out << "player " << p + 1 << ": " << cc.rows.size() << " robust rows ("
        << cc.state_row_count() << " state, " << cc.input_row_count() << " input, "
        << cc.coupled_row_count() << " coupled)\n";
    std::vector<FirKernel> zeros;
    for (int q = 0; q < spec.n_players; ++q)
      zeros.push_back(FirKernel::zero(spec.input_dims[q], spec.state_dim, horizon - 1));
    const StrategyProfile zero_profile = StrategyProfile::from_phi_u(spec, zeros);
    const SlackReport slack = check_feasible_point(cc, zero_profile);
    for (size_t i = 0; i < cc.rows.size(); ++i) {
      const auto& r = cc.rows[i];
      const char* kind = r.origin == ConstraintOrigin::kState     ? "state"
                         : r.origin == ConstraintOrigin::kInput   ? "input"
                                                                  : "coupled";
      out << "  row " << i << " [" << kind << " #" << r.source_row
          << "] rhs=" << format_double(r.rhs)
          << " slack_at_zero=" << format_double(slack.slack[i]) << '\n';
    }
  }
  return out.str();
}

Json validation_to_json(const ValidationReport& report) {
  Json checks = Json::array();
  for (const auto& c : report.checks)
    checks.push_back(Json{{"name", c.name},
                          {"player", c.player + 1},
                          {"pass", c.pass},
                          {"value", c.value},
                          {"detail", c.detail}});
  return Json{{"spectral_radius", report.spectral_radius},
              {"all_pass", report.all_pass()},
              {"checks", std::move(checks)}};
}

int cmd_validate(const CommonFlags& flags) {
  const RunConfig config = load_config(flags);
  const GameSpec game = config.make_game();
  const ValidationReport report = validate_assumptions(game);

  Json out;
  out["version"] = kVersion;
  out["validation"] = validation_to_json(report);

  // Constraint compile dry run.
  try {
    for (int p = 0; p < game.n_players; ++p) compile(game, p, config.brd.horizon);
    out["constraints"] = "ok";
  } catch (const Error& err) {
    out["constraints"] = std::string("error: ") + err.what();
  }

  const GameSpec work = effective_spec(game, config.brd);
  const HessianBlocks hessians = assemble_hessians(work, config.brd.horizon);
  LipschitzReport lip = lipschitz_constants(work, hessians);
  lip.eta = config.brd.eta;
  lip.predicted_rate = predicted_rate(config.brd.eta, lip.global_constant);
  out["lipschitz"] = Json{{"player_constants", lip.player_constants},
                          {"global_constant", lip.global_constant},
                          {"condition_numbers", lip.condition_numbers},
                          {"predicted_rate", lip.predicted_rate},
                          {"advisory_only", lip.advisory_only}};
  out["potential_game"] = is_potential_game(game);

  if (flags.dump_constraints)
    out["constraint_dump"] = constraint_dump(game, config.brd.horizon);

  std::cout << out.dump(2) << std::endl;
  if (!config.output_dir.empty()) {
    ensure_dir(config.output_dir);
    write_text_file(config.output_dir + "/validate.json", out.dump(2));
  }
  return report.all_pass() ? kExitOk : kExitOk;
}

int write_run_outputs(const RunConfig& config, const GameSpec& game,
                      const RunResult& result, const Json& extra) {
  const std::string dir = config.output_dir.empty() ? "." : config.output_dir;
  ensure_dir(dir);
  write_text_file(dir + "/config.json", run_config_to_json(config).dump(2));
  write_text_file(dir + "/convergence.csv", convergence_csv(result.log));

  Json kernels = profile_to_json(result.profile);
  kernels["policies"] = policies_to_json(result.policies)["policies"];
  write_text_file(dir + "/kernels.json", kernels.dump());

  Json summary;
  summary["version"] = kVersion;
  summary["seed"] = config.seed;
  summary["status"] = status_name(result.status);
  summary["updates"] = result.updates;
  summary["eps_gap"] = result.eps_gap;
  summary["eps_gap_loose"] = result.eps_gap_loose;
  summary["objectives"] = result.objectives;
  summary["coupled_constraints_active"] = result.coupled_active_any;
  summary["message"] = result.message;
  const GameSpec work = effective_spec(game, config.brd);
  const HessianBlocks hessians = assemble_hessians(work, config.brd.horizon);
  LipschitzReport lip = lipschitz_constants(work, hessians);
  summary["lipschitz"] = Json{{"global_constant", lip.global_constant},
                              {"predicted_rate",
                               predicted_rate(config.brd.eta, lip.global_constant)},
                              {"advisory_only", lip.advisory_only}};
  for (const auto& item : extra.items()) summary[item.key()] = item.value();
  write_text_file(dir + "/summary.json", summary.dump(2));
  return result.status == RunStatus::kInfeasible  ? kExitInfeasible
         : result.status == RunStatus::kDiverged  ? kExitDiverged
                                                  : kExitOk;
}

int cmd_equilibrium(const CommonFlags& flags) {
  RunConfig config = load_config(flags);
  const GameSpec game = config.make_game();

  Json extra;
  std::optional<StrategyProfile> reference;
  if (config.reference == "dpg") {
    reference = dpg_reference(game, config.brd);
    extra["reference"] = "dpg";
  } else if (config.reference == "last") {
    config.brd.record_history = true;
    extra["reference"] = "last";
  }

  RunResult result;
  const std::vector<FirKernel>* ref_kernels = nullptr;
  if (reference) ref_kernels = &reference->phi_u;
  result = run_brd(game, config.brd, ref_kernels);
  if (config.reference == "last" && !result.history.empty())
    result.rereference(result.history.back());

  if (flags.dump_constraints) {
    const GameSpec work = effective_spec(game, config.brd);
    ensure_dir(config.output_dir);
    write_text_file(config.output_dir + "/constraints.txt",
                    constraint_dump(work, config.brd.horizon));
  }

  const int code = write_run_outputs(config, game, result, extra);
  std::cout << "status: " << status_name(result.status) << " after " << result.updates
            << " updates, eps_gap=" << format_double(result.eps_gap) << std::endl;

  if (code == kExitOk && config.simulation.stages > 0) {
    NoiseSource noise = NoiseSource::uniform_ball(config.seed);
    if (config.simulation.noise == "zero") noise = NoiseSource::zero();
    if (config.simulation.noise == "market_script") noise = market_disturbance_script();
    if (config.simulation.noise == "impulse")
      noise = NoiseSource::impulse(config.simulation.impulse_index);
    const Trajectory traj = closed_loop_run(game, result.policies,
                                            config.simulation.stages, noise,
                                            config.simulation.x0);
    write_text_file(config.output_dir + "/trajectory.csv",
                    trajectory_csv(game, traj, config.seed));
    if (config.simulation.window_start >= 0)
      write_text_file(config.output_dir + "/trajectory_window.csv",
                      trajectory_csv(game, traj, config.seed,
                                     config.simulation.window_start + 1,
                                     config.simulation.window_end + 1));
  }
  return code;
}

int cmd_simulate(const CommonFlags& flags) {
  const RunConfig config = load_config(flags);
  const GameSpec game = config.make_game();
  if (flags.kernels_path.empty()) throw ConfigError("simulate: --kernels is required");
  const Json kj = load_json_file(flags.kernels_path);
  std::vector<PolicyKernel> policies =
      policies_from_json(Json{{"policies", kj.at("policies")}});

  NoiseSource noise = NoiseSource::uniform_ball(config.seed);
  if (config.simulation.noise == "zero") noise = NoiseSource::zero();
  if (config.simulation.noise == "market_script") noise = market_disturbance_script();
  if (config.simulation.noise == "impulse")
    noise = NoiseSource::impulse(config.simulation.impulse_index);

  const int stages = config.simulation.stages > 0 ? config.simulation.stages : 100;
  const Trajectory traj =
      closed_loop_run(game, policies, stages, noise, config.simulation.x0);
  const std::string dir = config.output_dir.empty() ? "." : config.output_dir;
  ensure_dir(dir);
  write_text_file(dir + "/trajectory.csv", trajectory_csv(game, traj, config.seed));
  if (config.simulation.window_start >= 0)
    write_text_file(dir + "/trajectory_window.csv",
                    trajectory_csv(game, traj, config.seed,
                                   config.simulation.window_start + 1,
                                   config.simulation.window_end + 1));
  std::cout << "simulated " << traj.stages() << " stages"
            << (traj.aborted_unstable ? " (aborted: unstable)" : "") << std::endl;
  return traj.aborted_unstable ? kExitDiverged : kExitOk;
}

int cmd_analyze(const CommonFlags& flags) {
  const RunConfig config = load_config(flags);
  const GameSpec game = config.make_game();
  const GameSpec work = effective_spec(game, config.brd);
  const HessianBlocks hessians = assemble_hessians(work, config.brd.horizon);
  LipschitzReport lip = lipschitz_constants(work, hessians);
  lip.eta = config.brd.eta;
  lip.predicted_rate = predicted_rate(config.brd.eta, lip.global_constant);
  if (flags.samples > 0) {
    std::mt19937_64 rng(config.seed);
    lip.empirical_ratio = empirical_lipschitz(game, config.brd, flags.samples, rng);
  }
  Json out{{"version", kVersion},
           {"player_constants", lip.player_constants},
           {"condition_numbers", lip.condition_numbers},
           {"global_constant", lip.global_constant},
           {"eta", lip.eta},
           {"predicted_rate", lip.predicted_rate},
           {"advisory_only", lip.advisory_only}};
  if (flags.samples > 0)
    out["empirical_ratio"] = lip.empirical_ratio;
  else
    out["empirical_ratio"] = nullptr;
  std::cout << out.dump(2) << std::endl;
  if (!config.output_dir.empty()) {
    ensure_dir(config.output_dir);
    write_text_file(config.output_dir + "/analysis.json", out.dump(2));
  }
  return kExitOk;
}

RunConfig chain_experiment_config(const std::vector<double>& betas,
                                  const std::string& out_dir) {
  RunConfig config;
  config.generator = "chain";
  config.chain_nodes = 14;
  config.chain_betas = betas;
  config.brd.eta = 0.5;
  config.brd.stages_per_update = 1;
  config.brd.horizon = 50;
  config.brd.gamma = 0.95;
  config.brd.stop_rel_tol = 1e-8;
  config.brd.max_updates = 5000;
  config.brd.use_structure = true;
  config.reference = "dpg";
  config.simulation.stages = 600;
  config.simulation.noise = "uniform";
  config.simulation.window_start = 550;
  config.simulation.window_end = 600;
  config.output_dir = out_dir;
  return config;
}

RunConfig market_experiment_config(std::uint64_t seed, const std::string& out_dir) {
  RunConfig config;
  config.generator = "market";
  config.market = MarketParams{};
  config.market.seed = seed;
  config.brd.eta = 0.25;
  config.brd.stages_per_update = 1;
  config.brd.horizon = 16;
  config.brd.gamma = 0.95;
  config.brd.stop_rel_tol = 1e-8;
  config.brd.max_updates = 5000;
  config.brd.use_structure = false;
  config.reference = "last";
  config.seed = seed;
  config.simulation.stages = 400;
  config.simulation.noise = "market_script";
  config.simulation.window_start = 260;
  config.simulation.window_end = 400;
  config.output_dir = out_dir;
  return config;
}

int cmd_reproduce(const std::string& experiment, const CommonFlags& flags) {
  const std::string base = flags.out_dir.empty() ? "runs" : flags.out_dir;
  const std::uint64_t seed = flags.seed >= 0 ? static_cast<std::uint64_t>(flags.seed) : 1;

  int worst = kExitOk;
  if (experiment == "chain") {
    const std::vector<std::vector<double>> betas = {
        {10.0, 40.0, 10.0}, {2.0, 8.0, 2.0}, {0.4, 1.6, 0.4}};
    for (const auto& b : betas) {
      std::ostringstream name;
      name << base << "/chain_beta";
      for (double v : b) name << "_" << v;
      RunConfig config = chain_experiment_config(b, name.str());
      config.seed = seed;
      CommonFlags sub = flags;
      sub.out_dir = name.str();
      std::cout << "== chain beta=(" << b[0] << "," << b[1] << "," << b[2] << ")"
                << std::endl;
      ensure_dir(name.str());
      write_text_file(name.str() + "/config.json", run_config_to_json(config).dump(2));
      const GameSpec game = config.make_game();
      const StrategyProfile ref = dpg_reference(game, config.brd);
      RunResult result = run_brd(game, config.brd, &ref.phi_u);
      Json extra{{"reference", "dpg"}};
      worst = std::max(worst, write_run_outputs(config, game, result, extra));
      if (result.converged()) {
        const Trajectory traj =
            closed_loop_run(game, result.policies, config.simulation.stages,
                            NoiseSource::uniform_ball(seed), VectorXd());
        write_text_file(name.str() + "/trajectory.csv",
                        trajectory_csv(game, traj, seed));
        write_text_file(name.str() + "/trajectory_window.csv",
                        trajectory_csv(game, traj, seed, 551, 601));
      }
      std::cout << "   " << status_name(result.status) << " after " << result.updates
                << " updates" << std::endl;
    }
    return worst;
  }
  if (experiment == "market") {
    const std::string dir = base + "/market_seed" + std::to_string(seed);
    RunConfig config = market_experiment_config(seed, dir);
    ensure_dir(dir);
    write_text_file(dir + "/config.json", run_config_to_json(config).dump(2));
    const GameSpec game = config.make_game();
    config.brd.record_history = true;
    RunResult result = run_brd(game, config.brd);
    if (!result.history.empty()) result.rereference(result.history.back());
    Json extra{{"reference", "last"}};
    const int code = write_run_outputs(config, game, result, extra);
    std::cout << "   " << status_name(result.status) << " after " << result.updates
              << " updates" << std::endl;
    if (result.converged()) {
      const Trajectory traj = closed_loop_run(
          game, result.policies, config.simulation.stages,
          market_disturbance_script(), VectorXd());
      write_text_file(dir + "/trajectory.csv", trajectory_csv(game, traj, seed));
      write_text_file(dir + "/trajectory_window.csv",
                      trajectory_csv(game, traj, seed, 261, 401));
      // Open-loop baseline u = 0 under the same disturbances.
      std::vector<PolicyKernel> idle;
      for (int p = 0; p < game.n_players; ++p) {
        PolicyKernel pol;
        pol.phi_x = FirKernel(game.state_dim, game.state_dim, 1);
        pol.phi_x.tap(1) = MatrixXd::Identity(game.state_dim, game.state_dim);
        pol.phi_u = FirKernel::zero(game.input_dims[p], game.state_dim, 1);
        pol.taps.assign(1, MatrixXd::Zero(game.input_dims[p], game.state_dim));
        idle.push_back(std::move(pol));
      }
      const Trajectory open_loop = closed_loop_run(
          game, idle, config.simulation.stages, market_disturbance_script(), VectorXd());
      write_text_file(dir + "/trajectory_openloop.csv",
                      trajectory_csv(game, open_loop, seed));
    }
    return code;
  }
  throw ConfigError("reproduce: unknown experiment '" + experiment + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feedback Nash equilibrium seeking for constrained linear-quadratic "
               "dynamic games via system-level best-response iterations"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string experiment;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", flags.config_path, "run configuration file");
    if (needs_config) opt->required();
    cmd->add_option("--out", flags.out_dir, "output directory");
    cmd->add_option("--seed", flags.seed, "override the run seed");
    cmd->add_option("--max-updates", flags.max_updates, "cap the update count");
    cmd->add_flag("--exact-fir", flags.exact_fir, "harden the terminal tap to zero");
    cmd->add_option("--reference", flags.reference, "none | dpg | last");
    cmd->add_flag("--dump-constraints", flags.dump_constraints,
                  "write the compiled robust rows");
  };

  auto* validate = app.add_subcommand("validate", "check game assumptions");
  add_common(validate, true);
  auto* equilibrium = app.add_subcommand("equilibrium", "run the learning dynamics");
  add_common(equilibrium, true);
  auto* simulate = app.add_subcommand("simulate", "closed-loop simulation of kernels");
  add_common(simulate, true);
  simulate->add_option("--kernels", flags.kernels_path, "kernels.json from a run");
  auto* analyze = app.add_subcommand("analyze", "contraction constants");
  add_common(analyze, true);
  analyze->add_option("--samples", flags.samples, "empirical ratio sample pairs");
  auto* reproduce = app.add_subcommand("reproduce", "bundled experiments");
  reproduce->add_option("experiment", experiment, "chain | market")->required();
  add_common(reproduce, false);

  try {
    app.parse(argc, argv);
    if (validate->parsed()) return cmd_validate(flags);
    if (equilibrium->parsed()) return cmd_equilibrium(flags);
    if (simulate->parsed()) return cmd_simulate(flags);
    if (analyze->parsed()) return cmd_analyze(flags);
    if (reproduce->parsed()) return cmd_reproduce(experiment, flags);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kExitConfig;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << std::endl;
    return kExitInfeasible;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitDiverged;
  }
  return kExitOk;
}
