#include "sls/serialization.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace sls {

namespace {

void check_keys(const Json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw ConfigError(where + ": unknown key '" + item.key() + "'");
}

Json matrix_to_json(const MatrixXd& m) {
  Json rows = Json::array();
  for (int i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected a matrix (array of rows)");
  const int rows = static_cast<int>(j.size());
  int cols = -1;
  MatrixXd m;
  for (int i = 0; i < rows; ++i) {
    const Json& row = j.at(i);
    if (!row.is_array()) throw ConfigError(where + ": expected a row array");
    if (cols < 0) {
      cols = static_cast<int>(row.size());
      m.resize(rows, cols);
    }
    if (static_cast<int>(row.size()) != cols)
      throw ConfigError(where + ": ragged rows");
    for (int k = 0; k < cols; ++k) m(i, k) = row.at(k).get<double>();
  }
  if (rows == 0) m.resize(0, 0);
  return m;
}

Json vector_to_json(const VectorXd& v) {
  Json arr = Json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

VectorXd vector_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  VectorXd v(j.size());
  for (int i = 0; i < static_cast<int>(j.size()); ++i) v(i) = j.at(i).get<double>();
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Json game_to_json(const GameSpec& spec) {
  Json j;
  j["n_players"] = spec.n_players;
  j["state_dim"] = spec.state_dim;
  j["input_dims"] = spec.input_dims;
  j["A"] = matrix_to_json(spec.A);
  Json b = Json::array(), c = Json::array(), d = Json::array();
  for (int p = 0; p < spec.n_players; ++p) {
    b.push_back(matrix_to_json(spec.B[p]));
    c.push_back(matrix_to_json(spec.C[p]));
    Json drow = Json::array();
    for (int q = 0; q < spec.n_players; ++q) {
      if (spec.D[p][q].size() == 0)
        drow.push_back(nullptr);
      else
        drow.push_back(matrix_to_json(spec.D[p][q]));
    }
    d.push_back(std::move(drow));
  }
  j["B"] = std::move(b);
  j["C"] = std::move(c);
  j["D"] = std::move(d);

  if (!spec.state_constraints.empty()) {
    j["state_constraints"] = {{"G", matrix_to_json(spec.state_constraints.G)},
                              {"g", vector_to_json(spec.state_constraints.g)}};
  }
  Json inputs = Json::array();
  for (const auto& u : spec.input_constraints) {
    if (u.empty())
      inputs.push_back(nullptr);
    else
      inputs.push_back(Json{{"G", matrix_to_json(u.G)}, {"g", vector_to_json(u.g)}});
  }
  j["input_constraints"] = std::move(inputs);
  if (spec.coupled_rows() > 0) {
    Json g = Json::array();
    for (const auto& m : spec.coupled_G) g.push_back(matrix_to_json(m));
    j["coupled_constraints"] = {{"G", std::move(g)}, {"g", vector_to_json(spec.coupled_g)}};
  }
  j["noise"] = {{"type", spec.noise.kind == NoiseKind::kInfinityBall
                             ? "infinity_ball"
                             : "energy_ellipsoid"},
                {"P", matrix_to_json(spec.noise.P)}};
  if (spec.structure) {
    Json sx = Json::array(), su = Json::array();
    for (const auto& m : spec.structure->state_masks) sx.push_back(matrix_to_json(m));
    for (const auto& pm : spec.structure->input_masks) {
      Json per = Json::array();
      for (const auto& m : pm) per.push_back(matrix_to_json(m));
      su.push_back(std::move(per));
    }
    j["structure"] = {{"actuation_delay", spec.structure->actuation_delay},
                      {"sensing_delay", spec.structure->sensing_delay},
                      {"S_x", std::move(sx)},
                      {"S_u", std::move(su)}};
  }
  if (spec.noise_covariance) j["noise_covariance"] = matrix_to_json(*spec.noise_covariance);
  return j;
}

GameSpec game_from_json(const Json& j) {
  check_keys(j, {"n_players", "state_dim", "input_dims", "A", "B", "C", "D",
                 "state_constraints", "input_constraints", "coupled_constraints",
                 "noise", "structure", "noise_covariance"},
             "game");
  GameSpec spec;
  spec.n_players = j.at("n_players").get<int>();
  spec.state_dim = j.at("state_dim").get<int>();
  spec.input_dims = j.at("input_dims").get<std::vector<int>>();
  spec.A = matrix_from_json(j.at("A"), "A");
  for (const auto& m : j.at("B")) spec.B.push_back(matrix_from_json(m, "B"));
  for (const auto& m : j.at("C")) spec.C.push_back(matrix_from_json(m, "C"));
  for (const auto& row : j.at("D")) {
    std::vector<MatrixXd> drow;
    for (const auto& m : row)
      drow.push_back(m.is_null() ? MatrixXd() : matrix_from_json(m, "D"));
    spec.D.push_back(std::move(drow));
  }
  if (j.contains("state_constraints")) {
    check_keys(j.at("state_constraints"), {"G", "g"}, "state_constraints");
    spec.state_constraints.G = matrix_from_json(j.at("state_constraints").at("G"), "G_x");
    spec.state_constraints.g = vector_from_json(j.at("state_constraints").at("g"), "g_x");
  } else {
    spec.state_constraints = Polyhedron::unconstrained(spec.state_dim);
  }
  if (j.contains("input_constraints")) {
    int p = 0;
    for (const auto& u : j.at("input_constraints")) {
      if (u.is_null()) {
        spec.input_constraints.push_back(
            Polyhedron::unconstrained(spec.input_dims.at(p)));
      } else {
        check_keys(u, {"G", "g"}, "input_constraints");
        Polyhedron poly;
        poly.G = matrix_from_json(u.at("G"), "G_u");
        poly.g = vector_from_json(u.at("g"), "g_u");
        spec.input_constraints.push_back(std::move(poly));
      }
      ++p;
    }
  }
  while (static_cast<int>(spec.input_constraints.size()) < spec.n_players)
    spec.input_constraints.push_back(Polyhedron::unconstrained(
        spec.input_dims.at(spec.input_constraints.size())));
  if (j.contains("coupled_constraints")) {
    check_keys(j.at("coupled_constraints"), {"G", "g"}, "coupled_constraints");
    for (const auto& m : j.at("coupled_constraints").at("G"))
      spec.coupled_G.push_back(matrix_from_json(m, "G_G"));
    spec.coupled_g = vector_from_json(j.at("coupled_constraints").at("g"), "g_G");
  }
  check_keys(j.at("noise"), {"type", "P"}, "noise");
  const std::string type = j.at("noise").at("type").get<std::string>();
  const MatrixXd P = matrix_from_json(j.at("noise").at("P"), "P");
  if (type == "infinity_ball")
    spec.noise = NoiseModel::infinity_ball(P);
  else if (type == "energy_ellipsoid")
    spec.noise = NoiseModel::energy_ellipsoid(P);
  else
    throw ConfigError("noise: unknown type '" + type + "'");
  if (j.contains("structure")) {
    const Json& s = j.at("structure");
    check_keys(s, {"actuation_delay", "sensing_delay", "S_x", "S_u"}, "structure");
    StructuralPattern pat;
    pat.actuation_delay = s.at("actuation_delay").get<int>();
    pat.sensing_delay = s.at("sensing_delay").get<int>();
    for (const auto& m : s.at("S_x")) pat.state_masks.push_back(matrix_from_json(m, "S_x"));
    for (const auto& pm : s.at("S_u")) {
      std::vector<MatrixXd> per;
      for (const auto& m : pm) per.push_back(matrix_from_json(m, "S_u"));
      pat.input_masks.push_back(std::move(per));
    }
    spec.structure = std::move(pat);
  }
  if (j.contains("noise_covariance"))
    spec.noise_covariance = matrix_from_json(j.at("noise_covariance"), "Sigma_w");
  spec.check_dimensions();
  return spec;
}

Json kernel_to_json(const FirKernel& k) {
  Json taps = Json::array();
  for (const auto& t : k.taps) taps.push_back(matrix_to_json(t));
  return Json{{"rows", k.rows()}, {"cols", k.cols()}, {"taps", std::move(taps)}};
}

FirKernel kernel_from_json(const Json& j) {
  check_keys(j, {"rows", "cols", "taps"}, "kernel");
  FirKernel k;
  for (const auto& t : j.at("taps")) k.taps.push_back(matrix_from_json(t, "kernel tap"));
  if (k.horizon() == 0) throw ConfigError("kernel: needs at least one tap");
  if (k.rows() != j.at("rows").get<int>() || k.cols() != j.at("cols").get<int>())
    throw ConfigError("kernel: declared shape does not match taps");
  return k;
}

Json profile_to_json(const StrategyProfile& profile) {
  Json j;
  Json pu = Json::array(), px = Json::array();
  for (const auto& k : profile.phi_u) pu.push_back(kernel_to_json(k));
  for (const auto& k : profile.phi_x_per_player) px.push_back(kernel_to_json(k));
  j["phi_u"] = std::move(pu);
  j["phi_x"] = kernel_to_json(profile.phi_x_joint);
  j["phi_x_per_player"] = std::move(px);
  return j;
}

StrategyProfile profile_from_json(const GameSpec& spec, const Json& j) {
  check_keys(j, {"phi_u", "phi_x", "phi_x_per_player"}, "profile");
  StrategyProfile prof;
  for (const auto& k : j.at("phi_u")) prof.phi_u.push_back(kernel_from_json(k));
  prof.phi_x_joint = kernel_from_json(j.at("phi_x"));
  for (const auto& k : j.at("phi_x_per_player"))
    prof.phi_x_per_player.push_back(kernel_from_json(k));
  if (static_cast<int>(prof.phi_u.size()) != spec.n_players)
    throw ConfigError("profile: wrong number of players");
  return prof;
}

Json policies_to_json(const std::vector<PolicyKernel>& policies) {
  Json arr = Json::array();
  for (const auto& pol : policies) {
    Json taps = Json::array();
    for (const auto& t : pol.taps) taps.push_back(matrix_to_json(t));
    arr.push_back(Json{{"taps", std::move(taps)},
                       {"phi_x", kernel_to_json(pol.phi_x)},
                       {"phi_u", kernel_to_json(pol.phi_u)}});
  }
  return Json{{"policies", std::move(arr)}};
}

std::vector<PolicyKernel> policies_from_json(const Json& j) {
  check_keys(j, {"policies"}, "policies");
  std::vector<PolicyKernel> out;
  for (const auto& pj : j.at("policies")) {
    check_keys(pj, {"taps", "phi_x", "phi_u"}, "policy");
    PolicyKernel pol;
    for (const auto& t : pj.at("taps")) pol.taps.push_back(matrix_from_json(t, "policy tap"));
    pol.phi_x = kernel_from_json(pj.at("phi_x"));
    pol.phi_u = kernel_from_json(pj.at("phi_u"));
    out.push_back(std::move(pol));
  }
  return out;
}

GameSpec RunConfig::make_game() const {
  if (generator == "chain") return build_chain_game(chain_nodes, chain_betas);
  if (generator == "market") return build_market_game(market);
  if (generator.empty() && inline_spec) return *inline_spec;
  throw ConfigError("run config: no game source (generator or inline spec)");
}

RunConfig run_config_from_json(const Json& j) {
  check_keys(j, {"game", "brd", "simulation", "reference", "output_dir", "seed"},
             "config");
  RunConfig config;
  const Json& game = j.at("game");
  if (game.contains("generator")) {
    config.generator = game.at("generator").get<std::string>();
    if (config.generator == "chain") {
      check_keys(game, {"generator", "n_nodes", "betas"}, "game");
      if (game.contains("n_nodes")) config.chain_nodes = game.at("n_nodes").get<int>();
      if (game.contains("betas"))
        config.chain_betas = game.at("betas").get<std::vector<double>>();
    } else if (config.generator == "market") {
      check_keys(game,
                 {"generator", "seed", "tau", "dt", "u_avg", "d_base", "alpha_range",
                  "beta_range", "b_range", "n_players"},
                 "game");
      auto range = [&](const char* key, std::pair<double, double> dflt) {
        if (!game.contains(key)) return dflt;
        const auto v = game.at(key).get<std::vector<double>>();
        if (v.size() != 2) throw ConfigError(std::string("game: ") + key + " needs two values");
        return std::make_pair(v[0], v[1]);
      };
      if (game.contains("seed")) config.market.seed = game.at("seed").get<std::uint64_t>();
      if (game.contains("tau")) config.market.tau = game.at("tau").get<double>();
      if (game.contains("dt")) config.market.dt = game.at("dt").get<double>();
      if (game.contains("u_avg")) config.market.u_avg = game.at("u_avg").get<double>();
      if (game.contains("d_base")) config.market.d_base = game.at("d_base").get<double>();
      config.market.alpha_range = range("alpha_range", config.market.alpha_range);
      config.market.beta_range = range("beta_range", config.market.beta_range);
      config.market.b_range = range("b_range", config.market.b_range);
      if (game.contains("n_players"))
        config.market.n_players = game.at("n_players").get<int>();
    } else {
      throw ConfigError("game: unknown generator '" + config.generator + "'");
    }
  } else if (game.contains("spec")) {
    check_keys(game, {"spec"}, "game");
    config.inline_spec = game_from_json(game.at("spec"));
  } else {
    throw ConfigError("game: needs 'generator' or 'spec'");
  }

  if (j.contains("brd")) {
    const Json& b = j.at("brd");
    check_keys(b,
               {"eta", "stages_per_update", "horizon", "gamma", "stop_rel_tol",
                "max_updates", "exact_fir", "structure", "seed", "threads"},
               "brd");
    auto& c = config.brd;
    if (b.contains("eta")) c.eta = b.at("eta").get<double>();
    if (b.contains("stages_per_update"))
      c.stages_per_update = b.at("stages_per_update").get<int>();
    if (b.contains("horizon")) c.horizon = b.at("horizon").get<int>();
    if (b.contains("gamma")) c.gamma = b.at("gamma").get<double>();
    if (b.contains("stop_rel_tol")) c.stop_rel_tol = b.at("stop_rel_tol").get<double>();
    if (b.contains("max_updates")) c.max_updates = b.at("max_updates").get<int>();
    if (b.contains("exact_fir")) c.exact_fir = b.at("exact_fir").get<bool>();
    if (b.contains("structure")) c.use_structure = b.at("structure").get<bool>();
    if (b.contains("seed")) c.rng_seed = b.at("seed").get<std::uint64_t>();
    if (b.contains("threads")) c.threads = b.at("threads").get<int>();
  }

  if (j.contains("simulation")) {
    const Json& s = j.at("simulation");
    check_keys(s, {"stages", "noise", "impulse_index", "x0", "window"}, "simulation");
    auto& sim = config.simulation;
    if (s.contains("stages")) sim.stages = s.at("stages").get<int>();
    if (s.contains("noise")) sim.noise = s.at("noise").get<std::string>();
    if (s.contains("impulse_index"))
      sim.impulse_index = s.at("impulse_index").get<int>();
    if (s.contains("x0")) sim.x0 = vector_from_json(s.at("x0"), "x0");
    if (s.contains("window")) {
      const auto w = s.at("window").get<std::vector<int>>();
      if (w.size() != 2) throw ConfigError("simulation: window needs two stages");
      sim.window_start = w[0];
      sim.window_end = w[1];
    }
  }
  if (j.contains("reference")) config.reference = j.at("reference").get<std::string>();
  if (config.reference != "none" && config.reference != "dpg" &&
      config.reference != "last")
    throw ConfigError("config: reference must be none, dpg or last");
  if (j.contains("output_dir")) config.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
  return config;
}

Json run_config_to_json(const RunConfig& config) {
  Json j;
  Json game;
  if (config.generator == "chain") {
    game["generator"] = "chain";
    game["n_nodes"] = config.chain_nodes;
    game["betas"] = config.chain_betas;
  } else if (config.generator == "market") {
    game["generator"] = "market";
    game["seed"] = config.market.seed;
    game["tau"] = config.market.tau;
    game["dt"] = config.market.dt;
    game["u_avg"] = config.market.u_avg;
    game["d_base"] = config.market.d_base;
    game["alpha_range"] = {config.market.alpha_range.first, config.market.alpha_range.second};
    game["beta_range"] = {config.market.beta_range.first, config.market.beta_range.second};
    game["b_range"] = {config.market.b_range.first, config.market.b_range.second};
    game["n_players"] = config.market.n_players;
  } else if (config.inline_spec) {
    game["spec"] = game_to_json(*config.inline_spec);
  }
  j["game"] = std::move(game);
  j["brd"] = {{"eta", config.brd.eta},
              {"stages_per_update", config.brd.stages_per_update},
              {"horizon", config.brd.horizon},
              {"gamma", config.brd.gamma},
              {"stop_rel_tol", config.brd.stop_rel_tol},
              {"max_updates", config.brd.max_updates},
              {"exact_fir", config.brd.exact_fir},
              {"structure", config.brd.use_structure},
              {"seed", config.brd.rng_seed},
              {"threads", config.brd.threads}};
  Json sim;
  sim["stages"] = config.simulation.stages;
  sim["noise"] = config.simulation.noise;
  if (config.simulation.noise == "impulse")
    sim["impulse_index"] = config.simulation.impulse_index;
  if (config.simulation.x0.size() > 0) sim["x0"] = vector_to_json(config.simulation.x0);
  if (config.simulation.window_start >= 0)
    sim["window"] = {config.simulation.window_start, config.simulation.window_end};
  j["simulation"] = std::move(sim);
  j["reference"] = config.reference;
  j["output_dir"] = config.output_dir;
  j["seed"] = config.seed;
  return j;
}

RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(load_json_file(path));
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for writing: " + path);
  f << contents;
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Json load_json_file(const std::string& path) {
  try {
    return Json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& err) {
    throw ConfigError(path + ": " + err.what());
  }
}

std::string convergence_csv(const IterationLog& log) {
  std::ostringstream out;
  out << "update,stage,player,rel_update,update_distance,br_distance,phi_x_rel_gap,"
         "objective,eps_gap,terminal_sq,reference_distance,solver_iterations,"
         "solver_status,solver_residual,coupled_active\n";
  for (const auto& r : log.rows) {
    out << r.update << ',' << r.stage << ',' << r.player + 1 << ','
        << format_double(r.rel_update) << ',' << format_double(r.update_distance) << ','
        << format_double(r.br_distance) << ',' << format_double(r.phi_x_rel_gap) << ','
        << format_double(r.objective) << ',' << format_double(r.eps_gap) << ','
        << format_double(r.terminal_sq) << ','
        << format_double(r.reference_distance) << ',' << r.solver_iterations << ','
        << r.solver_status << ',' << format_double(r.solver_residual) << ','
        << (r.coupled_active ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string trajectory_csv(const GameSpec& spec, const Trajectory& traj,
                           std::uint64_t seed, int t_begin, int t_end) {
  std::ostringstream out;
  out << "# seed=" << seed << '\n';
  out << "t";
  for (int i = 0; i < spec.state_dim; ++i) out << ",x_" << i + 1;
  for (int p = 0; p < spec.n_players; ++p)
    for (int i = 0; i < spec.input_dims[p]; ++i) out << ",u" << p + 1 << "_" << i + 1;
  for (int p = 0; p < spec.n_players; ++p) out << ",cost" << p + 1;
  out << '\n';
  const int hi = t_end < 0 ? traj.stages() : std::min(t_end, traj.stages());
  for (int t = std::max(0, t_begin); t < hi; ++t) {
    out << t;
    for (int i = 0; i < spec.state_dim; ++i) out << ',' << format_double(traj.x[t](i));
    for (int p = 0; p < spec.n_players; ++p)
      for (int i = 0; i < spec.input_dims[p]; ++i)
        out << ',' << format_double(traj.u[t][p](i));
    for (int p = 0; p < spec.n_players; ++p)
      out << ',' << format_double(traj.stage_costs[t][p]);
    out << '\n';
  }
  return out.str();
}

}  // namespace sls
