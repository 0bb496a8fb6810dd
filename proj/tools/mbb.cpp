#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mbb/dual.hpp"
#include "mbb/errors.hpp"
#include "mbb/experiment.hpp"
#include "mbb/fpe.hpp"
#include "mbb/interpolation.hpp"
#include "mbb/measures.hpp"
#include "mbb/motlp.hpp"
#include "mbb/primal.hpp"
#include "mbb/relaxation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mbb;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  std::string out;
  double tol = 0.0;
  int parallel = 1;
};

void emit(const std::string& path, const json& j) {
  if (path.empty()) {
    std::cout << j.dump(1) << '\n';
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream os(path);
  if (!os) throw InvalidArgument("cannot write " + path);
  os << j.dump(1) << '\n';
}

template <class F>
void emit_text(const std::string& path, F&& fill) {
  if (path.empty()) return;
  std::ofstream os(path);
  if (!os) throw InvalidArgument("cannot write " + path);
  fill(os);
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

// "key=value" with the value read as JSON when it parses, as a string otherwise.
std::pair<std::string, json> parse_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--param expects key=value, got '" + s + "'");
  const std::string value = s.substr(eq + 1);
  json v = json::parse(value, nullptr, false);
  if (v.is_discarded()) v = value;
  return {s.substr(0, eq), v};
}

std::vector<std::string> manifest_paths(const std::vector<std::string>& inputs) {
  std::vector<std::string> out;
  for (const auto& in : inputs) {
    if (!fs::is_directory(in)) {
      out.push_back(in);
      continue;
    }
    std::vector<std::string> found;
    for (const auto& e : fs::recursive_directory_iterator(in)) {
      if (e.is_regular_file() && e.path().filename() == "manifest.json") found.push_back(e.path().string());
    }
    std::sort(found.begin(), found.end());
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Martingale Benamou-Brenier toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out", g.out, "Output file, or directory for experiment");
  app.add_option("--tol", g.tol, "Solver tolerance (0 keeps the default)")->check(CLI::NonNegativeNumber);
  app.add_option("--parallel", g.parallel, "Experiments run concurrently")->check(CLI::PositiveNumber);
  int code = 0;

  // mot-lp
  auto* motlp = app.add_subcommand("mot-lp", "Martingale optimal transport linear program");
  std::string mu_path, nu_path, cost_spec = "power2";
  motlp->add_option("--mu", mu_path, "Source measure (.json or .csv)")->required();
  motlp->add_option("--nu", nu_path, "Target measure (.json or .csv)")->required();
  motlp->add_option("--cost", cost_spec, "power<K> | abs | table.csv");
  motlp->callback([&] {
    const auto mu = load_measure(mu_path);
    const auto nu = load_measure(nu_path);
    LpOptions o;
    if (g.tol > 0.0) o.feasibility_tol = g.tol;
    emit(g.out, to_json(solve_mot_lp(mu, nu, pair_cost(cost_spec, mu.grid(), nu.grid()), o)));
  });

  // fpe
  auto* fpe = app.add_subcommand("fpe", "Fokker-Planck solve for a given diffusion");
  std::string field_path, mu0_path, scheme = "implicit", csv_path;
  int fpe_steps = 100;
  double t_end = 1.0;
  fpe->add_option("--a", field_path, "Diffusion field JSON, or sin:A / const:v")->required();
  fpe->add_option("--mu0", mu0_path, "Initial measure")->required();
  fpe->add_option("--scheme", scheme, "implicit | explicit")->check(CLI::IsMember({"implicit", "explicit"}));
  fpe->add_option("--steps", fpe_steps, "Time steps")->check(CLI::PositiveNumber);
  fpe->add_option("--t-end", t_end, "Final time");
  fpe->add_option("--csv", csv_path, "Also write (t, x, value) CSV");
  fpe->callback([&] {
    FpeOptions o;
    o.scheme = scheme == "implicit" ? FpeScheme::Implicit : FpeScheme::Explicit;
    o.n_steps = fpe_steps;
    o.t_end = t_end;
    const auto mu0 = load_measure(mu0_path);
    const MeasureCurve c = fs::exists(field_path) ? solve_fpe(mu0, diffusion_from_json(load_json(field_path)), o)
                                                  : solve_fpe(mu0, named_field(field_path), o);
    emit(g.out, to_json(c));
    emit_text(csv_path, [&](std::ostream& os) { write_csv(os, c); });
  });

  // primal
  auto* primal = app.add_subcommand("primal", "Discretized dynamic primal problem");
  double p = 2.0, lambda = 1.0;
  int n_t = 100, max_iter = 200;
  std::string log_path;
  primal->add_option("--mu", mu_path)->required();
  primal->add_option("--nu", nu_path)->required();
  primal->add_option("--p", p, "Cost exponent");
  primal->add_option("--lambda", lambda, "Cost coefficient");
  primal->add_option("--nt", n_t, "Time steps");
  primal->add_option("--max-iter", max_iter, "Interior-point iterations");
  primal->add_option("--log", log_path, "Iteration log CSV");
  primal->add_option("--csv", csv_path, "Density (t, x, value) CSV");
  primal->callback([&] {
    PrimalOptions o;
    if (g.tol > 0.0) o.tol = g.tol;
    o.max_iterations = max_iter;
    const auto sol = solve_primal({load_measure(mu_path), load_measure(nu_path), CostSpec::power(p, lambda), n_t}, o);
    emit(g.out, to_json(sol));
    emit_text(log_path, [&](std::ostream& os) { write_log_csv(os, sol.log); });
    emit_text(csv_path, [&](std::ostream& os) { write_csv(os, sol.rho); });
  });

  // dual-pme
  auto* pme = app.add_subcommand("dual-pme", "Backward porous medium equation and its potential");
  double q = 2.0, half_width = 1.0;
  int pme_steps = 200, nodes = 201;
  std::string u1_path;
  bool giant = false;
  double pme_t_end = 0.0;
  pme->add_option("--q", q, "PME exponent");
  pme->add_option("--u1", u1_path, "Terminal data: JSON array of nodal values on [-r, r]");
  pme->add_flag("--giant", giant, "Use the friendly giant at --t-end as terminal data (r = 1)");
  pme->add_option("--r", half_width, "Half width of the domain");
  pme->add_option("--nodes", nodes, "Nodes for --giant")->check(CLI::Range(5, 1000000));
  pme->add_option("--steps", pme_steps, "Time steps")->check(CLI::PositiveNumber);
  pme->add_option("--t-end", pme_t_end, "Time of the terminal data (default 1, or 0.9 with --giant)");
  pme->add_option("--csv", csv_path, "u as (t, x, value) CSV");
  pme->callback([&] {
    std::vector<double> u1;
    if (pme_t_end <= 0.0) pme_t_end = giant ? 0.9 : 1.0;
    if (giant) {
      half_width = 1.0;
      u1 = giant_solution(friendly_giant_profile(q, nodes), {pme_t_end}).u.front();
    } else {
      if (u1_path.empty()) throw InvalidArgument("dual-pme: give --u1 or --giant");
      u1 = load_json(u1_path).get<std::vector<double>>();
    }
    PmeOptions o;
    o.n_steps = pme_steps;
    o.t_end = pme_t_end;
    const auto sol = solve_backward_pme(u1, q, half_width, o);
    const auto phi = potential_from_u(sol);
    const CostSpec cost = CostSpec::pme_dual_from_q(q);
    emit(g.out, {{"pme", to_json(sol)},
                 {"potential", to_json(phi)},
                 {"hjb_residual", hjb_residual(phi, sol, cost)},
                 {"scheme_residual", pme_scheme_residual(sol, pme_t_end)}});
    emit_text(csv_path, [&](std::ostream& os) { write_csv(os, DiffusionField(sol.times, sol.grid, sol.u)); });
  });

  // duality
  auto* duality = app.add_subcommand("duality", "Weak duality gap of a potential against a primal solution");
  std::string primal_path, potential_spec;
  double tol_super = 1e-6;
  duality->add_option("--primal", primal_path, "Primal solution JSON")->required();
  duality->add_option("--potential", potential_spec, "gaussian:Q or a potential JSON")->required();
  duality->add_option("--p", p, "Cost exponent");
  duality->add_option("--lambda", lambda, "Cost coefficient");
  duality->add_option("--tol-super", tol_super, "Allowed super-solution violation");
  duality->callback([&] {
    const auto sol = primal_from_json(load_json(primal_path));
    const CostSpec cost = CostSpec::power(p, lambda);
    PotentialFn phi;
    if (potential_spec.rfind("gaussian:", 0) == 0) {
      phi = gaussian_potential(cost, std::stod(potential_spec.substr(9)));
    } else {
      phi = interpolate(potential_from_json(load_json(potential_spec)));
    }
    const auto rep = weak_duality_gap(phi, sol.rho, sol.value, cost, tol_super);
    emit(g.out, to_json(rep));
    if (rep.gap < -(g.tol > 0.0 ? g.tol : 1e-6) * (1.0 + std::abs(rep.primal_value))) code = 1;
  });

  // dacmoser
  auto* dm = app.add_subcommand("dacmoser", "Dacorogna-Moser interpolation and its cost");
  dm->add_option("--mu", mu_path)->required();
  dm->add_option("--nu", nu_path)->required();
  dm->add_option("--p", p, "Cost exponent");
  dm->add_option("--nt", n_t, "Time nodes of the CSV output");
  dm->add_option("--csv", csv_path, "Density (t, x, value) CSV");
  dm->callback([&] {
    const auto plan = dacorogna_moser(load_measure(mu_path), load_measure(nu_path));
    emit(g.out, {{"plan", to_json(plan)}, {"cost", to_json(dacmoser_cost(plan, p))}});
    emit_text(csv_path, [&](std::ostream& os) { write_csv(os, plan.curve(n_t)); });
  });

  // strassen
  auto* st = app.add_subcommand("strassen", "Martingale coupling from a mollified Dacorogna-Moser flow");
  StrassenOptions so;
  st->add_option("--mu", mu_path)->required();
  st->add_option("--nu", nu_path)->required();
  st->add_option("--epsilon", so.epsilon, "Mollifier standard deviation");
  st->add_option("--paths", so.n_paths, "Monte-Carlo paths")->check(CLI::PositiveNumber);
  st->add_option("--steps", so.n_steps, "Time steps")->check(CLI::PositiveNumber);
  st->callback([&] {
    so.seed = g.seed;
    emit(g.out, to_json(strassen_coupling(load_measure(mu_path), load_measure(nu_path), so)));
  });

  // relax
  auto* rx = app.add_subcommand("relax", "Discrete cumulative costs against their smeared limit");
  std::string field = "sin:0.5", point = "pow4", mode = "plain";
  double power_p = 2.0, tol_scheme = 0.02;
  SdeOptions sde;
  sde.n_records = 128;
  std::vector<double> meshes{0.25, 0.0625, 0.015625};
  rx->add_option("--field", field, "sin:A | const:v");
  rx->add_option("--cost", point, "pow2 | pow3 | pow4 | abs | pow<K>");
  rx->add_option("--mode", mode, "plain | power")->check(CLI::IsMember({"plain", "power"}));
  rx->add_option("--power-p", power_p, "p of the power mode");
  rx->add_option("--paths", sde.n_paths, "Monte-Carlo paths")->check(CLI::PositiveNumber);
  rx->add_option("--dt", sde.dt, "Euler step");
  rx->add_option("--records", sde.n_records, "Recorded intervals")->check(CLI::PositiveNumber);
  rx->add_option("--meshes", meshes, "Partition meshes 1/n");
  rx->add_option("--tol-scheme", tol_scheme, "Scheme tolerance at the finest mesh");
  rx->add_option("--csv", csv_path, "Convergence table CSV");
  rx->callback([&] {
    sde.seed = g.seed;
    const Grid1D grid = Grid1D::symmetric(1.0, 21);
    const auto ens = simulate_sde(DiscreteMeasure::dirac(grid, 0.0), named_field(field), sde);
    const auto table = relaxation_convergence(ens, meshes, point_cost(point),
                                              mode == "plain" ? RelaxMode::Plain : RelaxMode::PowerOneOverP, power_p,
                                              tol_scheme);
    emit(g.out, to_json(table));
    emit_text(csv_path, [&](std::ostream& os) { write_csv(os, table); });
    if (!table.passed()) code = 1;
  });

  // skorokhod
  auto* sk = app.add_subcommand("skorokhod", "Azema-Yor embedding with the time change");
  EmbeddingOptions eo;
  sk->add_option("--mu", mu_path)->required();
  sk->add_option("--nu", nu_path)->required();
  sk->add_option("--p", eo.p, "Cost exponent");
  sk->add_option("--q-mom", eo.q_mom, "Moment of nu assumed finite");
  sk->add_option("--r", eo.r, "Time-change exponent (0: the largest admissible)");
  sk->add_option("--paths", eo.n_paths, "Paths")->check(CLI::PositiveNumber);
  sk->add_option("--refinement", eo.lattice_refinement, "Walk steps per grid cell")->check(CLI::PositiveNumber);
  sk->add_option("--csv", csv_path, "Per-path start, tau, stopped, cost");
  sk->callback([&] {
    eo.seed = g.seed;
    const auto run = skorokhod_time_change(load_measure(mu_path), load_measure(nu_path), eo);
    emit(g.out, to_json(run));
    emit_text(csv_path, [&](std::ostream& os) {
      os << "start,tau,stopped,cost\n";
      os.precision(17);
      for (std::size_t i = 0; i < run.tau.size(); ++i) {
        os << run.start[i] << ',' << run.tau[i] << ',' << run.stopped[i] << ',' << run.cost[i] << '\n';
      }
    });
  });

  // experiment
  auto* ex = app.add_subcommand("experiment", "Run named experiments and write manifests");
  std::vector<std::string> names, config_paths, assignments;
  ex->add_option("names", names, "Experiment names")->check(CLI::IsMember(experiment_names()));
  ex->add_option("--config", config_paths, "Config JSON files");
  ex->add_option("--param", assignments, "key=value applied to every named experiment");
  ex->callback([&] {
    std::vector<ExperimentConfig> configs;
    const std::string out = g.out.empty() ? "results" : g.out;
    for (const auto& path : config_paths) {
      json j = load_json(path);
      if (app.count("--seed") > 0 || !j.contains("seed")) j["seed"] = g.seed;
      if (app.count("--out") > 0 || !j.contains("out")) j["out"] = out;
      configs.push_back(parse_config(j));
    }
    for (const auto& name : names) {
      json j = {{"experiment", name}, {"seed", g.seed}, {"out", out}, {"params", json::object()}};
      for (const auto& a : assignments) {
        const auto [k, v] = parse_assignment(a);
        j["params"][k] = v;
      }
      if (g.tol > 0.0 && default_params(name).contains("solver_tol")) j["params"]["solver_tol"] = g.tol;
      configs.push_back(parse_config(j));
    }
    if (configs.empty()) throw ConfigError("experiment: give at least one name or --config");
    const auto manifests = run_experiments(configs, g.parallel);
    std::cout << report(manifests).text;
    code = exit_code(manifests);
  });

  // report
  auto* rp = app.add_subcommand("report", "Summarize manifests");
  std::vector<std::string> inputs;
  std::string report_json;
  rp->add_option("manifests", inputs, "Manifest files or run directories")->required();
  rp->add_option("--json", report_json, "Write the JSON summary here");
  rp->callback([&] {
    std::vector<RunManifest> ms;
    for (const auto& path : manifest_paths(inputs)) ms.push_back(load_manifest(path));
    const auto rep = report(ms);
    std::cout << rep.text;
    if (!report_json.empty()) emit(report_json, rep.json);
    if (!g.out.empty()) emit_text(g.out, [&](std::ostream& os) { os << rep.text; });
    code = exit_code(ms);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const GridMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NonConvergence& e) {
    std::cerr << "non-convergence: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "check failed: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
