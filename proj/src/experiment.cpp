#include "mbb/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "mbb/costs.hpp"
#include "mbb/dual.hpp"
#include "mbb/errors.hpp"
#include "mbb/fpe.hpp"
#include "mbb/interpolation.hpp"
#include "mbb/measures.hpp"
#include "mbb/motlp.hpp"
#include "mbb/primal.hpp"
#include "mbb/relaxation.hpp"

namespace mbb {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::map<std::string, json>& schema() {
  static const std::map<std::string, json> s = {
      {"gaussian",
       {{"p", 2.0},
        {"Q", 1.0},
        {"n_cells", 200},
        {"n_t", 100},
        {"half_width", 8.0},
        {"initial_variance", 0.05},
        {"solver_tol", 1e-6},
        {"value_tol", 0.0},
        {"gap_tol", 0.07},
        {"super_tol", 1e-6},
        {"property_checks", true},
        {"geodesic_tol", 0.07},
        {"sigma_variance", 0.3}}},
      {"dacmoser",
       {{"p", 2.0},
        {"n_cells", 500},
        {"half_width", 10.0},
        {"variance_0", 1.0},
        {"variance_1", 2.0},
        {"n_t", 100},
        {"f0_tol", 0.002},
        {"residual_tol", 1e-3},
        {"mp_tol", 1e-10}}},
      {"giant",
       {{"q", 2.0},
        {"profile_nodes", 2001},
        {"profile_tol", 1e-8},
        {"scheme_dt", 1e-4},
        {"t_max", 0.9},
        {"scheme_tol", 1e-2},
        {"n_cells", 1201},
        {"n_steps", 2000},
        {"initial_variance", 0.01},
        {"t_stop", 0.99},
        {"mass_tol", 0.95},
        {"mean_tol", 1e-6}}},
      {"relax",
       {{"field", "sin"},
        {"field_value", 0.5},
        {"cost", "pow4"},
        {"mode", "plain"},
        {"power_p", 2.0},
        {"n_paths", 100000},
        {"dt", 1e-3},
        {"n_records", 128},
        {"meshes", {0.25, 0.0625, 0.015625}},
        {"tol_scheme", 0.02},
        {"martingale_bins", 5},
        {"martingale_tol", 5.0},
        {"embed_paths", 100000},
        {"embed_p", 2.0},
        {"embed_q_mom", 5.0},
        {"w1_tol", 0.02}}},
      {"strassen",
       {{"epsilon", 0.05},
        {"n_paths", 100000},
        {"n_steps", 200},
        {"w1_tol", 0.1},
        {"defect_tol", 0.05},
        {"lp_tol", 1e-9}}},
      {"duality-sweep",
       {{"ps", {2.0, 3.0}},
        {"Qs", {0.5, 1.0}},
        {"n_cells", 100},
        {"n_t", 40},
        {"half_width", 8.0},
        {"initial_variance", 0.05},
        {"solver_tol", 1e-6},
        {"value_tol", 0.07},
        {"weak_tol", 1e-3}}},
  };
  return s;
}

[[noreturn]] void config_error(const std::string& msg) { throw ConfigError("config: " + msg); }

bool same_kind(const json& def, const json& v) {
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_array()) {
    if (!v.is_array() || v.empty()) return false;
    return std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); });
  }
  return def.type() == v.type();
}

double num(const json& p, const char* k) { return p.at(k).get<double>(); }
int integer(const json& p, const char* k) { return p.at(k).get<int>(); }
std::vector<double> numbers(const json& p, const char* k) { return p.at(k).get<std::vector<double>>(); }

void require(bool ok, const std::string& msg) {
  if (!ok) config_error(msg);
}

void validate_params(const std::string& name, const json& p) {
  auto positive = [&](const char* k) { require(num(p, k) > 0.0, std::string(k) + " must be positive"); };
  auto at_least = [&](const char* k, int lo) {
    require(integer(p, k) >= lo, std::string(k) + " must be >= " + std::to_string(lo));
  };
  if (name == "gaussian" || name == "duality-sweep") {
    if (name == "gaussian") {
      require(num(p, "p") > 1.0, "p must exceed 1");
      positive("Q");
      require(num(p, "value_tol") >= 0.0, "value_tol must be >= 0");
      for (const char* k : {"gap_tol", "super_tol", "geodesic_tol", "sigma_variance"}) positive(k);
    } else {
      for (double v : numbers(p, "ps")) require(v > 1.0, "every p must exceed 1");
      for (double v : numbers(p, "Qs")) require(v > 0.0, "every Q must be positive");
      positive("value_tol");
      positive("weak_tol");
    }
    at_least("n_cells", 3);
    at_least("n_t", 1);
    positive("half_width");
    positive("solver_tol");
    require(num(p, "initial_variance") >= 0.0, "initial_variance must be >= 0");
  } else if (name == "dacmoser") {
    require(num(p, "p") >= 1.0, "p must be >= 1");
    at_least("n_cells", 3);
    at_least("n_t", 1);
    positive("half_width");
    positive("variance_0");
    require(num(p, "variance_1") >= num(p, "variance_0"), "variance_1 must be >= variance_0");
    for (const char* k : {"f0_tol", "residual_tol", "mp_tol"}) positive(k);
  } else if (name == "giant") {
    require(num(p, "q") > 1.0, "q must exceed 1");
    at_least("profile_nodes", 5);
    at_least("n_cells", 5);
    at_least("n_steps", 1);
    for (const char* k : {"t_max", "t_stop"}) {
      require(num(p, k) > 0.0 && num(p, k) < 1.0, std::string(k) + " must lie in (0, 1)");
    }
    for (const char* k : {"profile_tol", "scheme_dt", "scheme_tol", "mass_tol", "mean_tol"}) positive(k);
    require(num(p, "initial_variance") >= 0.0, "initial_variance must be >= 0");
  } else if (name == "relax") {
    const auto field = p.at("field").get<std::string>();
    require(field == "sin" || field == "constant", "field must be 'sin' or 'constant'");
    positive("field_value");
    const auto mode = p.at("mode").get<std::string>();
    require(mode == "plain" || mode == "power", "mode must be 'plain' or 'power'");
    positive("power_p");
    try {
      point_cost(p.at("cost").get<std::string>());
    } catch (const InvalidArgument& e) {
      config_error(e.what());
    }
    at_least("n_paths", 2);
    at_least("n_records", 1);
    at_least("martingale_bins", 1);
    at_least("embed_paths", 0);
    positive("dt");
    for (double m : numbers(p, "meshes")) {
      const double n = std::round(1.0 / m);
      require(m > 0.0 && std::abs(1.0 / m - n) <= 1e-9 / m, "meshes must be of the form 1/n");
    }
    require(num(p, "embed_p") > 1.0, "embed_p must exceed 1");
    require(num(p, "embed_q_mom") > 2.0 * num(p, "embed_p"), "embed_q_mom must exceed 2 embed_p");
    for (const char* k : {"tol_scheme", "martingale_tol", "w1_tol"}) positive(k);
  } else if (name == "strassen") {
    at_least("n_paths", 2);
    at_least("n_steps", 1);
    for (const char* k : {"epsilon", "w1_tol", "defect_tol", "lp_tol"}) positive(k);
  }
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

const char* status_name(RunStatus s) {
  switch (s) {
    case RunStatus::Completed:
      return "completed";
    case RunStatus::SolverError:
      return "solver_error";
    case RunStatus::NonConvergence:
      return "non_convergence";
  }
  return "completed";
}

RunStatus status_from(const std::string& s) {
  if (s == "completed") return RunStatus::Completed;
  if (s == "solver_error") return RunStatus::SolverError;
  if (s == "non_convergence") return RunStatus::NonConvergence;
  throw InvalidArgument("manifest: unknown status '" + s + "'");
}

double json_number(const json& v) {
  return v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

// Writes artifacts of one run; a no-op without an output directory.
class Sink {
 public:
  Sink(RunManifest& m, const std::string& out, const std::string& experiment) : m_(m) {
    if (!out.empty()) {
      dir_ = fs::path(out) / experiment;
      fs::create_directories(dir_);
    }
  }

  bool enabled() const { return !dir_.empty(); }
  const fs::path& dir() const { return dir_; }

  void json_file(const std::string& name, const std::function<json()>& make) {
    if (!enabled()) return;
    write(name, [&](std::ostream& os) { os << make().dump(1) << '\n'; });
  }

  void write(const std::string& name, const std::function<void(std::ostream&)>& fill) {
    if (!enabled()) return;
    std::ofstream os(dir_ / name);
    if (!os) throw InvalidArgument("cannot write " + (dir_ / name).string());
    fill(os);
    m_.artifacts.push_back(name);
  }

 private:
  RunManifest& m_;
  fs::path dir_;
};

struct Run {
  const ExperimentConfig& cfg;
  RunManifest& m;
  Sink& sink;
  const json& p;

  void check(std::string name, double value, const std::string& relation, double tol) {
    m.checks.push_back(make_check(std::move(name), value, relation, tol));
  }
};

double interpolate_at(const Grid1D& g, const std::vector<double>& v, double x) {
  const double s = (x - g.center(0)) / g.h();
  const int j = std::clamp(static_cast<int>(std::floor(s)), 0, g.n_cells - 2);
  const double w = s - j;
  return (1.0 - w) * v[static_cast<std::size_t>(j)] + w * v[static_cast<std::size_t>(j + 1)];
}

PrimalProblem gaussian_instance(double p, double Q, int n_cells, int n_t, double half_width, double var0) {
  const Grid1D g(-half_width, half_width, n_cells);
  const auto mu = mollify(DiscreteMeasure::dirac(g, 0.0), var0);
  return {mu, mollify(mu, Q), CostSpec::power(p), n_t};
}

void run_gaussian(Run& r) {
  const double p = num(r.p, "p");
  const double Q = num(r.p, "Q");
  const auto prob = gaussian_instance(p, Q, integer(r.p, "n_cells"), integer(r.p, "n_t"), num(r.p, "half_width"),
                                      num(r.p, "initial_variance"));
  PrimalOptions po;
  po.tol = num(r.p, "solver_tol");
  const auto sol = solve_primal(prob, po);
  const double exact = std::pow(Q, p);
  const double value_tol = num(r.p, "value_tol") > 0.0 ? num(r.p, "value_tol") : (p == 2.0 ? 0.05 : 0.07);
  r.check("primal value relative error against Q^p", std::abs(sol.value / exact - 1.0), "<=", value_tol);
  r.check("interior-point gap relative to 1 + value", std::abs(sol.gap) / (1.0 + sol.value), "<=", 10.0 * po.tol);
  r.check("certified lower bound minus value", sol.certified_dual - sol.value, "<=", 1e-9 * (1.0 + sol.value));
  r.check("slice mass error", sol.mass_error, "<=", 1e-12);
  r.check("slice mean error", sol.mean_error, "<=", 1e-8);

  const auto dual = weak_duality_gap(gaussian_potential(prob.cost, Q), sol.rho, sol.value, prob.cost,
                                     num(r.p, "super_tol"));
  r.check("closed-form potential gap relative to value", dual.gap / sol.value, "<=", num(r.p, "gap_tol"));
  r.check("closed-form dual minus primal relative to value", -dual.gap / sol.value, "<=", 1e-3);
  r.m.results["primal"] = {{"value", sol.value},
                           {"dual_value", sol.dual_value},
                           {"gap", sol.gap},
                           {"certified_dual", sol.certified_dual},
                           {"iterations", sol.iterations},
                           {"closed_form_dual", dual.dual_value},
                           {"closed_form_gap", dual.gap}};

  if (r.p.at("property_checks").get<bool>()) {
    json geo = json::array();
    for (auto [s, t] : {std::pair{0.0, 0.5}, std::pair{0.25, 0.75}}) {
      const auto rep = geodesic_scaling_check(sol, prob, s, t, po);
      std::ostringstream name;
      name << "geodesic scaling deviation on [" << s << ", " << t << "]";
      r.check(name.str(), rep.deviation, "<=", num(r.p, "geodesic_tol"));
      geo.push_back({{"s", s}, {"t", t}, {"sub_value", rep.sub_value}, {"deviation", rep.deviation}});
    }
    const auto sigma = mollify(DiscreteMeasure::dirac(prob.mu.grid(), 0.0), num(r.p, "sigma_variance"));
    const auto con = convolution_contraction_check(prob, sigma, 0.05, po);
    r.check("convolution contraction excess", con.smoothed_value / con.value - 1.0, "<=", con.budget);
    r.m.results["geodesic"] = geo;
    r.m.results["contraction"] = {
        {"value", con.value}, {"smoothed_value", con.smoothed_value}, {"budget", con.budget}};
  }

  r.sink.json_file("primal.json", [&] { return to_json(sol); });
  r.sink.write("rho.csv", [&](std::ostream& os) { write_csv(os, sol.rho); });
  r.sink.write("a.csv", [&](std::ostream& os) { write_csv(os, sol.a); });
  r.sink.write("log.csv", [&](std::ostream& os) { write_log_csv(os, sol.log); });
  r.sink.json_file("duality.json", [&] { return to_json(dual); });
}

void run_dacmoser(Run& r) {
  const double hw = num(r.p, "half_width");
  const Grid1D g(-hw, hw, integer(r.p, "n_cells"));
  const double v0 = num(r.p, "variance_0");
  const double v1 = num(r.p, "variance_1");
  const auto plan = dacorogna_moser(DiscreteMeasure::gaussian(g, 0.0, v0), DiscreteMeasure::gaussian(g, 0.0, v1));
  const double f0 = interpolate_at(g, plan.f, 0.0);
  const double oracle = (std::sqrt(v1) - std::sqrt(v0)) / std::sqrt(2.0 * M_PI);
  r.check("f(0) against (sigma_1 - sigma_0) / sqrt(2 pi)", std::abs(f0 - oracle), "<=", num(r.p, "f0_tol"));

  const auto curve = plan.curve(integer(r.p, "n_t"));
  const auto a = plan.diffusion();
  const std::vector<std::pair<std::string, TestFunction>> tests = {{"1", TestFunction::constant()},
                                                                   {"x", TestFunction::linear()},
                                                                   {"x^2", TestFunction::quadratic()},
                                                                   {"bump", TestFunction::bump(0.5, 1.0)}};
  json residuals = json::object();
  for (const auto& [name, phi] : tests) {
    const double res = weak_residual(curve, a, phi);
    residuals[name] = res;
    r.check("weak FPE residual against " + name, res, "<=", num(r.p, "residual_tol"));
  }

  const auto cost = dacmoser_cost(plan, num(r.p, "p"));
  r.check("cost over the M_p bound", cost.bound > 0.0 ? cost.value / cost.bound : 0.0, "<=", 1.0);

  boost::math::quadrature::tanh_sinh<double> ts;
  json mp = json::array();
  for (auto [pp, u, v] : {std::tuple{3.0, 1.0, 2.0}, std::tuple{2.0, 1.0, 3.0}, std::tuple{1.5, 0.5, 2.0},
                          std::tuple{2.5, 2.0, 0.3}, std::tuple{4.0, 1.0, 1.0 + 1e-6}}) {
    const double quad =
        ts.integrate([&](double t) { return std::pow((1.0 - t) * u + t * v, 1.0 - pp); }, 0.0, 1.0);
    const double val = m_p(pp, u, v);
    std::ostringstream name;
    name << "M_p(" << pp << ", " << u << ", " << v << ") against quadrature";
    r.check(name.str(), std::abs(val - quad), "<=", num(r.p, "mp_tol"));
    mp.push_back({{"p", pp}, {"u", u}, {"v", v}, {"m_p", val}, {"quadrature", quad}});
  }
  r.check("M_p(3, 1, 2) against 1/2", std::abs(m_p(3.0, 1.0, 2.0) - 0.5), "<=", num(r.p, "mp_tol"));

  r.m.results = {{"f0", f0}, {"f0_oracle", oracle}, {"weak_residuals", residuals}, {"cost", to_json(cost)},
                 {"m_p", mp}};
  r.sink.json_file("plan.json", [&] { return to_json(plan); });
  r.sink.write("rho.csv", [&](std::ostream& os) { write_csv(os, curve); });
  r.sink.write("a.csv", [&](std::ostream& os) { write_csv(os, plan.field(integer(r.p, "n_t"))); });
}

void run_giant(Run& r) {
  const double q = num(r.p, "q");
  const auto prof = friendly_giant_profile(q, integer(r.p, "profile_nodes"));
  r.check("profile first-integral residual", prof.residual, "<=", num(r.p, "profile_tol"));

  const double t_max = num(r.p, "t_max");
  const double dt = num(r.p, "scheme_dt");
  std::vector<double> ts;
  const long n = std::lround(t_max / dt);
  for (long k = 0; k <= n; ++k) ts.push_back(k == n ? t_max : k * dt);
  const double scheme = pme_scheme_residual(giant_solution(prof, ts), t_max);
  r.check("separable solution backward scheme residual", scheme, "<=", num(r.p, "scheme_tol"));

  json runs = json::object();
  for (auto [label, conv] : {std::pair{"q u^(q-1)", PressureConvention::Literal},
                             std::pair{"2q u^(q-1)", PressureConvention::GradLegendre}}) {
    GiantTerminalOptions o;
    o.n_cells = integer(r.p, "n_cells");
    o.n_steps = integer(r.p, "n_steps");
    o.profile_nodes = integer(r.p, "profile_nodes");
    o.initial_variance = num(r.p, "initial_variance");
    o.convention = conv;
    const auto rep = giant_terminal_check(q, num(r.p, "t_stop"), o);
    const std::string tag = std::string(" with a = ") + label;
    r.check("mass within 0.1 of the endpoints" + tag, rep.mass_near_endpoints, ">=", num(r.p, "mass_tol"));
    r.check("largest |mean|" + tag, rep.max_abs_mean, "<=", num(r.p, "mean_tol"));
    runs[label] = {{"mass_near_endpoints", rep.mass_near_endpoints},
                   {"max_abs_mean", rep.max_abs_mean},
                   {"variance_end", rep.variance_end},
                   {"max_mass_error", rep.max_mass_error}};
  }
  r.m.results = {{"slope", prof.slope}, {"profile_residual", prof.residual}, {"scheme_residual", scheme},
                 {"terminal", runs}};

  r.sink.json_file("profile.json", [&] { return to_json(prof); });
  r.sink.write("u.csv", [&](std::ostream& os) {
    std::vector<double> coarse;
    for (int k = 0; k <= 9; ++k) coarse.push_back(0.1 * k * t_max / 0.9);
    const auto sol = giant_solution(prof, coarse);
    write_csv(os, DiffusionField(sol.times, sol.grid, sol.u));
  });
}

void run_relax(Run& r) {
  std::ostringstream spec;
  spec.precision(17);
  spec << (r.p.at("field").get<std::string>() == "sin" ? "sin:" : "const:") << num(r.p, "field_value");
  const DiffusionFn a = named_field(spec.str());
  SdeOptions o;
  o.n_paths = integer(r.p, "n_paths");
  o.dt = num(r.p, "dt");
  o.n_records = integer(r.p, "n_records");
  o.seed = r.cfg.seed;
  const auto ens = simulate_sde(DiscreteMeasure::dirac(Grid1D::symmetric(1.0, 21), 0.0), a, o);

  const auto meshes = numbers(r.p, "meshes");
  const RelaxMode mode = r.p.at("mode").get<std::string>() == "plain" ? RelaxMode::Plain : RelaxMode::PowerOneOverP;
  const double pp = num(r.p, "power_p");
  const auto table = relaxation_convergence(ens, meshes, point_cost(r.p.at("cost").get<std::string>()), mode, pp,
                                            num(r.p, "tol_scheme"));
  std::vector<ConvergenceRow> rows = table.rows;
  std::sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) { return x.mesh > y.mesh; });
  const auto& finest = rows.back();
  r.check("|LHS - RHS| at the finest mesh", finest.diff, "<=", std::max(3.0 * finest.se, table.tol_scheme));
  double excess = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    excess = std::max(excess, rows[i].diff - rows[i - 1].diff - 2.0 * std::max(rows[i].se, rows[i - 1].se));
  }
  if (rows.size() > 1) r.check("growth of |LHS - RHS| beyond 2 SE under refinement", excess, "<=", 0.0);

  const auto quad = relaxation_convergence(ens, {finest.mesh}, point_cost("pow2"));
  r.check("quadratic cost |LHS - RHS| in SE units", quad.rows[0].se > 0.0 ? quad.rows[0].diff / quad.rows[0].se : 0.0,
          "<=", 3.0);
  const auto mt = martingale_test(ens, Partition::uniform(static_cast<int>(std::lround(1.0 / rows.front().mesh))),
                                  integer(r.p, "martingale_bins"));
  r.check("largest binned increment mean in SE units", mt.max_ratio, "<=", num(r.p, "martingale_tol"));
  r.m.results = {{"convergence", to_json(table)},
                 {"quadratic", to_json(quad)},
                 {"martingale", {{"max_ratio", mt.max_ratio}, {"bins_tested", mt.bins_tested}}}};
  r.sink.write("convergence.csv", [&](std::ostream& os) { write_csv(os, table); });

  const int embed_paths = integer(r.p, "embed_paths");
  if (embed_paths > 0) {
    const Grid1D g(-2.05, 2.05, 41);
    EmbeddingOptions eo;
    eo.p = num(r.p, "embed_p");
    eo.q_mom = num(r.p, "embed_q_mom");
    eo.n_paths = embed_paths;
    eo.seed = r.cfg.seed;
    const auto run = skorokhod_time_change(DiscreteMeasure::dirac(g, 0.0),
                                           DiscreteMeasure::atoms(g, {{-1.0, 0.5}, {1.0, 0.5}}), eo);
    r.check("embedding E[tau] - 1 in SE units", std::abs(run.expected_tau.value - 1.0) / run.expected_tau.se, "<=",
            3.0);
    r.check("W1 of the stopped law to the target", run.stopped_w1, "<=", num(r.p, "w1_tol"));
    r.check("embedding cost stability ratio", run.stability_ratio, ">=", 0.8);
    r.check("embedding cost stability ratio", run.stability_ratio, "<=", 1.25);
    r.m.results["embedding"] = to_json(run);
  }
  r.sink.json_file("results.json", [&] { return r.m.results; });
}

void run_strassen(Run& r) {
  const Grid1D g = Grid1D::symmetric(1.5, 3);
  const auto mu = DiscreteMeasure::dirac(g, 0.0);
  const auto nu = DiscreteMeasure::atoms(g, {{-1.0, 0.5}, {1.0, 0.5}});
  StrassenOptions o;
  o.epsilon = num(r.p, "epsilon");
  o.n_paths = integer(r.p, "n_paths");
  o.n_steps = integer(r.p, "n_steps");
  o.seed = r.cfg.seed;
  const auto res = strassen_coupling(mu, nu, o);
  r.check("W1 of the source marginal", res.w1_source, "<=", num(r.p, "w1_tol"));
  r.check("W1 of the target marginal", res.w1_target, "<=", num(r.p, "w1_tol"));
  r.check("conditional mean defect", res.mean_defect, "<=", num(r.p, "defect_tol"));

  const auto lp = solve_mot_lp(mu, nu, [](double x, double y) { return (y - x) * (y - x); });
  const double tol = num(r.p, "lp_tol");
  r.check("LP mass on (0, -1) minus 1/2", std::abs(lp.at(1, 0) - 0.5), "<=", tol);
  r.check("LP mass on (0, 1) minus 1/2", std::abs(lp.at(1, 2) - 0.5), "<=", tol);
  r.check("LP value minus 1", std::abs(lp.value - 1.0), "<=", tol);
  r.check("LP martingale residual", lp.martingale_residual, "<=", tol);
  r.m.results = {{"strassen", to_json(res)}, {"lp", to_json(lp)}};
  r.sink.json_file("strassen.json", [&] { return to_json(res); });
  r.sink.json_file("coupling.json", [&] { return to_json(lp); });
}

void run_duality_sweep(Run& r) {
  PrimalOptions po;
  po.tol = num(r.p, "solver_tol");
  json rows = json::array();
  for (double p : numbers(r.p, "ps")) {
    for (double Q : numbers(r.p, "Qs")) {
      const auto prob = gaussian_instance(p, Q, integer(r.p, "n_cells"), integer(r.p, "n_t"), num(r.p, "half_width"),
                                          num(r.p, "initial_variance"));
      const auto sol = solve_primal(prob, po);
      const auto dual = weak_duality_gap(gaussian_potential(prob.cost, Q), sol.rho, sol.value, prob.cost, 1e-6);
      const double dm = dacmoser_cost(dacorogna_moser(prob.mu, prob.nu), p).value;
      std::ostringstream tag;
      tag << " (p = " << p << ", Q = " << Q << ")";
      r.check("primal value relative error against Q^p" + tag.str(), std::abs(sol.value / std::pow(Q, p) - 1.0), "<=",
              num(r.p, "value_tol"));
      r.check("certified lower bound minus value" + tag.str(), sol.certified_dual - sol.value, "<=",
              1e-9 * (1.0 + sol.value));
      r.check("closed-form dual minus primal relative to value" + tag.str(), -dual.gap / sol.value, "<=",
              num(r.p, "weak_tol"));
      r.check("primal over Dacorogna-Moser cost" + tag.str(), sol.value / dm, "<=", 1.0 + 1e-6);
      rows.push_back({{"p", p},
                      {"Q", Q},
                      {"value", sol.value},
                      {"dual_value", sol.dual_value},
                      {"certified_dual", sol.certified_dual},
                      {"closed_form_dual", dual.dual_value},
                      {"dacmoser_cost", dm}});
    }
  }
  r.m.results["sweep"] = rows;
  r.sink.write("sweep.csv", [&](std::ostream& os) {
    os << "p,Q,value,dual_value,certified_dual,closed_form_dual,dacmoser_cost\n";
    os.precision(12);
    for (const auto& row : rows) {
      os << row["p"].get<double>() << ',' << row["Q"].get<double>() << ',' << row["value"].get<double>() << ','
         << row["dual_value"].get<double>() << ',' << row["certified_dual"].get<double>() << ','
         << row["closed_form_dual"].get<double>() << ',' << row["dacmoser_cost"].get<double>() << '\n';
    }
  });
}

std::mutex& journal_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"gaussian", "dacmoser", "giant", "relax", "strassen",
                                                 "duality-sweep"};
  return names;
}

json default_params(const std::string& experiment) {
  const auto it = schema().find(experiment);
  if (it == schema().end()) config_error("unknown experiment '" + experiment + "'");
  return it->second;
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) config_error("top level must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key != "experiment" && key != "seed" && key != "out" && key != "params") {
      config_error("unknown key '" + key + "'");
    }
  }
  if (!j.contains("experiment") || !j["experiment"].is_string()) config_error("'experiment' must be a string");
  ExperimentConfig c;
  c.experiment = j["experiment"].get<std::string>();
  c.params = default_params(c.experiment);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) config_error("'seed' must be a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("out")) {
    if (!j["out"].is_string()) config_error("'out' must be a string");
    c.out_dir = j["out"].get<std::string>();
  }
  if (j.contains("params")) {
    if (!j["params"].is_object()) config_error("'params' must be an object");
    for (const auto& [key, value] : j["params"].items()) {
      if (!c.params.contains(key)) config_error("unknown parameter '" + key + "' for " + c.experiment);
      if (!same_kind(c.params[key], value)) config_error("parameter '" + key + "' has the wrong type");
      c.params[key] = value;
    }
  }
  validate_params(c.experiment, c.params);
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j = {{"experiment", c.experiment}, {"seed", c.seed}, {"params", c.params}};
  if (!c.out_dir.empty()) j["out"] = c.out_dir;
  return j;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& c) {
  ExperimentConfig canon = c;
  canon.out_dir.clear();
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(to_json(canon).dump());
  return os.str();
}

Check make_check(std::string name, double value, std::string relation, double tolerance) {
  if (relation != "<=" && relation != ">=") throw InvalidArgument("check relation must be <= or >=");
  Check c;
  c.passed = relation == "<=" ? value <= tolerance : value >= tolerance;
  c.name = std::move(name);
  c.value = value;
  c.relation = std::move(relation);
  c.tolerance = tolerance;
  return c;
}

bool RunManifest::passed() const {
  return status == RunStatus::Completed &&
         std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

RunManifest run_experiment(const ExperimentConfig& cfg) {
  const ExperimentConfig c = parse_config(to_json(cfg));
  RunManifest m;
  m.experiment = c.experiment;
  m.config_hash = config_hash(c);
  m.config = to_json(c);
  m.config.erase("out");
  m.started_at = utc_now();
  const auto t0 = std::chrono::steady_clock::now();

  Sink sink(m, c.out_dir, c.experiment);
  Run run{c, m, sink, c.params};
  static const std::map<std::string, std::function<void(Run&)>> pipelines = {
      {"gaussian", run_gaussian}, {"dacmoser", run_dacmoser}, {"giant", run_giant},
      {"relax", run_relax},       {"strassen", run_strassen}, {"duality-sweep", run_duality_sweep}};
  try {
    pipelines.at(c.experiment)(run);
  } catch (const NonConvergence& e) {
    m.status = RunStatus::NonConvergence;
    m.error = e.what();
  } catch (const std::exception& e) {
    m.status = RunStatus::SolverError;
    m.error = e.what();
  }
  if (m.status != RunStatus::Completed) {
    m.checks.push_back(make_check("error: " + m.error, std::numeric_limits<double>::quiet_NaN(), "<=", 0.0));
  }

  m.finished_at = utc_now();
  m.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (sink.enabled()) {
    std::ofstream(sink.dir() / "manifest.json") << to_json(m).dump(1) << '\n';
    std::lock_guard<std::mutex> lock(journal_mutex());
    std::ofstream(fs::path(c.out_dir) / "manifests.jsonl", std::ios::app) << to_json(m).dump() << '\n';
  }
  return m;
}

std::vector<RunManifest> run_experiments(const std::vector<ExperimentConfig>& configs, int parallel) {
  for (const auto& c : configs) parse_config(to_json(c));
  std::vector<RunManifest> out(configs.size());
  const int workers = std::clamp(parallel, 1, std::max(1, static_cast<int>(configs.size())));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) out[i] = run_experiment(configs[i]);
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return out;
}

json to_json(const RunManifest& m, bool with_timestamps) {
  json checks = json::array();
  for (const auto& c : m.checks) {
    checks.push_back({{"name", c.name},
                      {"value", c.value},
                      {"relation", c.relation},
                      {"tolerance", c.tolerance},
                      {"passed", c.passed}});
  }
  json j = {{"toolkit_version", m.toolkit_version},
            {"experiment", m.experiment},
            {"config_hash", m.config_hash},
            {"config", m.config},
            {"status", status_name(m.status)},
            {"error", m.error},
            {"passed", m.passed()},
            {"checks", checks},
            {"artifacts", m.artifacts},
            {"results", m.results}};
  if (with_timestamps) {
    j["started_at"] = m.started_at;
    j["finished_at"] = m.finished_at;
    j["elapsed_seconds"] = m.elapsed_seconds;
  }
  return j;
}

RunManifest manifest_from_json(const json& j) {
  try {
    RunManifest m;
    m.toolkit_version = j.at("toolkit_version").get<std::string>();
    m.experiment = j.at("experiment").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = j.value("config", json::object());
    m.status = status_from(j.value("status", std::string("completed")));
    m.error = j.value("error", std::string());
    m.started_at = j.value("started_at", std::string());
    m.finished_at = j.value("finished_at", std::string());
    m.elapsed_seconds = j.value("elapsed_seconds", 0.0);
    for (const auto& c : j.at("checks")) {
      Check k;
      k.name = c.at("name").get<std::string>();
      k.value = json_number(c.at("value"));
      k.relation = c.at("relation").get<std::string>();
      k.tolerance = json_number(c.at("tolerance"));
      k.passed = c.at("passed").get<bool>();
      m.checks.push_back(std::move(k));
    }
    m.artifacts = j.value("artifacts", std::vector<std::string>{});
    m.results = j.value("results", json::object());
    return m;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("manifest: ") + e.what());
  }
}

RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open manifest " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument("manifest " + path + ": " + e.what());
  }
  return manifest_from_json(j);
}

int exit_code(const RunManifest& m) {
  if (m.status == RunStatus::NonConvergence) return 3;
  return m.passed() ? 0 : 1;
}

int exit_code(const std::vector<RunManifest>& ms) {
  int code = 0;
  for (const auto& m : ms) {
    const int c = exit_code(m);
    if (c == 3 || (c == 1 && code == 0)) code = c;
  }
  return code;
}

Report report(const std::vector<RunManifest>& manifests) {
  if (manifests.empty()) throw InvalidArgument("report: need at least one manifest");
  Report rep;
  rep.manifests = static_cast<int>(manifests.size());
  std::ostringstream os;
  json rows = json::array();
  for (const auto& m : manifests) {
    const int n = static_cast<int>(m.checks.size());
    const int ok = static_cast<int>(std::count_if(m.checks.begin(), m.checks.end(), [](const Check& c) {
      return c.passed;
    }));
    rep.checks += n;
    rep.passed += ok;
    const std::string status = n == 0 ? "no checks" : (ok == n ? "pass" : "FAIL");
    os << std::left << std::setw(16) << m.experiment << std::setw(18) << m.config_hash << std::right
       << std::setw(4) << ok << '/' << std::left << std::setw(6) << n << status << '\n';
    for (const auto& c : m.checks) {
      if (!c.passed) os << "    failed: " << c.name << " = " << c.value << ' ' << c.relation << ' ' << c.tolerance << '\n';
    }
    json failed = json::array();
    for (const auto& c : m.checks) {
      if (!c.passed) failed.push_back(c.name);
    }
    rows.push_back({{"experiment", m.experiment},
                    {"config_hash", m.config_hash},
                    {"checks", n},
                    {"passed", ok},
                    {"status", status},
                    {"failed", failed}});
  }
  os << rep.passed << '/' << rep.checks << " checks passed\n";
  rep.text = os.str();
  rep.json = {{"manifests", rep.manifests}, {"checks", rep.checks}, {"passed", rep.passed}, {"runs", rows}};
  return rep;
}

}  // namespace mbb
