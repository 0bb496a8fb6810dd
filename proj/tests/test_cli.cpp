#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "mbb/errors.hpp"
#include "mbb/experiment.hpp"
#include "mbb/measures.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mbb;

namespace {

fs::path scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("mbb_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string bin() {
  const char* b = std::getenv("MBB_BIN");
  REQUIRE_MESSAGE(b != nullptr, "MBB_BIN is not set");
  return b;
}

int cli(const std::string& args) {
  const std::string cmd = bin() + " " + args + " > " + (scratch() / "stdout.txt").string() + " 2> " +
                          (scratch() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::string put(const std::string& name, const DiscreteMeasure& m) {
  const auto path = scratch() / name;
  std::ofstream(path) << to_json(m).dump();
  return path.string();
}

const Grid1D kThree = Grid1D::symmetric(1.5, 3);

std::string dirac0() { return put("dirac0.json", DiscreteMeasure::dirac(kThree, 0.0)); }
std::string pm1() { return put("pm1.json", DiscreteMeasure::atoms(kThree, {{-1.0, 0.5}, {1.0, 0.5}})); }

RunManifest manifest_with(std::vector<bool> outcomes, const std::string& name = "gaussian") {
  RunManifest m;
  m.experiment = name;
  m.config_hash = "0";
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    m.checks.push_back(make_check("c" + std::to_string(i), outcomes[i] ? 0.0 : 1.0, "<=", 0.5));
  }
  return m;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli("") == 2);
  CHECK(cli("frobnicate") == 2);
  CHECK(cli("mot-lp --mu only.json") == 2);
  CHECK(cli("mot-lp --mu missing.json --nu missing.json") == 2);
  CHECK(cli("--help") == 0);
  CHECK(slurp(scratch() / "stdout.txt").find("experiment") != std::string::npos);
}

TEST_CASE("mot-lp returns the forced coupling") {
  const auto out = scratch() / "coupling.json";
  REQUIRE(cli("mot-lp --mu " + dirac0() + " --nu " + pm1() + " --cost power2 --out " + out.string()) == 0);
  const auto j = read_json(out);
  CHECK(j["value"].get<double>() == doctest::Approx(1.0));
  CHECK(j["pi"][1][0].get<double>() == doctest::Approx(0.5));
  CHECK(j["pi"][1][2].get<double>() == doctest::Approx(0.5));

  const auto table = scratch() / "cost.csv";
  std::ofstream(table) << "0,0,0\n2,7,2\n0,0,0\n";
  REQUIRE(cli("mot-lp --mu " + dirac0() + " --nu " + pm1() + " --cost " + table.string() + " --out " + out.string()) ==
          0);
  CHECK(read_json(out)["value"].get<double>() == doctest::Approx(2.0));
  std::ofstream(table) << "1,2\n";
  CHECK(cli("mot-lp --mu " + dirac0() + " --nu " + pm1() + " --cost " + table.string()) == 2);
  CHECK(cli("mot-lp --mu " + dirac0() + " --nu " + pm1() + " --cost power0") == 2);
  // Reversed marginals are out of convex order: a numerical failure, not a usage error.
  CHECK(cli("mot-lp --mu " + pm1() + " --nu " + dirac0()) == 1);
}

TEST_CASE("fpe adds t a to the variance") {
  const Grid1D g(-6.0, 6.0, 120);
  const auto mu = put("g.json", DiscreteMeasure::gaussian(g, 0.0, 0.5));
  const auto out = scratch() / "curve.json";
  const auto csv = scratch() / "curve.csv";
  REQUIRE(cli("fpe --a const:1 --mu0 " + mu + " --steps 50 --out " + out.string() + " --csv " + csv.string()) == 0);
  const auto j = read_json(out);
  const auto& last = j["slices"].back();
  double m2 = 0.0;
  for (int k = 0; k < g.n_cells; ++k) m2 += last[k].get<double>() * g.center(k) * g.center(k);
  CHECK(m2 == doctest::Approx(1.5).epsilon(1e-3));
  CHECK(slurp(csv).rfind("t,x,value\n", 0) == 0);
  CHECK(cli("fpe --a wobble:1 --mu0 " + mu) == 2);
}

TEST_CASE("primal, duality and non-convergence") {
  const Grid1D g(-4.5, 4.5, 40);
  const auto mu = put("pmu.json", DiscreteMeasure::gaussian(g, 0.0, 0.1));
  const auto nu = put("pnu.json", DiscreteMeasure::gaussian(g, 0.0, 1.1));
  const auto out = scratch() / "primal.json";
  REQUIRE(cli("primal --mu " + mu + " --nu " + nu + " --nt 10 --out " + out.string()) == 0);
  CHECK(read_json(out)["value"].get<double>() == doctest::Approx(1.0).epsilon(0.1));
  const auto dual = scratch() / "dual.json";
  CHECK(cli("duality --primal " + out.string() + " --potential gaussian:1 --out " + dual.string()) == 0);
  CHECK(read_json(dual)["gap"].get<double>() >= -1e-3);
  CHECK(cli("primal --mu " + mu + " --nu " + nu + " --nt 10 --max-iter 2") == 3);
  CHECK(cli("primal --mu " + nu + " --nu " + mu + " --nt 10") == 1);
}

TEST_CASE("dual-pme, dacmoser, strassen, relax and skorokhod run") {
  const auto pme = scratch() / "pme.json";
  REQUIRE(cli("dual-pme --giant --nodes 101 --steps 50 --out " + pme.string()) == 0);
  CHECK(read_json(pme)["scheme_residual"].get<double>() <= 0.05);
  CHECK(cli("dual-pme --q 2") == 2);

  const Grid1D g(-8.0, 8.0, 160);
  const auto a = put("dm_a.json", DiscreteMeasure::gaussian(g, 0.0, 1.0));
  const auto b = put("dm_b.json", DiscreteMeasure::gaussian(g, 0.0, 2.0));
  const auto dm = scratch() / "dm.json";
  REQUIRE(cli("dacmoser --mu " + a + " --nu " + b + " --out " + dm.string()) == 0);
  CHECK(read_json(dm)["cost"]["value"].get<double>() > 0.0);

  const auto st = scratch() / "st.json";
  REQUIRE(cli("strassen --mu " + dirac0() + " --nu " + pm1() + " --paths 2000 --out " + st.string()) == 0);
  CHECK(read_json(st).contains("mean_defect"));

  const auto rx = scratch() / "rx.json";
  const int rc = cli("relax --cost pow2 --paths 2000 --records 64 --out " + rx.string());
  CHECK((rc == 0 || rc == 1));
  CHECK(read_json(rx)["rows"].size() == 3);
  CHECK(cli("relax --meshes 0.3") == 2);

  const Grid1D tenths(-2.05, 2.05, 41);
  const auto m0 = put("sk_mu.json", DiscreteMeasure::dirac(tenths, 0.0));
  const auto m1 = put("sk_nu.json", DiscreteMeasure::atoms(tenths, {{-1.0, 0.5}, {1.0, 0.5}}));
  const auto csv = scratch() / "sk.csv";
  REQUIRE(cli("skorokhod --mu " + m0 + " --nu " + m1 + " --paths 500 --csv " + csv.string()) == 0);
  const auto text = slurp(csv);
  CHECK(std::count(text.begin(), text.end(), '\n') == 501);
  CHECK(cli("skorokhod --mu " + m0 + " --nu " + m1 + " --paths 10 --r 5") == 2);
}

TEST_CASE("experiment writes manifests and reports") {
  const auto out = scratch() / "runs";
  REQUIRE(cli("experiment dacmoser --out " + out.string()) == 0);
  const auto manifest = read_json(out / "dacmoser" / "manifest.json");
  CHECK(manifest["passed"].get<bool>());
  CHECK(manifest["toolkit_version"] == kToolkitVersion);
  CHECK(manifest["config_hash"].get<std::string>().size() == 16);
  CHECK(fs::exists(out / "dacmoser" / "rho.csv"));
  CHECK(slurp(out / "dacmoser" / "rho.csv").rfind("t,x,value\n", 0) == 0);
  CHECK(fs::exists(out / "manifests.jsonl"));

  REQUIRE(cli("report " + out.string() + " --json " + (scratch() / "report.json").string()) == 0);
  CHECK(slurp(scratch() / "stdout.txt").find("12/12 checks passed") != std::string::npos);
  CHECK(read_json(scratch() / "report.json")["passed"] == 12);

  CHECK(cli("experiment dacmoser --param f0_tol=1e-12 --out " + out.string()) == 1);
  CHECK(cli("experiment gaussian --param p=1 --out " + out.string()) == 2);
  CHECK(cli("experiment gaussian --param colour=blue --out " + out.string()) == 2);
  CHECK(cli("experiment nonsense") == 2);
  CHECK(cli("experiment") == 2);

  const auto cfg = scratch() / "bad.json";
  std::ofstream(cfg) << R"({"experiment": "giant", "sed": 3})";
  CHECK(cli("experiment --config " + cfg.string()) == 2);
  std::ofstream(cfg) << R"({"experiment": "giant", "params": {"q": 1.0}})";
  CHECK(cli("experiment --config " + cfg.string()) == 2);
  std::ofstream(cfg) << R"({"experiment": "giant", "params": {"n_cells": 301, "n_steps": 400, "profile_nodes": 401}})";
  const int rc = cli("experiment --config " + cfg.string() + " --out " + (scratch() / "cfg").string());
  CHECK((rc == 0 || rc == 1));
  CHECK(fs::exists(scratch() / "cfg" / "giant" / "manifest.json"));
}

TEST_CASE("parallel runs and identical reruns") {
  const std::string args = " --param n_paths=2000 --param embed_paths=500 --param n_records=64";
  const auto a = scratch() / "par_a";
  const auto b = scratch() / "par_b";
  const int ra = cli("experiment relax" + args + " --seed 5 --out " + a.string());
  const int rb = cli("experiment relax" + args + " --seed 5 --parallel 2 --out " + b.string());
  CHECK(ra == rb);
  auto strip = [](json j) {
    for (const char* k : {"started_at", "finished_at", "elapsed_seconds"}) j.erase(k);
    return j.dump();
  };
  CHECK(strip(read_json(a / "relax" / "manifest.json")) == strip(read_json(b / "relax" / "manifest.json")));

  const auto c = scratch() / "par_c";
  REQUIRE(cli("experiment dacmoser strassen --param n_paths=2000 --parallel 2 --out " + c.string()) == 2);
  REQUIRE(cli("experiment dacmoser giant --param n_cells=301 --parallel 2 --out " + c.string()) < 2);
  CHECK(fs::exists(c / "dacmoser" / "manifest.json"));
  CHECK(fs::exists(c / "giant" / "manifest.json"));
}

TEST_CASE("config parsing") {
  const auto c = parse_config({{"experiment", "gaussian"}, {"params", {{"Q", 0.5}}}});
  CHECK(c.params["Q"] == 0.5);
  CHECK(c.params["p"] == 2.0);
  CHECK(c.seed == 1);
  CHECK_THROWS_AS(parse_config({{"experiment", "gaussian"}, {"params", {{"p", 1.0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "gaussian"}, {"params", {{"n_t", 2.5}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "gaussian"}, {"extra", 1}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "relax"}, {"params", {{"cost", "cube"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "relax"}, {"params", {{"meshes", {0.3}}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "lunar"}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"experiment", "giant"}, {"seed", -1}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json::array()), ConfigError);
  for (const auto& name : experiment_names()) CHECK_NOTHROW(parse_config({{"experiment", name}}));

  // The hash ignores the output directory but not the parameters.
  auto d = c;
  d.out_dir = "elsewhere";
  CHECK(config_hash(d) == config_hash(c));
  d.params["Q"] = 0.75;
  CHECK(config_hash(d) != config_hash(c));
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("checks and exit codes") {
  CHECK(make_check("x", 1.0, "<=", 1.0).passed);
  CHECK_FALSE(make_check("x", 1.5, "<=", 1.0).passed);
  CHECK(make_check("x", 1.5, ">=", 1.0).passed);
  CHECK_FALSE(make_check("x", std::nan(""), "<=", 1.0).passed);
  CHECK_THROWS_AS(make_check("x", 0.0, "==", 0.0), InvalidArgument);

  auto ok = manifest_with({true, true});
  auto bad = manifest_with({true, false});
  auto stalled = manifest_with({true});
  stalled.status = RunStatus::NonConvergence;
  CHECK(exit_code(ok) == 0);
  CHECK(exit_code(bad) == 1);
  CHECK(exit_code(stalled) == 3);
  CHECK(exit_code({ok, bad}) == 1);
  CHECK(exit_code({bad, stalled, ok}) == 3);
}

TEST_CASE("report aggregates") {
  const auto one = report({manifest_with({true})});
  CHECK(one.text.find("1/1 checks passed") != std::string::npos);

  const auto mixed = report({manifest_with({true, false}), manifest_with({true, true, true}, "giant")});
  CHECK(mixed.checks == 5);
  CHECK(mixed.passed == 4);
  CHECK(mixed.text.find("4/5 checks passed") != std::string::npos);
  CHECK(mixed.text.find("FAIL") != std::string::npos);
  CHECK(mixed.json["runs"][0]["failed"][0] == "c1");

  const auto empty = report({manifest_with({})});
  CHECK(empty.text.find("no checks") != std::string::npos);
  CHECK(empty.json["runs"][0]["status"] == "no checks");
  CHECK_THROWS_AS(report({}), InvalidArgument);

  const auto m = manifest_with({true, false});
  const auto back = manifest_from_json(json::parse(to_json(m).dump()));
  CHECK(back.checks.size() == 2);
  CHECK(back.checks[1].value == 1.0);
  CHECK_FALSE(back.passed());
  CHECK(to_json(back, false) == to_json(m, false));
  CHECK_THROWS_AS(manifest_from_json({{"experiment", "x"}}), InvalidArgument);
}

TEST_CASE("solver failures become failed checks") {
  ExperimentConfig c = parse_config({{"experiment", "gaussian"},
                                     {"params", {{"n_cells", 20}, {"n_t", 4}, {"property_checks", false}}}});
  c.params["solver_tol"] = 1e-300;
  const auto m = run_experiment(c);
  CHECK_FALSE(m.passed());
  CHECK(m.status != RunStatus::Completed);
  CHECK(m.checks.back().name.rfind("error: ", 0) == 0);
}
