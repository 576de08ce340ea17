#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "jaipw/csv_io.hpp"
#include "jaipw/run_config.hpp"
#include "test_support.hpp"

using namespace jaipw;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run run(const std::string& args, const fs::path& dir) {
  const fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + JAIPW_CLI_PATH + "\" " + args + " > \"" + o.string() + "\" 2> \"" +
                          e.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

void write_samples(const fixture::Fixture& fx, const fs::path& dir, bool with_pi_ext = true) {
  std::ofstream in(dir / "internal.csv");
  in << "id,D,Z1,Z2,W1,W2,S1,S2\n";
  const auto& s = *fx.internal;
  for (Index i = 0; i < s.rows(); ++i) {
    in << s.ids[static_cast<size_t>(i)] << ',' << format_double(s.outcome(i));
    for (Index j = 0; j < s.covariates.values.cols(); ++j) in << ',' << format_double(s.covariates.values(i, j));
    in << ',' << s.cohort_indicators(i, 0) << ',' << s.cohort_indicators(i, 1) << '\n';
  }
  std::ofstream ex(dir / "external.csv");
  ex << "id,D,Z1,Z2,W1,W2" << (with_pi_ext ? ",pi_ext" : "") << "\n";
  const auto& e = *fx.external;
  for (Index i = 0; i < e.rows(); ++i) {
    ex << e.ids[static_cast<size_t>(i)];
    for (Index j = 0; j < e.covariates.values.cols(); ++j) ex << ',' << format_double(e.covariates.values(i, j));
    if (with_pi_ext) ex << ',' << format_double(e.pi_ext(i));
    ex << '\n';
  }
}

std::string config_json(const std::string& method, const std::string& aux, const std::string& extra = "") {
  return R"({"schema_version": 1, "internal": "internal.csv", "external": "external.csv",
  "disease": {"covariates": ["Z1", "Z2"]}, "auxiliary": )" +
         aux + R"(, "cohorts": [{"name": "C1", "terms": ["D", "W1"]}, {"name": "C2", "terms": ["D", "W2"]}],
  "population_size": 4000, "method": ")" +
         method + "\"" + extra + "}\n";
}

struct Workspace {
  fs::path dir;
  fixture::Fixture fx;
  explicit Workspace(const std::string& name) : fx(fixture::make_fixture(71, 4000)) {
    dir = fs::temp_directory_path() / ("jaipw_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_samples(fx, dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  fs::path config(const std::string& text, const std::string& name = "run.json") const {
    std::ofstream(dir / name) << text;
    return dir / name;
  }
};

}  // namespace

TEST_CASE("fit output matches the library call") {
  Workspace ws("fit");
  const auto cfg = ws.config(config_json("JPL", "[\"Z1\"]"));
  const auto r = run("fit --config \"" + cfg.string() + "\" --out \"" + (ws.dir / "out").string() + "\"", ws.dir);
  REQUIRE(r.code == 0);

  const RunConfig rc = load_run_config(cfg);
  const AnalysisContext ctx = load_context(rc);
  const MethodOutcome lib = run_method(ctx, rc.method);
  CHECK(slurp(ws.dir / "out" / "estimates.csv") == estimates_csv(lib.report));
  CHECK(slurp(ws.dir / "out" / "weights.csv") == weights_csv(ctx, *lib.fit));
  CHECK(fs::exists(ws.dir / "out" / "report.json"));
  CHECK(r.out == estimates_csv(lib.report));
}

TEST_CASE("weights and meta subcommands") {
  Workspace ws("weights");
  const auto cfg = ws.config(config_json("JPL", "[]"));
  auto r = run("weights --config \"" + cfg.string() + "\" --out \"" + (ws.dir / "w").string() + "\"", ws.dir);
  REQUIRE(r.code == 0);
  const RunConfig rc = load_run_config(cfg);
  const AnalysisContext ctx = load_context(rc);
  CHECK(slurp(ws.dir / "w" / "weights.csv") == weights_csv(ctx, fit_jpl(ctx)));

  r = run("meta --config \"" + cfg.string() + "\" --out \"" + (ws.dir / "m").string() + "\"", ws.dir);
  REQUIRE(r.code == 0);
  const std::string meta = slurp(ws.dir / "m" / "meta.csv");
  CHECK(meta.find("combined,,Z1") != std::string::npos);
  CHECK(meta.find("cohort,C2,Z2") != std::string::npos);
}

TEST_CASE("missing design probabilities are a data error naming the column") {
  Workspace ws("missing");
  write_samples(ws.fx, ws.dir, false);
  const auto cfg = ws.config(config_json("JPL", "[]"));
  const auto r = run("fit --config \"" + cfg.string() + "\" --out \"" + (ws.dir / "out").string() + "\"", ws.dir);
  CHECK(r.code == 4);
  CHECK(r.err.find("MissingColumn") != std::string::npos);
  CHECK(r.err.find("pi_ext") != std::string::npos);
  CHECK(r.err.find("\"error\"") != std::string::npos);
  CHECK(!fs::exists(ws.dir / "out" / "estimates.csv"));
}

TEST_CASE("the doubly robust fit needs an auxiliary set") {
  Workspace ws("emptyaux");
  const auto cfg = ws.config(config_json("JAIPW", "[]"));
  const auto r = run("fit --config \"" + cfg.string() + "\" --seed 1", ws.dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("EmptyAuxiliary") != std::string::npos);
}

TEST_CASE("configuration errors exit with code 2") {
  Workspace ws("config");
  CHECK(run("fit --config \"" + ws.config("{not json").string() + "\"", ws.dir).code == 2);
  CHECK(run("fit --config \"" + ws.config(R"({"schema_version": 7})").string() + "\"", ws.dir).code == 2);
  CHECK(run("fit", ws.dir).code == 2);
  CHECK(run("simulate --replications 1 --seed 3", ws.dir).code == 2);
  CHECK(run("simulate --replications 3", ws.dir).code == 2);
  CHECK(run("bogus", ws.dir).code == 2);
  const auto param = ws.config(config_json("JAIPW", "[\"Z1\"]", R"(, "jaipw": {"aux": "parametric"})"));
  const auto r = run("fit --config \"" + param.string() + "\"", ws.dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("seed") != std::string::npos);
}

TEST_CASE("a failed write leaves no partial outputs") {
  Workspace ws("atomic");
  const auto cfg = ws.config(config_json("JPL", "[]"));
  fs::create_directories(ws.dir / "out" / "report.json" / "blocker");
  const auto r = run("fit --config \"" + cfg.string() + "\" --out \"" + (ws.dir / "out").string() + "\"", ws.dir);
  CHECK(r.code != 0);
  CHECK(!fs::exists(ws.dir / "out" / "estimates.csv"));
  CHECK(!fs::exists(ws.dir / "out" / "weights.csv"));
}

TEST_CASE("simulate is deterministic for a fixed seed") {
  Workspace ws("simulate");
  const std::string args = "simulate --setup 1 --replications 5 --seed 7 --population-size 20000 "
                           "--methods Unweighted,JPL,Meta-JPL --check-tables --out ";
  const auto a = run(args + "\"" + (ws.dir / "a").string() + "\"", ws.dir);
  const auto b = run(args + "\"" + (ws.dir / "b").string() + "\" --threads 2", ws.dir);
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  const std::string ma = slurp(ws.dir / "a" / "metrics.csv");
  CHECK(!ma.empty());
  CHECK(ma == slurp(ws.dir / "b" / "metrics.csv"));
  CHECK(slurp(ws.dir / "a" / "replicates.csv") == slurp(ws.dir / "b" / "replicates.csv"));
  const bool banded = a.out.find("PASS") != std::string::npos || a.out.find("FAIL") != std::string::npos;
  CHECK(banded);
}
