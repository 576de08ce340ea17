// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero if any fail.
// Monte Carlo studies use R = 200 replicates of N = 50000; the rest are exact or oracle checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "jaipw/dr_estimator.hpp"
#include "jaipw/ipw_estimator.hpp"
#include "jaipw/meta_analysis.hpp"
#include "jaipw/sim_harness.hpp"
#include "jaipw/solvers.hpp"
#include "oracles.hpp"

using namespace jaipw;
namespace fs = std::filesystem;

namespace {

// Tolerances and bands, pinned here.
constexpr int kReplications = 200;
constexpr Index kPopulation = 50000;
constexpr double kNaiveBand = 6.0;
const double kNaiveRef[3] = {24.21, 41.20, 53.71};
constexpr double kIpwBiasMax = 5.0;
constexpr double kIpwRmseMax = 0.10;
constexpr double kCoverageLo = 0.91, kCoverageHi = 0.98;
constexpr double kDrBiasMax = 10.0;
constexpr double kDrRmseMax = 0.6;
constexpr double kNoDBiasMin = 10.0;
constexpr double kMisspecBiasMin = 25.0;
constexpr double kDrIdentityTol = 1e-8;
constexpr double kVarianceIdentityTol = 1e-10;
constexpr double kJclRelTol = 1e-6;
constexpr double kJplTol = 1e-8;
constexpr double kHtRelTol = 1e-12;
constexpr double kGridTol = 1e-4;
constexpr double kMcSeMultiple = 3.0;
constexpr double kMetaBiasMax = 5.0;

const std::vector<std::string> kSlopes{"Z1", "Z2", "Z3"};

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("%s criterion %d: %s | %s\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

SimStudyResult study(const std::string& name, int setup, bool misspecified, std::vector<std::string> methods,
                     std::uint64_t seed) {
  SimScenario sc;
  sc.setup = setup;
  sc.population_size = kPopulation;
  sc.replications = kReplications;
  sc.seed = seed;
  sc.threads = worker_count();
  sc.misspecified = {misspecified, misspecified, misspecified};
  sc.methods = std::move(methods);
  // A method that fails too often should show up as a failed criterion, not abort the run.
  sc.abort_on_failures = false;
  const auto t0 = std::chrono::steady_clock::now();
  SimStudyResult res = run_study(sc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream("acceptance_" + name + "_metrics.csv") << metrics_csv(res);
  std::printf("# study %s finished in %.0f s\n", name.c_str(), secs);
  for (const auto& run : res.runs)
    if (run.failures > 0) std::printf("# study %s: %s failed in %d replicates\n", name.c_str(), run.method.c_str(), run.failures);
  return res;
}

// Worst value of a metric over the slopes, and whether every slope lies in [lo, hi].
struct Band {
  bool pass = true;
  std::string text;
};

Band band(const SimStudyResult& res, const std::string& method, double MetricRow::*field, double lo, double hi,
          const std::vector<std::string>& terms = kSlopes) {
  Band b;
  for (const auto& t : terms) {
    const auto& m = res.metric(method, t);
    const double v = m.*field;
    b.pass = b.pass && m.n_ok > 0 && v >= lo && v <= hi;
    b.text += (b.text.empty() ? "" : " ") + t + "=" + fmt("%.3f", v);
  }
  return b;
}

// Monte Carlo criteria.

void criteria_setup1(const SimStudyResult& a, const SimStudyResult& b) {
  {
    bool pass = true;
    std::string text;
    for (size_t j = 0; j < kSlopes.size(); ++j) {
      const double v = a.metric("Unweighted", kSlopes[j]).relative_bias_pct;
      pass = pass && std::abs(v - kNaiveRef[j]) <= kNaiveBand;
      text += kSlopes[j] + "=" + fmt("%.2f%%", v) + " (ref " + fmt("%.2f", kNaiveRef[j]) + ") ";
    }
    report(1, pass, "unweighted relative bias within 6 points of the published values", text);
  }
  {
    const Band jb = band(a, "JPL", &MetricRow::relative_bias_pct, 0.0, kIpwBiasMax);
    const Band sb = band(a, "JSR", &MetricRow::relative_bias_pct, 0.0, kIpwBiasMax);
    const Band jr = band(a, "JPL", &MetricRow::rmse_ratio, 0.0, kIpwRmseMax);
    const Band sr = band(a, "JSR", &MetricRow::rmse_ratio, 0.0, kIpwRmseMax);
    report(2, jb.pass && sb.pass && jr.pass && sr.pass, "JPL and JSR bias <= 5% and RMSE ratio <= 0.10",
           "JPL bias% " + jb.text + "; JSR bias% " + sb.text + "; JPL rmse " + jr.text + "; JSR rmse " + sr.text);
  }
  {
    const Band c = band(a, "JPL", &MetricRow::coverage, kCoverageLo, kCoverageHi);
    report(3, c.pass, "JPL 95% interval coverage in [0.91, 0.98]", c.text);
  }
  {
    const Band m = band(b, "JPL", &MetricRow::relative_bias_pct, kMisspecBiasMin, INFINITY, {"Z2"});
    report(6, m.pass, "misspecified JPL relative bias on Z2 >= 25%", m.text);
  }
}

void criteria_setup2(const SimStudyResult& c) {
  const Band bias = band(c, "JAIPW-D", &MetricRow::relative_bias_pct, 0.0, kDrBiasMax);
  const Band rmse = band(c, "JAIPW-D", &MetricRow::rmse_ratio, 0.0, kDrRmseMax);
  report(4, bias.pass && rmse.pass, "doubly robust fit with outcome-aware auxiliary: bias <= 10%, RMSE ratio <= 0.6",
         "bias% " + bias.text + "; rmse " + rmse.text);
  const Band nod = band(c, "JAIPW-NoD", &MetricRow::relative_bias_pct, kNoDBiasMin, INFINITY, {"Z1"});
  report(5, nod.pass, "auxiliary without the outcome: relative bias on Z1 >= 10%", nod.text);
}

// Exact and oracle criteria.

JaipwConfig zero_aux() {
  JaipwConfig c;
  c.mode = AuxMode::Zero;
  return c;
}

void criterion7() {
  double worst = 0.0;
  bool converged = true;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto fx = fixture::make_fixture(500 + seed, 1500 + 150 * static_cast<Index>(seed), seed % 2 ? 2 : 3);
    const auto ctx = fixture::context(fx, true);
    const auto fit = fit_jpl(ctx);
    const auto ipw = fit_ipw(ctx, fit);
    const auto builder = make_aux_builder(ctx, zero_aux());
    const auto dr = solve_dr(ctx, fit, *builder, zero_aux());
    worst = std::max(worst, (dr.report.estimate - ipw.estimate).cwiseAbs().maxCoeff());
    converged = converged && dr.outer_converged;
  }
  report(7, converged && worst <= kDrIdentityTol, "zero auxiliary model reproduces IPW on 20 fixtures",
         "max |diff| " + fmt("%.2e", worst));
}

void criterion8() {
  double jpl = 0.0, jcl = 0.0, dr = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto fx = fixture::make_fixture(600 + seed, 4000);
    const auto ctx = fixture::context(fx, true);
    const auto pl = fit_jpl(ctx);
    const VectorXd tp = fit_ipw(ctx, pl).estimate;
    const MatrixXd known_pl = variance_known(ctx, pl, tp);
    jpl = std::max(jpl, (variance_jpl(ctx, pl, tp, {false}) - known_pl).cwiseAbs().maxCoeff());
    const auto cl = fit_jcl(ctx, oracle::fixture_totals(fx));
    const VectorXd tc = fit_ipw(ctx, cl).estimate;
    jcl = std::max(jcl, (variance_jcl(ctx, cl, tc, {false}) - variance_known(ctx, cl, tc)).cwiseAbs().maxCoeff());
    const auto builder = make_aux_builder(ctx, zero_aux());
    dr = std::max(dr, (variance_jaipw_approx(ctx, pl, *builder, tp) - known_pl).cwiseAbs().maxCoeff());
  }
  const bool pass = jpl <= kVarianceIdentityTol && jcl <= kVarianceIdentityTol && dr <= kVarianceIdentityTol;
  report(8, pass, "variances with nuisance blocks removed equal the known-weight sandwich",
         "JPL " + fmt("%.2e", jpl) + " JCL " + fmt("%.2e", jcl) + " JAIPW " + fmt("%.2e", dr));
}

void criterion9() {
  double jcl = 0.0, jpl = 0.0, ht = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto fx = fixture::make_fixture(700 + seed, 6000);
    const auto ctx = fixture::context(fx);
    const auto totals = oracle::fixture_totals(fx);
    const auto cl = fit_jcl(ctx, totals);
    const auto pl = fit_jpl(ctx);
    for (Index k = 0; k < ctx.cohorts(); ++k) {
      const VectorXd t = totals.vector_for(ctx, k);
      jcl = std::max(jcl, jcl_constraint_residual(ctx, k, cl.alpha[static_cast<size_t>(k)], t).cwiseAbs().maxCoeff() /
                              t.norm());
      jpl = std::max(jpl, jpl_residual(ctx, k, pl.alpha[static_cast<size_t>(k)]).cwiseAbs().maxCoeff());
    }
    const auto strata = oracle::empirical_strata(ctx);
    ht = std::max(ht, oracle::ht_cell_gap(ctx, strata, fit_jps(ctx, strata)));
  }
  // Fits that fail to converge throw, so every residual below comes from a converged fit.
  const bool pass = jcl <= kJclRelTol && jpl <= kJplTol && ht <= kHtRelTol;
  report(9, pass, "calibration, pseudolikelihood and post-stratification constraints hold",
         "JCL rel " + fmt("%.2e", jcl) + " JPL " + fmt("%.2e", jpl) + " JPS cell rel " + fmt("%.2e", ht));
}

void criterion10() {
  double grid = 0.0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto s = oracle::small_logistic(seed, 40);
    const auto fit = fit_weighted_logistic(s.x, s.y, s.w);
    grid = std::max(grid, (fit.coef - oracle::grid_maximizer(s.x, s.y, s.w)).cwiseAbs().maxCoeff());
  }

  // Parametric integration of the score against Gauss-Hermite quadrature, row by row.
  const auto fx = fixture::make_fixture(45, 2000);
  const auto ctx = fixture::context(fx, true);
  const Index r = ctx.aux_internal.cols();
  MatrixXd gamma = MatrixXd::Zero(r + 1, 1);
  gamma(0, 0) = 0.1;
  gamma(1, 0) = 0.4;
  const double sd = 0.9;
  const int M = 20000;
  Rng rng = make_rng(77, 1);
  boost::random::normal_distribution<double> normal;
  MatrixXd draws(M, 1);
  for (int m = 0; m < M; ++m) draws(m, 0) = normal(rng);
  VectorXd theta(3);
  theta << -0.8, 0.6, 0.3;
  const auto aux = make_parametric_aux(ctx, gamma, MatrixXd::Constant(1, 1, sd), draws, AuxTarget::Projection);
  const MatrixXd f = aux->internal_values(theta);
  VectorXd nodes, weights;
  oracle::gauss_hermite(60, nodes, weights);
  double worst_z = 0.0;
  for (Index i = 0; i < 20; ++i) {
    const double mean = gamma(0, 0) + ctx.aux_internal.row(i).dot(gamma.col(0).tail(r));
    const double d = ctx.internal->outcome(i);
    VectorXd quad = VectorXd::Zero(3), s1 = VectorXd::Zero(3), s2 = VectorXd::Zero(3);
    for (Index q = 0; q < nodes.size(); ++q) {
      VectorXd z = ctx.disease_design.row(i).transpose();
      z(1) = mean + std::sqrt(2.0) * sd * nodes(q);
      quad += weights(q) / std::sqrt(M_PI) * (d - expit(theta.dot(z))) * z;
    }
    for (int m = 0; m < M; ++m) {
      VectorXd z = ctx.disease_design.row(i).transpose();
      z(1) = mean + sd * draws(m, 0);
      const VectorXd u = (d - expit(theta.dot(z))) * z;
      s1 += u;
      s2 += u.cwiseProduct(u);
    }
    for (Index j = 0; j < 3; ++j) {
      const double mu = s1(j) / M, mcse = std::sqrt(std::max(0.0, s2(j) / M - mu * mu) / M);
      worst_z = std::max(worst_z, std::abs(f(i, j) - quad(j)) / std::max(mcse, 1e-300));
    }
  }
  report(10, grid <= kGridTol && worst_z <= kMcSeMultiple,
         "logistic solver matches grid search; integration matches quadrature",
         "grid max |diff| " + fmt("%.2e", grid) + " quadrature worst gap " + fmt("%.2f", worst_z) + " MC SEs");
}

MetaEntry entry(const std::string& label, std::vector<double> est, std::vector<double> var) {
  const Index p = static_cast<Index>(est.size());
  MetaEntry e{label, VectorXd(p), MatrixXd::Zero(p, p)};
  for (Index j = 0; j < p; ++j) {
    e.estimate(j) = est[static_cast<size_t>(j)];
    e.variance(j, j) = var[static_cast<size_t>(j)];
  }
  return e;
}

MetaInput meta_input(std::vector<MetaEntry> entries) {
  MetaInput in;
  for (Index j = 0; j < entries.front().estimate.size(); ++j) in.terms.push_back("t" + std::to_string(j));
  in.entries = std::move(entries);
  return in;
}

void criterion11(const SimStudyResult& a) {
  bool exact = true;
  // weights (2, 0.5) and (4, 4)
  auto r = combine_fixed_effects(meta_input({entry("A", {1.0, 2.0}, {0.5, 0.25}), entry("B", {3.0, 0.0}, {2.0, 0.25})}));
  exact = exact && r.estimate(0) == 1.4 && r.estimate(1) == 1.0 && std::abs(r.variance(0, 0) - 0.4) <= 1e-15 &&
          r.variance(1, 1) == 0.125;
  // weights 1, 2, 4
  r = combine_fixed_effects(meta_input({entry("A", {1.0}, {1.0}), entry("B", {2.0}, {0.5}), entry("C", {4.0}, {0.25})}));
  exact = exact && r.estimate(0) == 3.0 && std::abs(r.variance(0, 0) - 1.0 / 7.0) <= 1e-15;
  r = combine_fixed_effects(meta_input({entry("A", {-0.25, 0.75}, {0.0625, 4.0})}));
  exact = exact && r.estimate(0) == -0.25 && r.estimate(1) == 0.75 && r.variance(0, 0) == 0.0625 && r.variance(1, 1) == 4.0;

  const Band m = band(a, "Meta-JPL", &MetricRow::relative_bias_pct, 0.0, kMetaBiasMax);
  report(11, exact && m.pass, "fixed-effects arithmetic exact; meta-analysed JPL bias <= 5%",
         std::string("fixtures ") + (exact ? "exact" : "MISMATCH") + "; Meta-JPL bias% " + m.text);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion12() {
  const fs::path dir = fs::temp_directory_path() / "jaipw_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto run = [&](const std::string& sub) {
    const std::string cmd = std::string("\"") + JAIPW_CLI_PATH +
                            "\" simulate --setup 1 --replications 5 --seed 12 --population-size 50000 --out \"" +
                            (dir / sub).string() + "\" > \"" + (dir / (sub + ".log")).string() + "\" 2>&1";
    return std::system(cmd.c_str());
  };
  const int a = run("a"), b = run("b");
  const std::string ma = slurp(dir / "a" / "metrics.csv"), mb = slurp(dir / "b" / "metrics.csv");
  const bool pass = a == 0 && b == 0 && !ma.empty() && ma == mb;
  report(12, pass, "two identical simulate runs give byte-identical metric files",
         "exit " + std::to_string(a) + "/" + std::to_string(b) + ", " + std::to_string(ma.size()) + " bytes, " +
             (ma == mb ? "identical" : "different"));
  fs::remove_all(dir);
}

}  // namespace

int main() {
  try {
    criterion7();
    criterion8();
    criterion9();
    criterion10();
    criterion12();

    const auto a = study("setup1", 1, false, {"Unweighted", "JPL", "JSR", "Meta-JPL"}, 101);
    const auto b = study("setup1_misspecified", 1, true, {"Unweighted", "JPL"}, 202);
    criteria_setup1(a, b);
    criterion11(a);

    const auto c = study("setup2_misspecified", 2, true, {"Unweighted", "JAIPW-D", "JAIPW-NoD"}, 303);
    criteria_setup2(c);
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
