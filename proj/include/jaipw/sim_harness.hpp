#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jaipw/data_model.hpp"
#include "jaipw/dr_estimator.hpp"
#include "jaipw/selection_models.hpp"

namespace jaipw {

struct SimScenario {
  int setup = 1;  // 1: main-effect selection, 2: with interactions
  Index population_size = 50000;
  std::array<double, 4> theta{-2.0, 0.35, 0.45, 0.25};
  double z_correlation = 0.5;
  std::array<std::array<double, 4>, 3> gamma{{{1.0, 1.0, 0.8, 0.6}, {1.0, 0.6, 0.8, 1.0}, {1.0, 1.0, 1.0, 1.0}}};
  // Main-effect selection coefficients: cohort 1 (1, Z2, Z3, W1, D), cohort 2 (1, Z3, W2, D), cohort 3 (1, Z2, W3).
  std::array<double, 5> alpha1{-1.0, 1.5, 0.2, 0.8, -0.3};
  std::array<double, 4> alpha2{-1.0, 1.25, 0.4, 0.6};
  std::array<double, 3> alpha3{-3.0, 0.8, 0.5};
  // Common magnitude of every Setup 2 interaction coefficient. From about 0.15 up, a few replicates
  // get exploding misspecified selection weights and the doubly robust fit turns heavy-tailed.
  double interaction = 0.1;
  std::array<double, 5> nu{-0.6, 1.2, 0.4, -0.2, 0.5};  // external: 1, D, Z1, Z2, Z3
  double external_scale = 0.75;
  std::array<bool, 3> misspecified{false, false, false};
  bool aux_includes_outcome = true;
  std::uint64_t seed = 1;
  int replications = 200;
  int threads = 1;
  Index reference_size = 1000000;  // population draw behind the JPS cell probabilities
  bool jaipw_variance = false;     // approximate JAIPW sandwich per replicate
  bool abort_on_failures = true;   // any method failing more than 10% of replicates aborts the study
  std::vector<std::string> methods{"Unweighted", "UnweightedCohortIntercepts", "Known", "JPL", "JSR",
                                   "JPS-Exact", "JPS-Marginal", "JCL", "JAIPW", "Meta-JPL"};
  // Flexible aux refits chatter near the fixed point, so replicates cap the outer loop lower.
  JaipwConfig jaipw = [] {
    JaipwConfig c;
    c.max_outer = 10;
    return c;
  }();

  void validate() const;
};

// Full population (every row, composite 0 allowed), the external sample, and the true pi_k.
struct SimPopulation {
  CombinedSample population;
  ExternalSample external;
  MatrixXd true_pi;  // N x 3
};

SimPopulation generate_population(const SimScenario& scenario, int replicate_index);

// Selection terms fitted for cohort k (0-based), intercept implicit.
std::vector<std::string> build_misspecified_design(int k, int setup, bool misspecified);
// Terms of the true selection model for cohort k.
std::vector<std::string> true_selection_terms(int k, int setup);

// 15th/85th percentile strata built from a large reference population draw.
StrataSpec simulation_strata(const SimScenario& scenario, StrataMode mode);

struct MetricRow {
  std::string method;
  std::string term;
  double truth = 0.0;
  double bias_x100 = 0.0;
  double relative_bias_pct = 0.0;
  double rmse_ratio = 0.0;
  double mean_se = 0.0;
  double mc_sd = 0.0;
  double se_bias_pct = 0.0;
  double coverage = 0.0;
  bool zero_sd = false;
  bool has_se = false;
  int n_ok = 0;
};

// Rows are replicates; se may have zero columns when no variance was computed.
std::vector<MetricRow> compute_metrics(const std::string& method, const std::vector<std::string>& terms,
                                       const MatrixXd& estimates, const MatrixXd& se, const VectorXd& truth,
                                       const MatrixXd& naive);

struct MethodRun {
  std::string method;
  MatrixXd estimates;  // R x p, NaN rows for failures
  MatrixXd se;         // R x p, NaN when unavailable
  std::vector<std::string> errors;  // per replicate, empty on success
  int failures = 0;
};

struct SimStudyResult {
  SimScenario scenario;
  std::vector<std::string> terms;
  std::vector<MethodRun> runs;
  std::vector<MetricRow> metrics;
  int replications = 0;

  const MetricRow& metric(const std::string& method, const std::string& term) const;
};

SimStudyResult run_study(const SimScenario& scenario);

struct BandCheck {
  std::string label;
  double value = 0.0;
  double low = 0.0;
  double high = 0.0;
  bool pass = false;
};

// Published-table bands that apply to this scenario.
std::vector<BandCheck> check_tables(const SimStudyResult& result);

std::string replicates_csv(const SimStudyResult& result);
std::string metrics_csv(const SimStudyResult& result);
std::string summary_text(const SimStudyResult& result, const std::vector<BandCheck>& checks = {});

}  // namespace jaipw
