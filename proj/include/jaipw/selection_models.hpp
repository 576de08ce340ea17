#pragma once

#include <map>
#include <string>
#include <vector>

#include "jaipw/data_model.hpp"
#include "jaipw/solvers.hpp"

namespace jaipw {

enum class SelectionMethod { JPL, JSR, JPS, JCL, Known };

const char* method_name(SelectionMethod method);

struct CohortFitDiagnostics {
  bool converged = true;
  int iterations = 0;
  double residual = 0.0;             // solver residual (scaled by 1/N)
  double constraint_residual = 0.0;  // method-specific, unscaled
};

struct SelectionModelFit {
  SelectionMethod method = SelectionMethod::Known;
  std::vector<VectorXd> alpha;  // per cohort; empty for JPS and Known
  MatrixXd pi_internal;         // n x K, clamped
  MatrixXd pi_external;         // m x K, clamped; zero columns when not evaluated
  VectorXd pi_joint;            // n
  double floor = 1e-6;
  Index clamped = 0;
  std::vector<CohortFitDiagnostics> diagnostics;
  std::vector<std::string> warnings;
};

struct SelectionConfig {
  NewtonConfig newton;
  double floor = 1e-6;
};

VectorXd compose_joint(const MatrixXd& pi);

struct ClampResult {
  VectorXd values;
  Index clipped = 0;
};
ClampResult clamp_probabilities(const VectorXd& pi, double floor);

SelectionModelFit fit_jpl(const AnalysisContext& ctx, const SelectionConfig& cfg = {});
SelectionModelFit fit_jsr(const AnalysisContext& ctx, const SelectionConfig& cfg = {});

enum class StrataMode { ExactJoint, MarginalApprox };
enum class EmptyCellPolicy { Error, Smooth, Zero };

struct StratVariable {
  std::string name;               // a term of the internal sample, e.g. "D" or "W1"
  std::vector<double> cutpoints;  // empty: integer-coded categories 0, 1, ...
  int levels() const;
  int level_of(double value) const;  // ties at a cutpoint go to the lower bin
};

struct CohortStrata {
  std::vector<StratVariable> variables;
  // Exact-joint mode: population probability per cell key.
  std::map<std::vector<int>, double> joint;
  // Marginal-approx mode: P(anchor) times the product of P(v | anchor). With anchor = -1
  // the anchor is not a cell variable and is summed out.
  int anchor = 0;
  std::vector<double> anchor_marginal;
  std::vector<std::vector<std::vector<double>>> conditionals;  // [variable][anchor level][level]

  double cell_probability(StrataMode mode, const std::vector<int>& key) const;
};

struct StrataSpec {
  StrataMode mode = StrataMode::ExactJoint;
  std::vector<CohortStrata> cohorts;
  EmptyCellPolicy empty_cells = EmptyCellPolicy::Error;

  void validate() const;
};

SelectionModelFit fit_jps(const AnalysisContext& ctx, const StrataSpec& strata,
                          const SelectionConfig& cfg = {});

struct PopulationTotals {
  // Per cohort, totals keyed by selection term; the intercept total is N.
  std::vector<std::map<std::string, double>> totals;
  double population_size = 0.0;

  VectorXd vector_for(const AnalysisContext& ctx, Index k) const;
};

SelectionModelFit fit_jcl(const AnalysisContext& ctx, const PopulationTotals& totals,
                          const SelectionConfig& cfg = {});

// User-supplied per-cohort probabilities for the internal rows.
SelectionModelFit known_selection(const AnalysisContext& ctx, const MatrixXd& pi_internal,
                                  const SelectionConfig& cfg = {});

// Estimating-equation residuals, recomputed from scratch for verification.
VectorXd jpl_residual(const AnalysisContext& ctx, Index k, const VectorXd& alpha);
VectorXd jcl_constraint_residual(const AnalysisContext& ctx, Index k, const VectorXd& alpha,
                                 const VectorXd& totals);

}  // namespace jaipw
