#pragma once

#include <optional>
#include <string>

#include "jaipw/dr_estimator.hpp"
#include "jaipw/ipw_estimator.hpp"
#include "jaipw/selection_models.hpp"

namespace jaipw {

enum class EstimatorKind { Unweighted, UnweightedCohortIntercepts, Known, JPL, JSR, JPS, JCL, JAIPW };

// Auto picks the natural sandwich: corrected for JPL/JCL, known-weight for Known/JSR/JPS
// and the unweighted fits, the approximation for JAIPW.
enum class VarianceFlavor { None, Auto, Known, Corrected, Approx, Bootstrap };

const char* estimator_name(EstimatorKind kind);
EstimatorKind parse_estimator(const std::string& name);
VarianceFlavor parse_variance_flavor(const std::string& name);

struct MethodSpec {
  EstimatorKind kind = EstimatorKind::JPL;
  SelectionMethod selection = SelectionMethod::JPL;  // selection model behind JAIPW
  StrataSpec strata;
  PopulationTotals totals;
  MatrixXd known_pi;  // n x K, aligned with the context's internal rows
  JaipwConfig jaipw;
  SelectionConfig selection_cfg;
  VarianceFlavor variance = VarianceFlavor::Auto;
  int threads = 1;
};

struct MethodOutcome {
  EstimateReport report;
  std::optional<SelectionModelFit> fit;
};

SelectionModelFit fit_selection(const AnalysisContext& ctx, SelectionMethod method, const MethodSpec& spec);

// Point estimate plus the requested variance.
MethodOutcome run_method(const AnalysisContext& ctx, const MethodSpec& spec);

// Robust sandwich of an unweighted logistic fit (all selected rows weighted 1).
MatrixXd variance_unweighted(const AnalysisContext& ctx, const VectorXd& theta);

}  // namespace jaipw
