#pragma once

#include <string>
#include <vector>

#include "jaipw/data_model.hpp"
#include "jaipw/selection_models.hpp"
#include "jaipw/solvers.hpp"

namespace jaipw {

inline constexpr double kNormalQuantile975 = 1.959964;

struct EstimateReport {
  std::string method;
  std::string variance_flavor = "none";
  std::vector<std::string> terms;
  VectorXd estimate;
  MatrixXd variance;  // empty until a variance is attached
  VectorXd se;
  VectorXd ci_low;
  VectorXd ci_high;
  bool converged = true;
  int iterations = 0;
  double residual = 0.0;
  Index effective_n = 0;
  std::vector<std::string> warnings;

  bool has_variance() const { return variance.size() > 0; }
  void attach_variance(const MatrixXd& v, const std::string& flavor);
};

EstimateReport fit_ipw(const AnalysisContext& ctx, const SelectionModelFit& fit,
                       const NewtonConfig& cfg = {});

// Plain logistic regression on the selected rows; optional membership indicators
// for cohorts 2..K act as cohort-specific intercepts (reported coefficients exclude them).
EstimateReport fit_unweighted(const AnalysisContext& ctx, bool cohort_intercepts = false,
                              const NewtonConfig& cfg = {});

// (1/N) sum (1/pi) (D - expit(theta'Z)) Z over the selected rows.
VectorXd ipw_score(const AnalysisContext& ctx, const VectorXd& pi_joint, const VectorXd& theta);

struct VarianceOptions {
  bool include_nuisance = true;  // false drops the selection-model correction blocks
};

// Ingredients of the corrected sandwich. With Q the stacked selection dimension:
// g_theta (p x p), e1 (p x p), g_alpha (p x Q), h (Q x Q), e_hg = (1/N) sum h g' (Q x p),
// e_hh = (1/N) sum h h' (Q x Q).
struct SandwichPieces {
  MatrixXd g_theta;
  MatrixXd e1;
  MatrixXd g_alpha;
  MatrixXd h;
  MatrixXd e_hg;
  MatrixXd e_hh;
};

MatrixXd assemble_sandwich(const SandwichPieces& pieces, double population_size,
                           const VarianceOptions& opts);

MatrixXd variance_known(const AnalysisContext& ctx, const SelectionModelFit& fit, const VectorXd& theta);
MatrixXd variance_jpl(const AnalysisContext& ctx, const SelectionModelFit& fit, const VectorXd& theta,
                      const VarianceOptions& opts = {});
MatrixXd variance_jcl(const AnalysisContext& ctx, const SelectionModelFit& fit, const VectorXd& theta,
                      const VarianceOptions& opts = {});

SandwichPieces jpl_pieces(const AnalysisContext& ctx, const SelectionModelFit& fit, const VectorXd& theta);
SandwichPieces jcl_pieces(const AnalysisContext& ctx, const SelectionModelFit& fit, const VectorXd& theta);

}  // namespace jaipw
