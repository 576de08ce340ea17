#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "jaipw/data_model.hpp"
#include "jaipw/flex_regressor.hpp"
#include "jaipw/ipw_estimator.hpp"
#include "jaipw/selection_models.hpp"

namespace jaipw {

enum class AuxMode { Flexible, Parametric, Zero };

// Projection: regress D - expit(theta'Z), the exact conditional mean of the score.
// Literal: regress D * (1 - expit(theta'Z)).
enum class AuxTarget { Projection, Literal };

struct JaipwConfig {
  double eps_theta = 1e-8;
  double eps_score = 1e-8;
  int max_outer = 50;
  AuxMode mode = AuxMode::Flexible;
  AuxTarget target = AuxTarget::Projection;
  FlexSettings flex = GbtSettings{};
  int mc_draws = 1000;
  int bootstrap_replicates = 200;
  std::uint64_t seed = 1;
  bool strict_outer = false;  // throw instead of warning when the outer loop does not converge
  NewtonConfig newton;

  void validate() const;
};

// Auxiliary score f(X, theta), ordered like the disease design.
class AuxiliaryScoreModel {
 public:
  virtual ~AuxiliaryScoreModel() = default;
  virtual AuxMode mode() const = 0;
  virtual MatrixXd internal_values(const VectorXd& theta) const = 0;  // n x p
  virtual MatrixXd external_values(const VectorXd& theta) const = 0;  // m x p
  virtual bool depends_on_theta() const { return false; }
  // sum_i w_i df_i/dtheta over internal (or external) rows; zero unless depends_on_theta().
  virtual MatrixXd internal_jacobian_sum(const VectorXd& theta, const VectorXd& w) const;
  virtual MatrixXd external_jacobian_sum(const VectorXd& theta, const VectorXd& w) const;

  std::vector<double> training_mse;
};

class AuxBuilder {
 public:
  virtual ~AuxBuilder() = default;
  virtual std::shared_ptr<const AuxiliaryScoreModel> build(const VectorXd& theta) const = 0;
};

std::unique_ptr<AuxBuilder> make_aux_builder(const AnalysisContext& ctx, const JaipwConfig& cfg);

std::shared_ptr<const AuxiliaryScoreModel> build_aux_flexible(const AnalysisContext& ctx, const VectorXd& theta,
                                                              const JaipwConfig& cfg);
std::shared_ptr<const AuxiliaryScoreModel> build_aux_parametric(const AnalysisContext& ctx, const VectorXd& theta,
                                                                const JaipwConfig& cfg);

// Normal law Z1 | X with mean [1, X] gamma and Cholesky factor `chol`; `draws` is M x |Z1|
// standard normals shared by every row and every theta.
std::shared_ptr<const AuxiliaryScoreModel> make_parametric_aux(const AnalysisContext& ctx, MatrixXd gamma,
                                                               MatrixXd chol, MatrixXd draws, AuxTarget target);

// Regression targets for the flexible model: column 0 is r2, then r2 * Z1 per auxiliary variable.
MatrixXd flexible_targets(const AnalysisContext& ctx, const VectorXd& theta, AuxTarget target);

struct DrResult {
  EstimateReport report;
  std::shared_ptr<const AuxiliaryScoreModel> aux;
  int outer_iterations = 0;
  bool outer_converged = false;
};

// (1/N) sum (1/pi)(U - f) + (1/N) sum_ext (1/pi_ext) f.
VectorXd dr_score(const AnalysisContext& ctx, const VectorXd& pi_joint, const AuxiliaryScoreModel& aux,
                  const VectorXd& theta);

DrResult solve_dr(const AnalysisContext& ctx, const SelectionModelFit& fit, const AuxBuilder& builder,
                  const JaipwConfig& cfg);

struct DrComponent {
  const AnalysisContext* ctx;  // single-cohort context
  const SelectionModelFit* fit;
  const AuxBuilder* builder;
};

// Sum of cohort-specific doubly robust equations; cohorts must be disjoint.
DrResult solve_dr_no_overlap(const AnalysisContext& ctx, const std::vector<DrComponent>& parts,
                             const JaipwConfig& cfg);

MatrixXd variance_jaipw_approx(const AnalysisContext& ctx, const SelectionModelFit& fit, const AuxBuilder& builder,
                               const VectorXd& theta);

using Pipeline = std::function<VectorXd(std::shared_ptr<const CombinedSample>, std::shared_ptr<const ExternalSample>)>;

struct BootstrapResult {
  MatrixXd variance;
  MatrixXd replicates;  // successful replicates, one per row, in replicate order
  int failed = 0;
  int requested = 0;
};

// Resamples internal and external rows independently with replacement. A copy of a unit
// present in both samples stays linked to the same-numbered copy on the other side.
BootstrapResult variance_bootstrap(const CombinedSample& internal, std::shared_ptr<const ExternalSample> external,
                                   const Pipeline& pipeline, int replicates, std::uint64_t seed, int threads = 1);

}  // namespace jaipw
