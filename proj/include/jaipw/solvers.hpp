#pragma once

#include <functional>
#include <optional>

#include "jaipw/data_model.hpp"

namespace jaipw {

struct NewtonConfig {
  double tol_params = 1e-8;
  double tol_residual = 1e-8;
  int max_iter = 100;
  int step_halving_max = 20;
  double max_condition = 1e12;

  void validate() const;
};

struct NewtonResult {
  VectorXd x;
  int iterations = 0;
  double residual = 0.0;   // max-norm of the score at x
  double last_step = 0.0;  // max-norm of the final accepted step
  bool converged = false;
};

using VectorFunction = std::function<VectorXd(const VectorXd&)>;
using MatrixFunction = std::function<MatrixXd(const VectorXd&)>;

// Damped Newton-Raphson: a step is halved while it increases the residual norm.
// Throws SolverError (SingularJacobian or NoConvergence) carrying the best iterate.
NewtonResult newton_solve(const VectorFunction& score, const MatrixFunction& jacobian,
                          const VectorXd& init, const NewtonConfig& cfg = {});

// Reciprocal-free condition number via singular values; infinity when singular.
double condition_number(const MatrixXd& m);

struct LogisticOptions {
  // Solves sum w (y - expit(x'b)) x = shift instead of = 0.
  std::optional<VectorXd> score_shift;
  std::optional<VectorXd> init;
};

struct LogisticFit {
  VectorXd coef;
  VectorXd fitted;
  int iterations = 0;
  double residual = 0.0;  // max-norm of the weight-normalized score
  bool converged = false;
  bool separation = false;
};

// The score is normalized by the weight total, which makes convergence invariant to weight scale.
LogisticFit fit_weighted_logistic(const MatrixXd& x, const VectorXd& y, const VectorXd& w,
                                  const NewtonConfig& cfg = {}, const LogisticOptions& opts = {});

struct MultinomialFit {
  MatrixXd coef;   // q x 2, columns for categories 1 and 2; category 0 is the reference
  MatrixXd probs;  // n x 3
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  bool separation = false;

  MatrixXd predict(const MatrixXd& x) const;
};

// Labels must be 0, 1 or 2 with every category present.
MultinomialFit fit_multinomial_logistic(const MatrixXd& x, const VectorXi& labels,
                                        const NewtonConfig& cfg = {});

struct SimplexFit {
  VectorXd coef;
  VectorXd fitted;
  double dispersion = 0.0;  // sigma^2, profiled out as the mean unit deviance
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;

  VectorXd predict(const MatrixXd& x) const;
};

// Unit deviance of the simplex distribution.
double simplex_deviance(double y, double mu);

// Maximum likelihood under the simplex distribution, logit mean link, constant dispersion.
SimplexFit fit_simplex_mean_regression(const MatrixXd& x, const VectorXd& p,
                                       const NewtonConfig& cfg = {});

}  // namespace jaipw
