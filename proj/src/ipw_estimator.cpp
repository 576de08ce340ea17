#include "jaipw/ipw_estimator.hpp"

#include <cmath>

#include "jaipw/error.hpp"

namespace jaipw {

namespace {

VectorXd mean_vector(const AnalysisContext& ctx, const VectorXd& theta) {
  return (ctx.disease_design * theta).unaryExpr([](double v) { return expit(v); });
}

// Weighted information and squared-score sums shared by every sandwich.
void bread_and_meat(const AnalysisContext& ctx, const VectorXd& pi, const VectorXd& theta, MatrixXd& g_theta,
                    MatrixXd& e1) {
  const auto& z = ctx.disease_design;
  const VectorXd mu = mean_vector(ctx, theta);
  const double N = ctx.population_size;
  const Index n = z.rows();
  VectorXd wi(n), we(n);
  for (Index i = 0; i < n; ++i) {
    const double r = ctx.internal->outcome(i) - mu(i);
    wi(i) = mu(i) * (1.0 - mu(i)) / pi(i);
    we(i) = r * r / (pi(i) * pi(i));
  }
  g_theta = -(z.transpose() * wi.asDiagonal() * z) / N;
  e1 = (z.transpose() * we.asDiagonal() * z) / N;
}

// Derivative of the weighted score with respect to the stacked selection parameters.
MatrixXd g_alpha_block(const AnalysisContext& ctx, const SelectionModelFit& fit, const VectorXd& theta) {
  const auto& z = ctx.disease_design;
  const VectorXd mu = mean_vector(ctx, theta);
  const Index n = z.rows(), K = ctx.cohorts();
  Index Q = 0;
  for (const auto& x : ctx.selection_internal) Q += x.cols();
  MatrixXd g(z.cols(), Q);
  VectorXd base(n);
  for (Index i = 0; i < n; ++i) {
    double miss = 1.0;
    for (Index k = 0; k < K; ++k) miss *= 1.0 - fit.pi_internal(i, k);
    const double pi = fit.pi_joint(i);
    base(i) = miss / (pi * pi) * (ctx.internal->outcome(i) - mu(i));
  }
  Index off = 0;
  for (Index k = 0; k < K; ++k) {
    const auto& x = ctx.selection_internal[static_cast<size_t>(k)];
    const VectorXd v = base.cwiseProduct(fit.pi_internal.col(k));
    g.block(0, off, z.cols(), x.cols()) = -(z.transpose() * v.asDiagonal() * x) / ctx.population_size;
    off += x.cols();
  }
  return g;
}

MatrixXd internal_g(const AnalysisContext& ctx, const VectorXd& pi, const VectorXd& theta) {
  const VectorXd mu = mean_vector(ctx, theta);
  VectorXd r = (ctx.internal->outcome - mu).cwiseQuotient(pi);
  return r.asDiagonal() * ctx.disease_design;  // n x p
}

void require_selection_dims(const AnalysisContext& ctx, const SelectionModelFit& fit) {
  require(fit.pi_internal.rows() == ctx.n_internal() && fit.pi_internal.cols() == ctx.cohorts() &&
              fit.pi_joint.size() == ctx.n_internal(),
          ErrorKind::DimensionMismatch, "selection fit does not match the analysis context");
}

}  // namespace

void EstimateReport::attach_variance(const MatrixXd& v, const std::string& flavor) {
  const Index p = estimate.size();
  require(v.rows() == p && v.cols() == p, ErrorKind::DimensionMismatch, "variance has wrong shape");
  variance = v;
  variance_flavor = flavor;
  se.resize(p);
  ci_low.resize(p);
  ci_high.resize(p);
  for (Index j = 0; j < p; ++j) {
    se(j) = std::sqrt(std::max(v(j, j), 0.0));
    ci_low(j) = estimate(j) - kNormalQuantile975 * se(j);
    ci_high(j) = estimate(j) + kNormalQuantile975 * se(j);
  }
}

VectorXd ipw_score(const AnalysisContext& ctx, const VectorXd& pi_joint, const VectorXd& theta) {
  const VectorXd mu = mean_vector(ctx, theta);
  const VectorXd r = (ctx.internal->outcome - mu).cwiseQuotient(pi_joint);
  return ctx.disease_design.transpose() * r / ctx.population_size;
}

EstimateReport fit_ipw(const AnalysisContext& ctx, const SelectionModelFit& fit, const NewtonConfig& cfg) {
  require_selection_dims(ctx, fit);
  const VectorXd w = fit.pi_joint.cwiseInverse();
  LogisticFit lf = fit_weighted_logistic(ctx.disease_design, ctx.internal->outcome, w, cfg);
  EstimateReport rep;
  rep.method = std::string("IPW-") + method_name(fit.method);
  rep.terms = ctx.disease_terms;
  rep.estimate = lf.coef;
  rep.converged = lf.converged;
  rep.iterations = lf.iterations;
  rep.residual = ipw_score(ctx, fit.pi_joint, lf.coef).cwiseAbs().maxCoeff();
  rep.effective_n = ctx.n_internal();
  rep.warnings = fit.warnings;
  if (lf.separation) rep.warnings.push_back("Separation: disease model fit is quasi-separated");
  return rep;
}

EstimateReport fit_unweighted(const AnalysisContext& ctx, bool cohort_intercepts, const NewtonConfig& cfg) {
  const Index n = ctx.n_internal(), p = ctx.dim(), K = ctx.cohorts();
  MatrixXd x = ctx.disease_design;
  if (cohort_intercepts && K > 1) {
    x.conservativeResize(n, p + K - 1);
    for (Index k = 1; k < K; ++k) x.col(p + k - 1) = ctx.cohort_column(k);
  }
  LogisticFit lf = fit_weighted_logistic(x, ctx.internal->outcome, VectorXd::Ones(n), cfg);
  EstimateReport rep;
  rep.method = cohort_intercepts ? "Unweighted-CohortIntercepts" : "Unweighted";
  rep.terms = ctx.disease_terms;
  rep.estimate = lf.coef.head(p);
  rep.converged = lf.converged;
  rep.iterations = lf.iterations;
  rep.residual = lf.residual;
  rep.effective_n = n;
  if (lf.separation) rep.warnings.push_back("Separation: disease model fit is quasi-separated");
  return rep;
}

MatrixXd assemble_sandwich(const SandwichPieces& pc, double population_size, const VarianceOptions& opts) {
  if (condition_number(pc.g_theta) > 1e12) fail(ErrorKind::SingularBread, "information matrix is singular");
  MatrixXd e = pc.e1;
  if (opts.include_nuisance && pc.h.size() > 0) {
    if (condition_number(pc.h) > 1e12) fail(ErrorKind::SingularH, "selection-model Jacobian is singular");
    const MatrixXd a = pc.g_alpha * pc.h.partialPivLu().inverse();  // p x Q
    const MatrixXd e2 = a * pc.e_hg;
    e = pc.e1 - e2 - e2.transpose() + a * pc.e_hh * a.transpose();
  }
  const MatrixXd ginv = pc.g_theta.partialPivLu().inverse();
  MatrixXd v = ginv * e * ginv.transpose() / population_size;
  return 0.5 * (v + v.transpose());
}

MatrixXd variance_known(const AnalysisContext& ctx, const SelectionModelFit& fit, const VectorXd& theta) {
  require_selection_dims(ctx, fit);
  SandwichPieces pc;
  bread_and_meat(ctx, fit.pi_joint, theta, pc.g_theta, pc.e1);
  return assemble_sandwich(pc, ctx.population_size, {false});
}

SandwichPieces jpl_pieces(const AnalysisContext& ctx, const SelectionModelFit& fit, const VectorXd& theta) {
  require_selection_dims(ctx, fit);
  require(ctx.external != nullptr && fit.pi_external.cols() == ctx.cohorts(), ErrorKind::InvalidArgument,
          "JPL variance needs external-sample probabilities");
  SandwichPieces pc;
  bread_and_meat(ctx, fit.pi_joint, theta, pc.g_theta, pc.e1);
  pc.g_alpha = g_alpha_block(ctx, fit, theta);

  const Index n = ctx.n_internal(), m = ctx.n_external(), K = ctx.cohorts();
  const double N = ctx.population_size;
  Index Q = pc.g_alpha.cols();
  pc.h = MatrixXd::Zero(Q, Q);

  // Per-unit h: internal part S_k X_k, external part -(pi_k / pi_ext) X_k.
  MatrixXd h_int = MatrixXd::Zero(n, Q);
  MatrixXd h_ext = MatrixXd::Zero(m, Q);
  Index off = 0;
  for (Index k = 0; k < K; ++k) {
    const auto& xi = ctx.selection_internal[static_cast<size_t>(k)];
    const auto& xe = ctx.selection_external[static_cast<size_t>(k)];
    const Index q = xi.cols();
    const VectorXd pk = fit.pi_external.col(k);
    const VectorXd ratio = pk.cwiseQuotient(ctx.external->pi_ext);
    const VectorXd hw = ratio.array() * (1.0 - pk.array());
    pc.h.block(off, off, q, q) = -(xe.transpose() * hw.asDiagonal() * xe) / N;
    h_int.middleCols(off, q) = ctx.cohort_column(k).asDiagonal() * xi;
    h_ext.middleCols(off, q) = -(ratio.asDiagonal() * xe);
    off += q;
  }

  // Units: internal rows (plus their linked external row) and external-only rows.
  MatrixXd h_unit = h_int;
  std::vector<char> linked(static_cast<size_t>(m), 0);
  for (const auto& [i, e] : ctx.overlap) {
    h_unit.row(i) += h_ext.row(e);
    linked[static_cast<size_t>(e)] = 1;
  }
  const MatrixXd g = internal_g(ctx, fit.pi_joint, theta);
  pc.e_hg = h_unit.transpose() * g / N;
  pc.e_hh = h_unit.transpose() * h_unit;
  for (Index e = 0; e < m; ++e)
    if (!linked[static_cast<size_t>(e)]) pc.e_hh.noalias() += h_ext.row(e).transpose() * h_ext.row(e);
  pc.e_hh /= N;
  return pc;
}

MatrixXd variance_jpl(const AnalysisContext& ctx, const SelectionModelFit& fit, const VectorXd& theta,
                      const VarianceOptions& opts) {
  return assemble_sandwich(jpl_pieces(ctx, fit, theta), ctx.population_size, opts);
}

SandwichPieces jcl_pieces(const AnalysisContext& ctx, const SelectionModelFit& fit, const VectorXd& theta) {
  require_selection_dims(ctx, fit);
  SandwichPieces pc;
  bread_and_meat(ctx, fit.pi_joint, theta, pc.g_theta, pc.e1);
  pc.g_alpha = g_alpha_block(ctx, fit, theta);

  const Index n = ctx.n_internal(), K = ctx.cohorts();
  const double N = ctx.population_size;
  const Index Q = pc.g_alpha.cols();
  pc.h = MatrixXd::Zero(Q, Q);
  MatrixXd x_all(n, Q);   // stacked X_k
  MatrixXd x_cal(n, Q);   // stacked S_k X_k / pi_k
  Index off = 0;
  for (Index k = 0; k < K; ++k) {
    const auto& xi = ctx.selection_internal[static_cast<size_t>(k)];
    const Index q = xi.cols();
    const VectorXd sk = ctx.cohort_column(k);
    const VectorXd pk = fit.pi_internal.col(k);
    const VectorXd hw = sk.array() * (1.0 - pk.array()) / pk.array();
    pc.h.block(off, off, q, q) = -(xi.transpose() * hw.asDiagonal() * xi) / N;
    x_all.middleCols(off, q) = xi;
    x_cal.middleCols(off, q) = sk.cwiseQuotient(pk).asDiagonal() * xi;
    off += q;
  }
  const MatrixXd g = internal_g(ctx, fit.pi_joint, theta);
  // Population sums over X are replaced by their design-weighted internal counterparts.
  pc.e_hg = (x_cal - x_all).transpose() * g / N;
  const MatrixXd cross = x_all.transpose() * x_cal;
  const VectorXd inv_pi = fit.pi_joint.cwiseInverse();
  pc.e_hh = (x_cal.transpose() * x_cal - cross - cross.transpose() +
             x_all.transpose() * inv_pi.asDiagonal() * x_all) / N;
  return pc;
}

MatrixXd variance_jcl(const AnalysisContext& ctx, const SelectionModelFit& fit, const VectorXd& theta,
                      const VarianceOptions& opts) {
  return assemble_sandwich(jcl_pieces(ctx, fit, theta), ctx.population_size, opts);
}

}  // namespace jaipw
