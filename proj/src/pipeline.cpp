#include "jaipw/pipeline.hpp"

#include <map>

#include "jaipw/error.hpp"

namespace jaipw {

namespace {

const std::map<std::string, EstimatorKind>& estimator_table() {
  static const std::map<std::string, EstimatorKind> table{
      {"Unweighted", EstimatorKind::Unweighted},
      {"UnweightedCohortIntercepts", EstimatorKind::UnweightedCohortIntercepts},
      {"Known", EstimatorKind::Known},
      {"JPL", EstimatorKind::JPL},
      {"JSR", EstimatorKind::JSR},
      {"JPS", EstimatorKind::JPS},
      {"JCL", EstimatorKind::JCL},
      {"JAIPW", EstimatorKind::JAIPW}};
  return table;
}

SelectionMethod selection_of(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Known: return SelectionMethod::Known;
    case EstimatorKind::JPL: return SelectionMethod::JPL;
    case EstimatorKind::JSR: return SelectionMethod::JSR;
    case EstimatorKind::JPS: return SelectionMethod::JPS;
    case EstimatorKind::JCL: return SelectionMethod::JCL;
    default: fail(ErrorKind::InvalidArgument, "estimator has no selection model");
  }
}

MatrixXd corrected_or_known(const AnalysisContext& ctx, const SelectionModelFit& fit, const VectorXd& theta,
                            bool corrected) {
  if (corrected && fit.method == SelectionMethod::JPL) return variance_jpl(ctx, fit, theta);
  if (corrected && fit.method == SelectionMethod::JCL) return variance_jcl(ctx, fit, theta);
  return variance_known(ctx, fit, theta);
}

const char* flavor_label(VarianceFlavor v, SelectionMethod m) {
  switch (v) {
    case VarianceFlavor::Known: return "known-weight";
    case VarianceFlavor::Approx: return "approximate";
    case VarianceFlavor::Bootstrap: return "bootstrap";
    default: return (m == SelectionMethod::JPL || m == SelectionMethod::JCL) ? "corrected" : "known-weight";
  }
}

}  // namespace

const char* estimator_name(EstimatorKind kind) {
  for (const auto& [name, k] : estimator_table())
    if (k == kind) return name.c_str();
  return "?";
}

EstimatorKind parse_estimator(const std::string& name) {
  const auto it = estimator_table().find(name);
  if (it == estimator_table().end()) fail(ErrorKind::Config, "unknown method '" + name + "'");
  return it->second;
}

VarianceFlavor parse_variance_flavor(const std::string& name) {
  static const std::map<std::string, VarianceFlavor> table{{"none", VarianceFlavor::None},
                                                           {"auto", VarianceFlavor::Auto},
                                                           {"known", VarianceFlavor::Known},
                                                           {"corrected", VarianceFlavor::Corrected},
                                                           {"approx", VarianceFlavor::Approx},
                                                           {"bootstrap", VarianceFlavor::Bootstrap}};
  const auto it = table.find(name);
  if (it == table.end()) fail(ErrorKind::Config, "unknown variance flavor '" + name + "'");
  return it->second;
}

SelectionModelFit fit_selection(const AnalysisContext& ctx, SelectionMethod method, const MethodSpec& spec) {
  switch (method) {
    case SelectionMethod::JPL: return fit_jpl(ctx, spec.selection_cfg);
    case SelectionMethod::JSR: return fit_jsr(ctx, spec.selection_cfg);
    case SelectionMethod::JPS: return fit_jps(ctx, spec.strata, spec.selection_cfg);
    case SelectionMethod::JCL: return fit_jcl(ctx, spec.totals, spec.selection_cfg);
    case SelectionMethod::Known: return known_selection(ctx, spec.known_pi, spec.selection_cfg);
  }
  fail(ErrorKind::InvalidArgument, "unknown selection method");
}

MatrixXd variance_unweighted(const AnalysisContext& ctx, const VectorXd& theta) {
  SelectionModelFit ones;
  ones.pi_internal = MatrixXd::Ones(ctx.n_internal(), ctx.cohorts());
  ones.pi_joint = VectorXd::Ones(ctx.n_internal());
  return variance_known(ctx, ones, theta);
}

MethodOutcome run_method(const AnalysisContext& ctx, const MethodSpec& spec) {
  MethodOutcome out;
  const VarianceFlavor v = spec.variance;

  if (spec.kind == EstimatorKind::Unweighted || spec.kind == EstimatorKind::UnweightedCohortIntercepts) {
    const bool intercepts = spec.kind == EstimatorKind::UnweightedCohortIntercepts;
    out.report = fit_unweighted(ctx, intercepts, spec.selection_cfg.newton);
    // The cohort-intercept fit has extra nuisance columns, so only the plain fit gets a sandwich.
    if (v != VarianceFlavor::None && !intercepts) {
      require(v == VarianceFlavor::Auto || v == VarianceFlavor::Known, ErrorKind::Config,
              "unweighted fits support only the known-weight sandwich");
      out.report.attach_variance(variance_unweighted(ctx, out.report.estimate), "known-weight");
    }
    return out;
  }

  if (spec.kind == EstimatorKind::JAIPW) {
    SelectionModelFit fit = fit_selection(ctx, spec.selection, spec);
    auto builder = make_aux_builder(ctx, spec.jaipw);
    DrResult dr = solve_dr(ctx, fit, *builder, spec.jaipw);
    out.report = std::move(dr.report);
    out.report.method = std::string("JAIPW-") + method_name(spec.selection);
    if (v == VarianceFlavor::Auto || v == VarianceFlavor::Approx) {
      out.report.attach_variance(variance_jaipw_approx(ctx, fit, *builder, out.report.estimate), "approximate");
    } else if (v == VarianceFlavor::Bootstrap) {
      require(spec.selection != SelectionMethod::Known, ErrorKind::Config,
              "bootstrap cannot resample user-supplied selection probabilities");
      const VariableRoles roles = ctx.roles;
      const DiseaseModelSpec disease = ctx.disease;
      const ContextOptions options = ctx.options;
      MethodSpec inner = spec;
      inner.variance = VarianceFlavor::None;
      Pipeline pipe = [roles, disease, options, inner](std::shared_ptr<const CombinedSample> s,
                                                       std::shared_ptr<const ExternalSample> e) {
        const AnalysisContext c = validate_roles(std::move(s), std::move(e), roles, disease, options);
        return run_method(c, inner).report.estimate;
      };
      BootstrapResult b = variance_bootstrap(*ctx.internal, ctx.external, pipe, spec.jaipw.bootstrap_replicates,
                                             spec.jaipw.seed, spec.threads);
      out.report.attach_variance(b.variance, "bootstrap");
      if (b.failed > 0)
        out.report.warnings.push_back(std::to_string(b.failed) + " bootstrap replicates failed and were dropped");
    } else if (v != VarianceFlavor::None) {
      fail(ErrorKind::Config, "JAIPW supports approximate or bootstrap variances only");
    }
    out.fit = std::move(fit);
    return out;
  }

  const SelectionMethod method = selection_of(spec.kind);
  SelectionModelFit fit = fit_selection(ctx, method, spec);
  out.report = fit_ipw(ctx, fit, spec.selection_cfg.newton);
  switch (v) {
    case VarianceFlavor::None: break;
    case VarianceFlavor::Auto:
    case VarianceFlavor::Corrected:
      out.report.attach_variance(corrected_or_known(ctx, fit, out.report.estimate, true), flavor_label(v, method));
      break;
    case VarianceFlavor::Known:
      out.report.attach_variance(variance_known(ctx, fit, out.report.estimate), "known-weight");
      break;
    default: fail(ErrorKind::Config, "variance flavor not available for IPW estimators");
  }
  out.fit = std::move(fit);
  return out;
}

}  // namespace jaipw
