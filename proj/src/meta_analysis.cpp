#include "jaipw/meta_analysis.hpp"

#include <cmath>

#include "jaipw/error.hpp"

namespace jaipw {

void MetaInput::validate() const {
  require(!entries.empty(), ErrorKind::InvalidArgument, "meta-analysis needs at least one cohort estimate");
  const Index p = entries.front().estimate.size();
  for (const auto& e : entries) {
    require(e.estimate.size() == p && e.variance.rows() == p && e.variance.cols() == p,
            ErrorKind::DimensionMismatch, "cohort '" + e.label + "' has mismatched dimensions");
    for (Index j = 0; j < p; ++j)
      if (!(e.variance(j, j) > 0.0))
        fail(ErrorKind::ZeroVariance, "cohort '" + e.label + "' has a non-positive variance for coordinate " +
                                          std::to_string(j));
  }
}

MetaInput fit_per_cohort(const AnalysisContext& ctx, const MethodSpec& spec) {
  MetaInput out;
  out.terms = ctx.disease_terms;
  for (Index i = 0; i < ctx.n_internal(); ++i) {
    if (ctx.internal->cohort_indicators.row(i).sum() > 1) {
      out.warnings.push_back("OverlapPresent: cohorts share units, so the per-cohort estimates are not independent");
      break;
    }
  }
  for (Index k = 0; k < ctx.cohorts(); ++k) {
    const std::string label = ctx.roles.cohorts[static_cast<size_t>(k)].name;
    try {
      const AnalysisContext sub = restrict_to_cohort(ctx, k);
      MethodSpec s = spec;
      if (!spec.strata.cohorts.empty()) s.strata.cohorts = {spec.strata.cohorts.at(static_cast<size_t>(k))};
      if (!spec.totals.totals.empty()) s.totals.totals = {spec.totals.totals.at(static_cast<size_t>(k))};
      if (spec.known_pi.size() > 0) {
        std::vector<Index> rows;
        for (Index i = 0; i < ctx.n_internal(); ++i)
          if (ctx.internal->cohort_indicators(i, k) == 1) rows.push_back(i);
        s.known_pi.resize(static_cast<Index>(rows.size()), 1);
        for (size_t r = 0; r < rows.size(); ++r) s.known_pi(static_cast<Index>(r), 0) = spec.known_pi(rows[r], k);
      }
      if (s.variance == VarianceFlavor::None) s.variance = VarianceFlavor::Auto;
      MethodOutcome res = run_method(sub, s);
      out.entries.push_back({label, res.report.estimate, res.report.variance});
      out.reports.push_back(std::move(res.report));
    } catch (const Error& e) {
      out.failures.push_back({label, e.what()});
    }
  }
  if (!out.failures.empty() && !out.entries.empty())
    out.warnings.push_back(std::to_string(out.failures.size()) + " cohort fits failed; combining the rest");
  return out;
}

EstimateReport combine_fixed_effects(const MetaInput& input) {
  input.validate();
  const Index p = input.entries.front().estimate.size();
  VectorXd wsum = VectorXd::Zero(p), acc = VectorXd::Zero(p);
  for (const auto& e : input.entries) {
    const VectorXd w = e.variance.diagonal().cwiseInverse();
    wsum += w;
    acc += w.cwiseProduct(e.estimate);
  }
  EstimateReport rep;
  rep.method = "Meta";
  rep.terms = input.terms;
  rep.estimate = acc.cwiseQuotient(wsum);
  rep.attach_variance(wsum.cwiseInverse().asDiagonal(), "fixed-effects");
  rep.warnings = input.warnings;
  for (const auto& f : input.failures) rep.warnings.push_back("cohort '" + f.label + "' failed: " + f.message);
  for (const auto& r : input.reports) rep.effective_n += r.effective_n;
  return rep;
}

}  // namespace jaipw
