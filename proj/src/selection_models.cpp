#include "jaipw/selection_models.hpp"

#include <cmath>
#include <set>

#include "jaipw/error.hpp"

namespace jaipw {

namespace {

VectorXd expit_vec(const VectorXd& eta) {
  return eta.unaryExpr([](double v) { return expit(v); });
}

double logit(double p) { return std::log(p / (1.0 - p)); }

// Clamps per-cohort probabilities and composes the joint probability.
void finalize(SelectionModelFit& fit, MatrixXd pi_int, MatrixXd pi_ext, double floor) {
  fit.floor = floor;
  fit.clamped = 0;
  for (Index k = 0; k < pi_int.cols(); ++k) {
    ClampResult c = clamp_probabilities(pi_int.col(k), floor);
    pi_int.col(k) = c.values;
    fit.clamped += c.clipped;
  }
  for (Index k = 0; k < pi_ext.cols(); ++k) pi_ext.col(k) = clamp_probabilities(pi_ext.col(k), floor).values;
  fit.pi_internal = std::move(pi_int);
  fit.pi_external = std::move(pi_ext);
  fit.pi_joint = compose_joint(fit.pi_internal);
  if (fit.clamped > 0)
    fit.warnings.push_back(std::to_string(fit.clamped) + " internal probabilities clamped to [" +
                           std::to_string(floor) + ", 1 - " + std::to_string(floor) + "]");
}

VectorXd initial_alpha(const AnalysisContext& ctx, Index k) {
  VectorXd a = VectorXd::Zero(ctx.selection_internal[static_cast<size_t>(k)].cols());
  const double share = static_cast<double>(ctx.cohort_size(k)) / ctx.population_size;
  a(0) = logit(std::min(std::max(share, 1e-6), 1.0 - 1e-6));
  return a;
}

const std::string& cohort_label(const AnalysisContext& ctx, Index k) {
  return ctx.roles.cohorts[static_cast<size_t>(k)].name;
}

}  // namespace

const char* method_name(SelectionMethod method) {
  switch (method) {
    case SelectionMethod::JPL: return "JPL";
    case SelectionMethod::JSR: return "JSR";
    case SelectionMethod::JPS: return "JPS";
    case SelectionMethod::JCL: return "JCL";
    case SelectionMethod::Known: return "Known";
  }
  return "?";
}

VectorXd compose_joint(const MatrixXd& pi) {
  VectorXd out(pi.rows());
  for (Index i = 0; i < pi.rows(); ++i) {
    double miss = 1.0;
    for (Index k = 0; k < pi.cols(); ++k) {
      require(pi(i, k) >= 0.0 && pi(i, k) <= 1.0, ErrorKind::InvalidArgument,
              "selection probabilities must lie in [0, 1]");
      miss *= 1.0 - pi(i, k);
    }
    out(i) = 1.0 - miss;
  }
  return out;
}

ClampResult clamp_probabilities(const VectorXd& pi, double floor) {
  require(floor > 0.0 && floor < 0.5, ErrorKind::InvalidArgument, "probability floor must lie in (0, 0.5)");
  ClampResult r{pi, 0};
  for (Index i = 0; i < pi.size(); ++i) {
    const double v = std::isnan(pi(i)) ? floor : pi(i);
    const double c = std::min(std::max(v, floor), 1.0 - floor);
    if (c != pi(i)) ++r.clipped;
    r.values(i) = c;
  }
  return r;
}

VectorXd jpl_residual(const AnalysisContext& ctx, Index k, const VectorXd& alpha) {
  const auto& xi = ctx.selection_internal[static_cast<size_t>(k)];
  const auto& xe = ctx.selection_external[static_cast<size_t>(k)];
  const VectorXd s = ctx.cohort_column(k);
  const VectorXd p = expit_vec(xe * alpha);
  const VectorXd w = p.cwiseQuotient(ctx.external->pi_ext);
  return (xi.transpose() * s - xe.transpose() * w) / ctx.population_size;
}

SelectionModelFit fit_jpl(const AnalysisContext& ctx, const SelectionConfig& cfg) {
  require(ctx.external != nullptr, ErrorKind::Config, "JPL requires an external sample");
  SelectionModelFit fit;
  fit.method = SelectionMethod::JPL;
  const double n_hat = ctx.external->pi_ext.cwiseInverse().sum();
  if (std::abs(n_hat - ctx.population_size) > 0.1 * ctx.population_size)
    fit.warnings.push_back("WeightSumMismatch: sum of 1/pi_ext = " + std::to_string(n_hat) +
                           " differs from N = " + std::to_string(ctx.population_size) + " by more than 10%");

  const Index K = ctx.cohorts();
  MatrixXd pi_int(ctx.n_internal(), K), pi_ext(ctx.n_external(), K);
  const VectorXd inv_pe = ctx.external->pi_ext.cwiseInverse();
  for (Index k = 0; k < K; ++k) {
    const auto& xi = ctx.selection_internal[static_cast<size_t>(k)];
    const auto& xe = ctx.selection_external[static_cast<size_t>(k)];
    auto score = [&](const VectorXd& a) { return jpl_residual(ctx, k, a); };
    auto jac = [&](const VectorXd& a) -> MatrixXd {
      const VectorXd p = expit_vec(xe * a);
      const VectorXd v = inv_pe.array() * p.array() * (1.0 - p.array());
      return -(xe.transpose() * v.asDiagonal() * xe) / ctx.population_size;
    };
    NewtonResult res;
    try {
      res = newton_solve(score, jac, initial_alpha(ctx, k), cfg.newton);
    } catch (const SolverError& e) {
      throw SolverError(e.kind(), "JPL cohort " + cohort_label(ctx, k) + ": " + e.what(), e.best(), e.residual());
    }
    fit.alpha.push_back(res.x);
    fit.diagnostics.push_back({true, res.iterations, res.residual, res.residual});
    pi_int.col(k) = expit_vec(xi * res.x);
    pi_ext.col(k) = expit_vec(xe * res.x);
  }
  finalize(fit, std::move(pi_int), std::move(pi_ext), cfg.floor);
  return fit;
}

SelectionModelFit fit_jsr(const AnalysisContext& ctx, const SelectionConfig& cfg) {
  require(ctx.external != nullptr, ErrorKind::Config, "JSR requires an external sample");
  SelectionModelFit fit;
  fit.method = SelectionMethod::JSR;
  const Index K = ctx.cohorts(), n = ctx.n_internal(), m = ctx.n_external();
  MatrixXd pi_int(n, K), pi_ext(m, K);

  for (Index k = 0; k < K; ++k) {
    const auto& xi = ctx.selection_internal[static_cast<size_t>(k)];
    const auto& xe = ctx.selection_external[static_cast<size_t>(k)];
    const Index q = xi.cols();

    // P(S_ext = 1 | X_k) from the design probabilities.
    SimplexFit sr = fit_simplex_mean_regression(xe, ctx.external->pi_ext, cfg.newton);

    // Membership categories over the union of cohort k and the external sample:
    // 0 = external only (reference), 1 = both, 2 = cohort only.
    std::vector<char> ext_in_cohort(static_cast<size_t>(m), 0);
    Index members = 0, both = 0;
    for (Index i = 0; i < n; ++i) {
      if (!ctx.internal->cohort_indicators(i, k)) continue;
      ++members;
      if (ctx.external_match(i) >= 0) {
        ext_in_cohort[static_cast<size_t>(ctx.external_match(i))] = 1;
        ++both;
      }
    }
    if (both == 0)
      fail(ErrorKind::OverlapCategoryEmpty,
           "JSR cohort " + cohort_label(ctx, k) + ": no unit is in both the cohort and the external sample");
    Index ext_only = 0;
    for (char c : ext_in_cohort) ext_only += c ? 0 : 1;
    MatrixXd xu(members + ext_only, q);
    VectorXi labels(members + ext_only);
    Index r = 0;
    for (Index i = 0; i < n; ++i) {
      if (!ctx.internal->cohort_indicators(i, k)) continue;
      xu.row(r) = xi.row(i);
      labels(r++) = ctx.external_match(i) >= 0 ? 1 : 2;
    }
    for (Index e = 0; e < m; ++e) {
      if (ext_in_cohort[static_cast<size_t>(e)]) continue;
      xu.row(r) = xe.row(e);
      labels(r++) = 0;
    }
    MultinomialFit mn = fit_multinomial_logistic(xu, labels, cfg.newton);
    if (mn.separation) fit.warnings.push_back("JSR cohort " + cohort_label(ctx, k) + ": multinomial separation");

    auto evaluate = [&](const MatrixXd& x) {
      const VectorXd pext = sr.predict(x);
      const MatrixXd pr = mn.predict(x);
      VectorXd out(x.rows());
      for (Index i = 0; i < x.rows(); ++i)
        out(i) = pext(i) * (pr(i, 1) + pr(i, 2)) / (pr(i, 1) + pr(i, 0));
      return out;
    };
    pi_int.col(k) = evaluate(xi);
    pi_ext.col(k) = evaluate(xe);

    VectorXd alpha(q + 2 * q);
    alpha << sr.coef, mn.coef.col(0), mn.coef.col(1);
    fit.alpha.push_back(alpha);
    fit.diagnostics.push_back({mn.converged, sr.iterations + mn.iterations,
                               std::max(sr.residual, mn.residual), 0.0});
  }
  finalize(fit, std::move(pi_int), std::move(pi_ext), cfg.floor);
  return fit;
}

int StratVariable::levels() const {
  return cutpoints.empty() ? 2 : static_cast<int>(cutpoints.size()) + 1;
}

int StratVariable::level_of(double value) const {
  if (cutpoints.empty()) {
    require(value == std::floor(value) && value >= 0, ErrorKind::DataFormat,
            "stratum variable '" + name + "' must be integer coded");
    return static_cast<int>(value);
  }
  int level = 0;
  for (double c : cutpoints)
    if (value > c) ++level;
  return level;
}

double CohortStrata::cell_probability(StrataMode mode, const std::vector<int>& key) const {
  if (mode == StrataMode::ExactJoint) {
    auto it = joint.find(key);
    return it == joint.end() ? 0.0 : it->second;
  }
  if (anchor < 0) {
    // Anchor outside the cell key: sum the conditional product over its levels.
    double total = 0.0;
    for (size_t al = 0; al < anchor_marginal.size(); ++al) {
      double p = anchor_marginal[al];
      for (size_t v = 0; v < variables.size() && p > 0.0; ++v) {
        const auto& table = conditionals[v];
        if (al >= table.size() || static_cast<size_t>(key[v]) >= table[al].size()) return 0.0;
        p *= table[al][static_cast<size_t>(key[v])];
      }
      total += p;
    }
    return total;
  }
  const auto a = static_cast<size_t>(anchor);
  const auto anchor_level = static_cast<size_t>(key[a]);
  if (anchor_level >= anchor_marginal.size()) return 0.0;
  double p = anchor_marginal[anchor_level];
  for (size_t v = 0; v < variables.size(); ++v) {
    if (v == a) continue;
    const auto& table = conditionals[v];
    if (anchor_level >= table.size() || static_cast<size_t>(key[v]) >= table[anchor_level].size()) return 0.0;
    p *= table[anchor_level][static_cast<size_t>(key[v])];
  }
  return p;
}

void StrataSpec::validate() const {
  for (const auto& c : cohorts) {
    require(!c.variables.empty(), ErrorKind::Config, "strata: a cohort has no stratification variables");
    for (const auto& v : c.variables)
      for (size_t j = 1; j < v.cutpoints.size(); ++j)
        require(v.cutpoints[j] > v.cutpoints[j - 1], ErrorKind::Config, "strata: cutpoints must increase");
    if (mode == StrataMode::ExactJoint) {
      double total = 0.0;
      for (const auto& [key, p] : c.joint) {
        require(p >= 0.0 && key.size() == c.variables.size(), ErrorKind::Config, "strata: invalid cell entry");
        total += p;
      }
      require(std::abs(total - 1.0) <= 1e-9, ErrorKind::Config, "strata: joint cell probabilities must sum to 1");
    } else {
      require(c.anchor >= -1 && c.anchor < static_cast<int>(c.variables.size()), ErrorKind::Config,
              "strata: anchor index out of range");
      require(c.conditionals.size() == c.variables.size(), ErrorKind::Config,
              "strata: one conditional table per variable is required");
      for (double p : c.anchor_marginal) require(p >= 0.0, ErrorKind::Config, "strata: negative probability");
      for (const auto& t : c.conditionals)
        for (const auto& row : t)
          for (double p : row) require(p >= 0.0, ErrorKind::Config, "strata: negative probability");
    }
  }
}

SelectionModelFit fit_jps(const AnalysisContext& ctx, const StrataSpec& strata, const SelectionConfig& cfg) {
  strata.validate();
  const Index K = ctx.cohorts(), n = ctx.n_internal();
  require(static_cast<Index>(strata.cohorts.size()) == K, ErrorKind::Config,
          "strata: one stratification per cohort is required");
  SelectionModelFit fit;
  fit.method = SelectionMethod::JPS;
  MatrixXd pi_int(n, K);
  const double N = ctx.population_size;

  for (Index k = 0; k < K; ++k) {
    const auto& cs = strata.cohorts[static_cast<size_t>(k)];
    std::vector<VectorXd> values;
    for (const auto& v : cs.variables) values.push_back(internal_term(*ctx.internal, v.name));
    std::vector<std::vector<int>> keys(static_cast<size_t>(n));
    std::map<std::vector<int>, double> counts;
    double n_k = 0.0;
    for (Index i = 0; i < n; ++i) {
      auto& key = keys[static_cast<size_t>(i)];
      for (size_t v = 0; v < cs.variables.size(); ++v) key.push_back(cs.variables[v].level_of(values[v](i)));
      if (ctx.internal->cohort_indicators(i, k)) {
        counts[key] += 1.0;
        n_k += 1.0;
      }
    }
    require(n_k > 0, ErrorKind::TooFewRows, "JPS cohort " + cohort_label(ctx, k) + " has no members");

    bool empty_member_cell = false;
    for (Index i = 0; i < n; ++i)
      if (!counts.count(keys[static_cast<size_t>(i)])) empty_member_cell = true;
    const bool smooth = empty_member_cell && strata.empty_cells == EmptyCellPolicy::Smooth;
    if (empty_member_cell && strata.empty_cells == EmptyCellPolicy::Error)
      fail(ErrorKind::EmptyCell, "JPS cohort " + cohort_label(ctx, k) +
                                     ": a selected row falls in a stratum with no cohort members");
    double n_cells = 1.0;
    for (const auto& v : cs.variables) n_cells *= v.levels();
    if (smooth)
      fit.warnings.push_back("ZeroCellSmoothed: add-one smoothing applied in cohort " + cohort_label(ctx, k));

    for (Index i = 0; i < n; ++i) {
      const auto& key = keys[static_cast<size_t>(i)];
      const double p_cell = cs.cell_probability(strata.mode, key);
      if (!(p_cell > 0.0))
        fail(ErrorKind::EmptyCell, "JPS cohort " + cohort_label(ctx, k) +
                                       ": a selected row falls in a population cell of probability 0");
      auto it = counts.find(key);
      const double c = it == counts.end() ? 0.0 : it->second;
      const double share = smooth ? (c + 1.0) / (n_k + n_cells) : c / n_k;
      pi_int(i, k) = share * (n_k / N) / p_cell;
    }
    fit.diagnostics.push_back({true, 0, 0.0, 0.0});
  }
  finalize(fit, std::move(pi_int), MatrixXd(ctx.n_external(), 0), cfg.floor);
  return fit;
}

VectorXd PopulationTotals::vector_for(const AnalysisContext& ctx, Index k) const {
  require(static_cast<Index>(totals.size()) == ctx.cohorts(), ErrorKind::Config,
          "calibration totals: one block per cohort is required");
  const auto& terms = ctx.selection_terms[static_cast<size_t>(k)];
  const auto& block = totals[static_cast<size_t>(k)];
  VectorXd t(static_cast<Index>(terms.size()));
  t(0) = population_size > 0 ? population_size : ctx.population_size;
  for (size_t j = 1; j < terms.size(); ++j) {
    auto it = block.find(terms[j]);
    if (it == block.end())
      fail(ErrorKind::Config, "calibration totals: no total for '" + terms[j] + "' in cohort " + cohort_label(ctx, k));
    require(std::isfinite(it->second), ErrorKind::Config, "calibration totals must be finite");
    t(static_cast<Index>(j)) = it->second;
  }
  return t;
}

VectorXd jcl_constraint_residual(const AnalysisContext& ctx, Index k, const VectorXd& alpha,
                                 const VectorXd& totals) {
  const auto& xi = ctx.selection_internal[static_cast<size_t>(k)];
  const VectorXd p = expit_vec(xi * alpha);
  VectorXd w(ctx.n_internal());
  for (Index i = 0; i < ctx.n_internal(); ++i) w(i) = ctx.internal->cohort_indicators(i, k) / p(i);
  return xi.transpose() * w - totals;
}

SelectionModelFit fit_jcl(const AnalysisContext& ctx, const PopulationTotals& totals, const SelectionConfig& cfg) {
  SelectionModelFit fit;
  fit.method = SelectionMethod::JCL;
  const Index K = ctx.cohorts(), n = ctx.n_internal();
  const double N = ctx.population_size;
  MatrixXd pi_int(n, K);
  MatrixXd pi_ext(ctx.n_external(), ctx.external ? K : 0);
  for (Index k = 0; k < K; ++k) {
    const VectorXd t = totals.vector_for(ctx, k);
    const auto& xi = ctx.selection_internal[static_cast<size_t>(k)];
    const VectorXd s = ctx.cohort_column(k);
    auto score = [&](const VectorXd& a) -> VectorXd { return jcl_constraint_residual(ctx, k, a, t) / N; };
    auto jac = [&](const VectorXd& a) -> MatrixXd {
      const VectorXd p = expit_vec(xi * a);
      const VectorXd v = s.array() * (1.0 - p.array()) / p.array();
      return -(xi.transpose() * v.asDiagonal() * xi) / N;
    };
    NewtonResult res;
    try {
      res = newton_solve(score, jac, initial_alpha(ctx, k), cfg.newton);
    } catch (const SolverError& e) {
      if (e.best().norm() > 1e3)
        throw SolverError(ErrorKind::InfeasibleCalibration,
                          "JCL cohort " + cohort_label(ctx, k) + ": totals unreachable by a logistic model",
                          e.best(), e.residual());
      throw SolverError(e.kind(), "JCL cohort " + cohort_label(ctx, k) + ": " + e.what(), e.best(), e.residual());
    }
    const double cres = jcl_constraint_residual(ctx, k, res.x, t).cwiseAbs().maxCoeff();
    fit.alpha.push_back(res.x);
    fit.diagnostics.push_back({true, res.iterations, res.residual, cres / t.norm()});
    pi_int.col(k) = expit_vec(xi * res.x);
    if (ctx.external) pi_ext.col(k) = expit_vec(ctx.selection_external[static_cast<size_t>(k)] * res.x);
  }
  finalize(fit, std::move(pi_int), std::move(pi_ext), cfg.floor);
  return fit;
}

SelectionModelFit known_selection(const AnalysisContext& ctx, const MatrixXd& pi_internal,
                                  const SelectionConfig& cfg) {
  require(pi_internal.rows() == ctx.n_internal() && pi_internal.cols() == ctx.cohorts(),
          ErrorKind::DimensionMismatch, "known probabilities must be n x K");
  require(pi_internal.allFinite() && (pi_internal.array() >= 0).all() && (pi_internal.array() <= 1).all(),
          ErrorKind::DataFormat, "known probabilities must lie in [0, 1]");
  SelectionModelFit fit;
  fit.method = SelectionMethod::Known;
  for (Index k = 0; k < ctx.cohorts(); ++k) fit.diagnostics.push_back({});
  finalize(fit, pi_internal, MatrixXd(ctx.n_external(), 0), cfg.floor);
  return fit;
}

}  // namespace jaipw
