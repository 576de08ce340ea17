#include "jaipw/dr_estimator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <thread>

#include "jaipw/error.hpp"
#include "jaipw/rng.hpp"

namespace jaipw {

namespace {

VectorXd expit_vec(const VectorXd& eta) {
  return eta.unaryExpr([](double v) { return expit(v); });
}

bool is_aux_position(const AnalysisContext& ctx, Index c, Index& which) {
  for (size_t a = 0; a < ctx.aux_positions.size(); ++a) {
    if (ctx.aux_positions[a] == c) {
      which = static_cast<Index>(a);
      return true;
    }
  }
  return false;
}

// Disease design for external rows; auxiliary columns are left at zero.
MatrixXd external_design(const AnalysisContext& ctx) {
  const Index m = ctx.n_external(), p = ctx.dim();
  MatrixXd z = MatrixXd::Zero(m, p);
  for (Index c = 0; c < p; ++c) {
    Index a = 0;
    const auto& term = ctx.disease_terms[static_cast<size_t>(c)];
    if (term == kIntercept) {
      z.col(c).setOnes();
    } else if (!is_aux_position(ctx, c, a)) {
      z.col(c) = ctx.external->covariates.column(term, "external sample");
    }
  }
  return z;
}

// Expands [f2, f1...] into the score ordering: intercept -> f2, auxiliary -> f1, other Z -> f2 * Z.
MatrixXd assemble_aux(const AnalysisContext& ctx, const MatrixXd& components, const MatrixXd& design) {
  const Index rows = components.rows(), p = ctx.dim();
  MatrixXd f(rows, p);
  for (Index c = 0; c < p; ++c) {
    Index a = 0;
    if (ctx.disease_terms[static_cast<size_t>(c)] == kIntercept) {
      f.col(c) = components.col(0);
    } else if (is_aux_position(ctx, c, a)) {
      f.col(c) = components.col(1 + a);
    } else {
      f.col(c) = components.col(0).cwiseProduct(design.col(c));
    }
  }
  return f;
}

class ZeroAux final : public AuxiliaryScoreModel {
 public:
  ZeroAux(Index n, Index m, Index p) : n_(n), m_(m), p_(p) {}
  AuxMode mode() const override { return AuxMode::Zero; }
  MatrixXd internal_values(const VectorXd&) const override { return MatrixXd::Zero(n_, p_); }
  MatrixXd external_values(const VectorXd&) const override { return MatrixXd::Zero(m_, p_); }

 private:
  Index n_, m_, p_;
};

class FlexibleAux final : public AuxiliaryScoreModel {
 public:
  MatrixXd f_int, f_ext;
  AuxMode mode() const override { return AuxMode::Flexible; }
  MatrixXd internal_values(const VectorXd&) const override { return f_int; }
  MatrixXd external_values(const VectorXd&) const override { return f_ext; }
};

class ParametricAux final : public AuxiliaryScoreModel {
 public:
  ParametricAux(const AnalysisContext& ctx, MatrixXd gamma, MatrixXd chol, MatrixXd draws, AuxTarget target)
      : gamma_(std::move(gamma)), chol_(std::move(chol)), draws_(std::move(draws)), target_(target) {
    const Index a = static_cast<Index>(ctx.aux_positions.size());
    require(a > 0, ErrorKind::EmptyAuxiliary, "parametric auxiliary model needs auxiliary variables");
    require(gamma_.cols() == a && chol_.rows() == a && chol_.cols() == a && draws_.cols() == a,
            ErrorKind::DimensionMismatch, "parametric auxiliary model: inconsistent dimensions");
    require(std::find(ctx.aux_features.begin(), ctx.aux_features.end(), kOutcome) != ctx.aux_features.end(),
            ErrorKind::Config, "parametric auxiliary model requires the outcome among the features");
    positions_ = ctx.aux_positions;
    x_int_.resize(ctx.n_internal(), ctx.aux_internal.cols() + 1);
    x_int_ << VectorXd::Ones(ctx.n_internal()), ctx.aux_internal;
    require(gamma_.rows() == x_int_.cols(), ErrorKind::DimensionMismatch, "parametric auxiliary model: gamma rows");
    z_int_ = ctx.disease_design;
    d_int_ = ctx.internal->outcome;
    if (ctx.external) {
      x_ext_.resize(ctx.n_external(), ctx.aux_external.cols() + 1);
      x_ext_ << VectorXd::Ones(ctx.n_external()), ctx.aux_external;
      z_ext_ = external_design(ctx);
      d_ext_ = ctx.external->covariates.column(kOutcome, "external sample");
    }
    shift_ = draws_ * chol_.transpose();  // M x a
  }

  AuxMode mode() const override { return AuxMode::Parametric; }
  bool depends_on_theta() const override { return true; }
  MatrixXd internal_values(const VectorXd& theta) const override {
    MatrixXd f;
    integrate(x_int_, z_int_, d_int_, theta, &f, nullptr, nullptr);
    return f;
  }
  MatrixXd external_values(const VectorXd& theta) const override {
    MatrixXd f;
    integrate(x_ext_, z_ext_, d_ext_, theta, &f, nullptr, nullptr);
    return f;
  }
  MatrixXd internal_jacobian_sum(const VectorXd& theta, const VectorXd& w) const override {
    MatrixXd j;
    integrate(x_int_, z_int_, d_int_, theta, nullptr, &j, &w);
    return j;
  }
  MatrixXd external_jacobian_sum(const VectorXd& theta, const VectorXd& w) const override {
    MatrixXd j;
    integrate(x_ext_, z_ext_, d_ext_, theta, nullptr, &j, &w);
    return j;
  }

 private:
  void integrate(const MatrixXd& x, const MatrixXd& z, const VectorXd& d, const VectorXd& theta, MatrixXd* f,
                 MatrixXd* jac, const VectorXd* w) const {
    const Index rows = x.rows(), p = z.cols(), M = draws_.rows();
    if (f) *f = MatrixXd::Zero(rows, p);
    if (jac) *jac = MatrixXd::Zero(p, p);
    const MatrixXd mean = x * gamma_;  // rows x a
    VectorXd v(p), acc(p);
    MatrixXd jacc(p, p);
    for (Index i = 0; i < rows; ++i) {
      acc.setZero();
      if (jac) jacc.setZero();
      for (Index m = 0; m < M; ++m) {
        v = z.row(i).transpose();
        for (size_t a = 0; a < positions_.size(); ++a)
          v(positions_[a]) = mean(i, static_cast<Index>(a)) + shift_(m, static_cast<Index>(a));
        const double mu = expit(theta.dot(v));
        if (f) acc += (target_ == AuxTarget::Projection ? d(i) - mu : d(i) * (1.0 - mu)) * v;
        if (jac) {
          const double s = target_ == AuxTarget::Projection ? mu * (1.0 - mu) : d(i) * mu * (1.0 - mu);
          jacc.noalias() -= s * v * v.transpose();
        }
      }
      if (f) f->row(i) = acc.transpose() / static_cast<double>(M);
      if (jac) *jac += (*w)(i) * jacc / static_cast<double>(M);
    }
  }

  MatrixXd gamma_, chol_, draws_, shift_;
  AuxTarget target_;
  std::vector<Index> positions_;
  MatrixXd x_int_, x_ext_, z_int_, z_ext_;
  VectorXd d_int_, d_ext_;
};

class ZeroBuilder final : public AuxBuilder {
 public:
  explicit ZeroBuilder(const AnalysisContext& ctx)
      : model_(std::make_shared<ZeroAux>(ctx.n_internal(), ctx.n_external(), ctx.dim())) {}
  std::shared_ptr<const AuxiliaryScoreModel> build(const VectorXd&) const override { return model_; }

 private:
  std::shared_ptr<const AuxiliaryScoreModel> model_;
};

class FlexibleBuilder final : public AuxBuilder {
 public:
  FlexibleBuilder(const AnalysisContext& ctx, const JaipwConfig& cfg)
      : ctx_(ctx), cfg_(cfg), trainer_(ctx.aux_internal, cfg.flex), z_ext_(external_design(ctx)) {}

  std::shared_ptr<const AuxiliaryScoreModel> build(const VectorXd& theta) const override {
    const MatrixXd targets = flexible_targets(ctx_, theta, cfg_.target);
    MatrixXd comp_int(ctx_.n_internal(), targets.cols()), comp_ext(ctx_.n_external(), targets.cols());
    auto model = std::make_shared<FlexibleAux>();
    for (Index c = 0; c < targets.cols(); ++c) {
      auto reg = trainer_.fit(targets.col(c));
      comp_int.col(c) = reg->training_predictions;
      comp_ext.col(c) = reg->predict(ctx_.aux_external);
      model->training_mse.push_back(reg->training_mse);
    }
    model->f_int = assemble_aux(ctx_, comp_int, ctx_.disease_design);
    model->f_ext = assemble_aux(ctx_, comp_ext, z_ext_);
    return model;
  }

 private:
  const AnalysisContext& ctx_;
  JaipwConfig cfg_;
  FlexTrainer trainer_;
  MatrixXd z_ext_;
};

class ParametricBuilder final : public AuxBuilder {
 public:
  ParametricBuilder(const AnalysisContext& ctx, const JaipwConfig& cfg) {
    const Index n = ctx.n_internal(), a = static_cast<Index>(ctx.aux_positions.size());
    MatrixXd x(n, ctx.aux_internal.cols() + 1);
    x << VectorXd::Ones(n), ctx.aux_internal;
    MatrixXd y(n, a);
    for (Index j = 0; j < a; ++j) y.col(j) = ctx.disease_design.col(ctx.aux_positions[static_cast<size_t>(j)]);
    require(n > x.cols(), ErrorKind::TooFewRows, "parametric auxiliary model: too few rows");
    // Normal linear model: least squares for the mean, pooled residual covariance.
    const auto qr = x.colPivHouseholderQr();
    const MatrixXd gamma = qr.solve(y);
    const MatrixXd resid = y - x * gamma;
    const MatrixXd cov = resid.transpose() * resid / static_cast<double>(n - x.cols());
    const MatrixXd chol = cov.llt().matrixL();
    Rng rng = make_rng(cfg.seed, 0x706172616dULL);
    boost::random::normal_distribution<double> norm;
    MatrixXd draws(cfg.mc_draws, a);
    for (Index m = 0; m < draws.rows(); ++m)
      for (Index j = 0; j < a; ++j) draws(m, j) = norm(rng);
    model_ = make_parametric_aux(ctx, gamma, chol, draws, cfg.target);
  }
  std::shared_ptr<const AuxiliaryScoreModel> build(const VectorXd&) const override { return model_; }

 private:
  std::shared_ptr<const AuxiliaryScoreModel> model_;
};

struct Term {
  const AnalysisContext* ctx;
  VectorXd w;  // 1 / pi
  VectorXd v;  // 1 / pi_ext
  const AuxBuilder* builder;
  std::shared_ptr<const AuxiliaryScoreModel> aux;
};

VectorXd total_score(const std::vector<Term>& terms, const VectorXd& theta) {
  VectorXd s = VectorXd::Zero(theta.size());
  for (const auto& t : terms) s += dr_score(*t.ctx, t.w.cwiseInverse(), *t.aux, theta);
  return s;
}

MatrixXd total_jacobian(const std::vector<Term>& terms, const VectorXd& theta) {
  MatrixXd j = MatrixXd::Zero(theta.size(), theta.size());
  for (const auto& t : terms) {
    const auto& z = t.ctx->disease_design;
    const VectorXd mu = expit_vec(z * theta);
    const VectorXd wi = t.w.array() * mu.array() * (1.0 - mu.array());
    MatrixXd jt = -(z.transpose() * wi.asDiagonal() * z);
    if (t.aux->depends_on_theta())
      jt += -t.aux->internal_jacobian_sum(theta, t.w) + t.aux->external_jacobian_sum(theta, t.v);
    j += jt / t.ctx->population_size;
  }
  return j;
}

double max_abs(const VectorXd& v) { return v.cwiseAbs().maxCoeff(); }

DrResult run_outer(const AnalysisContext& ctx, std::vector<Term>& terms, const JaipwConfig& cfg) {
  cfg.validate();
  VectorXd theta = fit_unweighted(ctx, false, cfg.newton).estimate;
  VectorXd prev_f1;
  DrResult out;
  bool converged = false;
  int it = 0;
  for (; it < cfg.max_outer && !converged; ++it) {
    for (auto& t : terms) t.aux = t.builder->build(theta);
    const VectorXd f1 = total_score(terms, theta);
    NewtonResult inner = newton_solve([&](const VectorXd& th) { return total_score(terms, th); },
                                      [&](const VectorXd& th) { return total_jacobian(terms, th); }, theta,
                                      cfg.newton);
    const double d_theta = (inner.x - theta).norm();
    const double d_f1 = prev_f1.size() ? (f1 - prev_f1).norm() : std::numeric_limits<double>::infinity();
    theta = inner.x;
    prev_f1 = f1;
    converged = d_theta < cfg.eps_theta && d_f1 < cfg.eps_score;
  }
  out.outer_iterations = it;
  out.outer_converged = converged;
  out.aux = terms.size() == 1 ? terms.front().aux : nullptr;

  EstimateReport& rep = out.report;
  rep.method = "JAIPW";
  rep.terms = ctx.disease_terms;
  rep.estimate = theta;
  rep.converged = converged;
  rep.iterations = it;
  rep.residual = max_abs(total_score(terms, theta));
  rep.effective_n = ctx.n_internal();
  if (!converged) {
    if (cfg.strict_outer)
      throw SolverError(ErrorKind::NoOuterConvergence, "outer iteration budget exhausted", theta, rep.residual);
    rep.warnings.push_back("NoOuterConvergence: outer iteration budget exhausted; returning the last iterate");
  }
  return out;
}

}  // namespace

void JaipwConfig::validate() const {
  require(eps_theta > 0 && eps_score > 0, ErrorKind::Config, "JAIPW tolerances must be positive");
  require(max_outer >= 1, ErrorKind::Config, "JAIPW needs at least one outer iteration");
  require(mc_draws >= 100, ErrorKind::Config, "Monte Carlo draws must be at least 100");
  require(bootstrap_replicates >= 50, ErrorKind::Config, "bootstrap replicates must be at least 50");
  newton.validate();
}

MatrixXd AuxiliaryScoreModel::internal_jacobian_sum(const VectorXd& theta, const VectorXd&) const {
  return MatrixXd::Zero(theta.size(), theta.size());
}

MatrixXd AuxiliaryScoreModel::external_jacobian_sum(const VectorXd& theta, const VectorXd&) const {
  return MatrixXd::Zero(theta.size(), theta.size());
}

MatrixXd flexible_targets(const AnalysisContext& ctx, const VectorXd& theta, AuxTarget target) {
  const VectorXd mu = expit_vec(ctx.disease_design * theta);
  const VectorXd& d = ctx.internal->outcome;
  const Index a = static_cast<Index>(ctx.aux_positions.size());
  MatrixXd t(ctx.n_internal(), 1 + a);
  if (target == AuxTarget::Projection) {
    t.col(0) = d - mu;
  } else {
    t.col(0) = d.array() * (1.0 - mu.array());
  }
  for (Index j = 0; j < a; ++j)
    t.col(1 + j) = t.col(0).cwiseProduct(ctx.disease_design.col(ctx.aux_positions[static_cast<size_t>(j)]));
  return t;
}

std::unique_ptr<AuxBuilder> make_aux_builder(const AnalysisContext& ctx, const JaipwConfig& cfg) {
  if (cfg.mode == AuxMode::Zero) return std::make_unique<ZeroBuilder>(ctx);
  require(ctx.options.require_auxiliary, ErrorKind::Config,
          "context was not validated for the doubly robust estimator");
  if (ctx.aux_positions.empty()) fail(ErrorKind::EmptyAuxiliary, "auxiliary set is empty");
  require(ctx.external != nullptr, ErrorKind::Config, "the doubly robust estimator needs an external sample");
  if (cfg.mode == AuxMode::Flexible) return std::make_unique<FlexibleBuilder>(ctx, cfg);
  return std::make_unique<ParametricBuilder>(ctx, cfg);
}

std::shared_ptr<const AuxiliaryScoreModel> build_aux_flexible(const AnalysisContext& ctx, const VectorXd& theta,
                                                              const JaipwConfig& cfg) {
  JaipwConfig c = cfg;
  c.mode = AuxMode::Flexible;
  return make_aux_builder(ctx, c)->build(theta);
}

std::shared_ptr<const AuxiliaryScoreModel> build_aux_parametric(const AnalysisContext& ctx, const VectorXd& theta,
                                                                const JaipwConfig& cfg) {
  JaipwConfig c = cfg;
  c.mode = AuxMode::Parametric;
  return make_aux_builder(ctx, c)->build(theta);
}

std::shared_ptr<const AuxiliaryScoreModel> make_parametric_aux(const AnalysisContext& ctx, MatrixXd gamma,
                                                               MatrixXd chol, MatrixXd draws, AuxTarget target) {
  return std::make_shared<ParametricAux>(ctx, std::move(gamma), std::move(chol), std::move(draws), target);
}

VectorXd dr_score(const AnalysisContext& ctx, const VectorXd& pi_joint, const AuxiliaryScoreModel& aux,
                  const VectorXd& theta) {
  require(ctx.external != nullptr, ErrorKind::Config, "the doubly robust estimator needs an external sample");
  const auto& z = ctx.disease_design;
  const VectorXd w = pi_joint.cwiseInverse();
  const VectorXd mu = expit_vec(z * theta);
  const VectorXd r = w.cwiseProduct(ctx.internal->outcome - mu);
  VectorXd s = z.transpose() * r;
  s -= aux.internal_values(theta).transpose() * w;
  s += aux.external_values(theta).transpose() * ctx.external->pi_ext.cwiseInverse();
  return s / ctx.population_size;
}

DrResult solve_dr(const AnalysisContext& ctx, const SelectionModelFit& fit, const AuxBuilder& builder,
                  const JaipwConfig& cfg) {
  require(ctx.external != nullptr, ErrorKind::Config, "the doubly robust estimator needs an external sample");
  require(fit.pi_joint.size() == ctx.n_internal(), ErrorKind::DimensionMismatch,
          "selection fit does not match the analysis context");
  std::vector<Term> terms{{&ctx, fit.pi_joint.cwiseInverse(), ctx.external->pi_ext.cwiseInverse(), &builder, nullptr}};
  DrResult out = run_outer(ctx, terms, cfg);
  out.report.warnings.insert(out.report.warnings.begin(), fit.warnings.begin(), fit.warnings.end());
  return out;
}

DrResult solve_dr_no_overlap(const AnalysisContext& ctx, const std::vector<DrComponent>& parts,
                             const JaipwConfig& cfg) {
  for (Index i = 0; i < ctx.n_internal(); ++i)
    if (ctx.internal->cohort_indicators.row(i).sum() > 1)
      fail(ErrorKind::OverlapPresent, "cohort memberships overlap (row '" + ctx.internal->ids[static_cast<size_t>(i)] + "')");
  require(static_cast<Index>(parts.size()) == ctx.cohorts(), ErrorKind::InvalidArgument,
          "one component per cohort is required");
  std::vector<Term> terms;
  for (const auto& part : parts) {
    require(part.ctx->external != nullptr, ErrorKind::Config, "each component needs the external sample");
    require(part.fit->pi_joint.size() == part.ctx->n_internal(), ErrorKind::DimensionMismatch,
            "component selection fit does not match its context");
    terms.push_back({part.ctx, part.fit->pi_joint.cwiseInverse(), part.ctx->external->pi_ext.cwiseInverse(),
                     part.builder, nullptr});
  }
  DrResult out = run_outer(ctx, terms, cfg);
  out.report.method = "JAIPW-NoOverlap";
  return out;
}

MatrixXd variance_jaipw_approx(const AnalysisContext& ctx, const SelectionModelFit& fit, const AuxBuilder& builder,
                               const VectorXd& theta) {
  const Index p = theta.size(), n = ctx.n_internal();
  const double N = ctx.population_size;
  const auto& z = ctx.disease_design;
  const VectorXd w = fit.pi_joint.cwiseInverse();
  const VectorXd v = ctx.external->pi_ext.cwiseInverse();
  const VectorXd mu = expit_vec(z * theta);

  // Central differences of f, with the auxiliary model rebuilt at each perturbed theta.
  MatrixXd dint = MatrixXd::Zero(p, p), dext = MatrixXd::Zero(p, p);
  for (Index j = 0; j < p; ++j) {
    const double h = 1e-5 * (1.0 + std::abs(theta(j)));
    VectorXd tp = theta, tm = theta;
    tp(j) += h;
    tm(j) -= h;
    const auto ap = builder.build(tp);
    const auto am = builder.build(tm);
    const MatrixXd fi = (ap->internal_values(tp) - am->internal_values(tm)) / (2.0 * h);
    const MatrixXd fe = (ap->external_values(tp) - am->external_values(tm)) / (2.0 * h);
    dint.col(j) = fi.transpose() * w;
    dext.col(j) = fe.transpose() * v;
  }

  const auto aux = builder.build(theta);
  const MatrixXd f_int = aux->internal_values(theta);
  const MatrixXd f_ext = aux->external_values(theta);

  SandwichPieces pc;
  VectorXd wi(n), we(n);
  for (Index i = 0; i < n; ++i) {
    const double r = ctx.internal->outcome(i) - mu(i);
    wi(i) = mu(i) * (1.0 - mu(i)) / fit.pi_joint(i);
    we(i) = r * r / (fit.pi_joint(i) * fit.pi_joint(i));
  }
  pc.g_theta = -(z.transpose() * wi.asDiagonal() * z) / N;
  pc.g_theta += (-dint + dext) / N;

  const MatrixXd u = (ctx.internal->outcome - mu).asDiagonal() * z;
  const MatrixXd resid = u - f_int;  // n x p
  if (f_int.isZero(0.0) && f_ext.isZero(0.0)) {
    pc.e1 = (z.transpose() * we.asDiagonal() * z) / N;
  } else {
    const VectorXd w2 = w.cwiseProduct(w), v2 = v.cwiseProduct(v);
    MatrixXd e = resid.transpose() * w2.asDiagonal() * resid + f_ext.transpose() * v2.asDiagonal() * f_ext;
    for (const auto& [i, k] : ctx.overlap) {
      const VectorXd a = resid.row(i).transpose();
      const VectorXd b = f_ext.row(k).transpose();
      e += w(i) * v(k) * (a * b.transpose() + b * a.transpose());
    }
    pc.e1 = e / N;
  }
  return assemble_sandwich(pc, N, {false});
}

BootstrapResult variance_bootstrap(const CombinedSample& internal, std::shared_ptr<const ExternalSample> external,
                                   const Pipeline& pipeline, int replicates, std::uint64_t seed, int threads) {
  require(replicates >= 50, ErrorKind::Config, "bootstrap needs at least 50 replicates");
  const Index n = internal.rows();
  const Index m = external ? external->rows() : 0;
  std::vector<VectorXd> results(static_cast<size_t>(replicates));
  std::vector<char> ok(static_cast<size_t>(replicates), 0);

  auto relabel = [](const std::vector<std::string>& ids, const std::vector<Index>& draw) {
    std::map<Index, int> copies;
    std::vector<std::string> out;
    out.reserve(draw.size());
    for (Index r : draw) {
      const int c = ++copies[r];
      out.push_back(c == 1 ? ids[static_cast<size_t>(r)] : ids[static_cast<size_t>(r)] + "#" + std::to_string(c));
    }
    return out;
  };

  auto run_one = [&](int b) {
    Rng rng = make_rng(seed, 0x626f6f74ULL, static_cast<std::uint64_t>(b));
    boost::random::uniform_int_distribution<Index> pick_int(0, n - 1);
    std::vector<Index> di(static_cast<size_t>(n));
    for (auto& r : di) r = pick_int(rng);
    std::sort(di.begin(), di.end());
    CombinedSample ci = internal.subset(di, relabel(internal.ids, di));
    std::shared_ptr<const ExternalSample> ce;
    if (external) {
      boost::random::uniform_int_distribution<Index> pick_ext(0, m - 1);
      std::vector<Index> de(static_cast<size_t>(m));
      for (auto& r : de) r = pick_ext(rng);
      std::sort(de.begin(), de.end());
      ExternalSample es = external->subset(de, relabel(external->ids, de));
      ce = std::make_shared<const ExternalSample>(std::move(es));
    }
    try {
      results[static_cast<size_t>(b)] = pipeline(std::make_shared<const CombinedSample>(std::move(ci)), ce);
      ok[static_cast<size_t>(b)] = results[static_cast<size_t>(b)].allFinite() ? 1 : 0;
    } catch (const Error&) {
      ok[static_cast<size_t>(b)] = 0;
    }
  };

  const int workers = std::max(1, std::min(threads, replicates));
  if (workers == 1) {
    for (int b = 0; b < replicates; ++b) run_one(b);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (int b = next++; b < replicates; b = next++) run_one(b);
      });
    for (auto& th : pool) th.join();
  }

  BootstrapResult out;
  out.requested = replicates;
  std::vector<int> good;
  for (int b = 0; b < replicates; ++b) {
    if (ok[static_cast<size_t>(b)]) good.push_back(b);
  }
  out.failed = replicates - static_cast<int>(good.size());
  if (out.failed > replicates / 10)
    fail(ErrorKind::TooManyFailedReplicates,
         std::to_string(out.failed) + " of " + std::to_string(replicates) + " bootstrap replicates failed");
  const Index p = results[static_cast<size_t>(good.front())].size();
  out.replicates.resize(static_cast<Index>(good.size()), p);
  for (size_t r = 0; r < good.size(); ++r) out.replicates.row(static_cast<Index>(r)) = results[static_cast<size_t>(good[r])].transpose();
  const VectorXd mean = out.replicates.colwise().mean().transpose();
  const MatrixXd centered = out.replicates.rowwise() - mean.transpose();
  out.variance = centered.transpose() * centered / static_cast<double>(std::max<Index>(1, out.replicates.rows() - 1));
  return out;
}

}  // namespace jaipw
