#include "jaipw/solvers.hpp"

#include <cmath>
#include <limits>

#include "jaipw/error.hpp"

namespace jaipw {

namespace {

double max_abs(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Separation shows up as saturated linear predictors or a runaway coefficient norm.
bool looks_separated(const MatrixXd& x, const VectorXd& coef) {
  if (!coef.allFinite() || coef.norm() > 1e4) return true;
  return (x * coef).cwiseAbs().maxCoeff() > 30.0;
}

}  // namespace

void NewtonConfig::validate() const {
  require(tol_params > 0 && tol_residual > 0, ErrorKind::Config, "Newton tolerances must be positive");
  require(max_iter >= 1, ErrorKind::Config, "Newton max_iter must be at least 1");
  require(step_halving_max >= 0, ErrorKind::Config, "step_halving_max must be nonnegative");
}

double condition_number(const MatrixXd& m) {
  if (m.size() == 0) return 1.0;
  if (!m.allFinite()) return std::numeric_limits<double>::infinity();
  Eigen::JacobiSVD<MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

NewtonResult newton_solve(const VectorFunction& score, const MatrixFunction& jacobian,
                          const VectorXd& init, const NewtonConfig& cfg) {
  cfg.validate();
  require(init.allFinite(), ErrorKind::InvalidArgument, "Newton initial value is not finite");

  VectorXd x = init;
  VectorXd r = score(x);
  require(r.size() == x.size(), ErrorKind::DimensionMismatch, "score dimension differs from parameters");
  VectorXd best = x;
  double best_norm = r.allFinite() ? r.norm() : std::numeric_limits<double>::infinity();
  double last_step = std::numeric_limits<double>::infinity();

  auto fail_with = [&](ErrorKind kind, const std::string& msg) -> NewtonResult {
    throw SolverError(kind, msg, best, best_norm);
  };

  for (int it = 0; it < cfg.max_iter; ++it) {
    if (!r.allFinite()) return fail_with(ErrorKind::NoConvergence, "score is not finite");
    if (max_abs(r) <= cfg.tol_residual && last_step <= cfg.tol_params) {
      return NewtonResult{x, it, max_abs(r), last_step, true};
    }
    const MatrixXd j = jacobian(x);
    if (condition_number(j) > cfg.max_condition)
      return fail_with(ErrorKind::SingularJacobian, "Jacobian condition estimate exceeds limit");
    const VectorXd step = j.partialPivLu().solve(-r);

    const double r_norm = r.norm();
    double t = 1.0;
    bool accepted = false;
    VectorXd x_new, r_new;
    for (int h = 0; h <= cfg.step_halving_max; ++h) {
      x_new = x + t * step;
      r_new = score(x_new);
      if (r_new.allFinite() && r_new.norm() <= r_norm) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // At the rounding floor no step can reduce the residual any further.
      if (max_abs(r) <= cfg.tol_residual) return NewtonResult{x, it, max_abs(r), 0.0, true};
      return fail_with(ErrorKind::NoConvergence, "step-halving budget exhausted");
    }
    last_step = max_abs(t * step);
    x = std::move(x_new);
    r = std::move(r_new);
    if (r.norm() < best_norm) {
      best_norm = r.norm();
      best = x;
    }
  }
  if (max_abs(r) <= cfg.tol_residual && last_step <= cfg.tol_params)
    return NewtonResult{x, cfg.max_iter, max_abs(r), last_step, true};
  return fail_with(ErrorKind::NoConvergence, "iteration budget exhausted");
}

LogisticFit fit_weighted_logistic(const MatrixXd& x, const VectorXd& y, const VectorXd& w,
                                  const NewtonConfig& cfg, const LogisticOptions& opts) {
  const Index n = x.rows(), p = x.cols();
  require(y.size() == n && w.size() == n, ErrorKind::DimensionMismatch,
          "logistic: design, response and weights differ in length");
  require((w.array() >= 0).all() && w.allFinite(), ErrorKind::InvalidArgument,
          "logistic: weights must be finite and nonnegative");
  const double wsum = w.sum();
  require(wsum > 0, ErrorKind::InvalidArgument, "logistic: all weights are zero");
  {
    std::vector<Index> pos;
    for (Index i = 0; i < n; ++i)
      if (w(i) > 0) pos.push_back(i);
    MatrixXd xp(static_cast<Index>(pos.size()), p);
    for (size_t r = 0; r < pos.size(); ++r) xp.row(static_cast<Index>(r)) = x.row(pos[r]);
    Eigen::ColPivHouseholderQR<MatrixXd> qr(xp);
    require(qr.rank() == p, ErrorKind::RankDeficient,
            "logistic: design is not of full column rank on positively weighted rows");
  }
  const VectorXd shift = opts.score_shift ? *opts.score_shift : VectorXd::Zero(p);
  require(shift.size() == p, ErrorKind::DimensionMismatch, "logistic: score shift has wrong length");

  auto score = [&](const VectorXd& b) -> VectorXd {
    const VectorXd eta = x * b;
    VectorXd resid(n);
    for (Index i = 0; i < n; ++i) resid(i) = w(i) * (y(i) - expit(eta(i)));
    return (x.transpose() * resid - shift) / wsum;
  };
  auto jac = [&](const VectorXd& b) -> MatrixXd {
    const VectorXd eta = x * b;
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) {
      const double m = expit(eta(i));
      v(i) = w(i) * m * (1.0 - m);
    }
    return -(x.transpose() * v.asDiagonal() * x) / wsum;
  };

  LogisticFit fit;
  const VectorXd init = opts.init ? *opts.init : VectorXd::Zero(p);
  try {
    NewtonResult res = newton_solve(score, jac, init, cfg);
    fit.coef = res.x;
    fit.iterations = res.iterations;
    fit.residual = res.residual;
    fit.converged = true;
    fit.separation = looks_separated(x, fit.coef);
  } catch (const SolverError& e) {
    if (!looks_separated(x, e.best())) throw;
    fit.coef = e.best();
    fit.residual = score(fit.coef).cwiseAbs().maxCoeff();
    fit.converged = false;
    fit.separation = true;
  }
  const VectorXd eta = x * fit.coef;
  fit.fitted = eta.unaryExpr([](double v) { return expit(v); });
  return fit;
}

MatrixXd MultinomialFit::predict(const MatrixXd& x) const {
  MatrixXd out(x.rows(), 3);
  const MatrixXd eta = x * coef;
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = std::max({0.0, eta(i, 0), eta(i, 1)});
    const double e0 = std::exp(-m), e1 = std::exp(eta(i, 0) - m), e2 = std::exp(eta(i, 1) - m);
    const double z = e0 + e1 + e2;
    out(i, 0) = e0 / z;
    out(i, 1) = e1 / z;
    out(i, 2) = e2 / z;
  }
  return out;
}

MultinomialFit fit_multinomial_logistic(const MatrixXd& x, const VectorXi& labels,
                                        const NewtonConfig& cfg) {
  const Index n = x.rows(), q = x.cols();
  require(labels.size() == n, ErrorKind::DimensionMismatch, "multinomial: label count differs from rows");
  std::array<Index, 3> counts{0, 0, 0};
  for (Index i = 0; i < n; ++i) {
    require(labels(i) >= 0 && labels(i) <= 2, ErrorKind::InvalidArgument,
            "multinomial: labels must be 0, 1 or 2");
    ++counts[static_cast<size_t>(labels(i))];
  }
  for (int c = 0; c < 3; ++c)
    if (counts[static_cast<size_t>(c)] == 0)
      fail(ErrorKind::MissingCategory, "multinomial: category " + std::to_string(c) + " is absent");
  {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
    require(qr.rank() == q, ErrorKind::RankDeficient, "multinomial: design is rank deficient");
  }

  MultinomialFit fit;
  auto unpack = [q](const VectorXd& b) {
    MatrixXd c(q, 2);
    c.col(0) = b.head(q);
    c.col(1) = b.tail(q);
    return c;
  };
  auto score = [&](const VectorXd& b) -> VectorXd {
    MultinomialFit tmp;
    tmp.coef = unpack(b);
    const MatrixXd pr = tmp.predict(x);
    VectorXd s(2 * q);
    for (int c = 1; c <= 2; ++c) {
      VectorXd resid(n);
      for (Index i = 0; i < n; ++i) resid(i) = (labels(i) == c ? 1.0 : 0.0) - pr(i, c);
      s.segment((c - 1) * q, q) = x.transpose() * resid / static_cast<double>(n);
    }
    return s;
  };
  auto jac = [&](const VectorXd& b) -> MatrixXd {
    MultinomialFit tmp;
    tmp.coef = unpack(b);
    const MatrixXd pr = tmp.predict(x);
    MatrixXd j(2 * q, 2 * q);
    for (int a = 1; a <= 2; ++a) {
      for (int c = 1; c <= 2; ++c) {
        VectorXd v(n);
        for (Index i = 0; i < n; ++i) v(i) = pr(i, a) * ((a == c ? 1.0 : 0.0) - pr(i, c));
        j.block((a - 1) * q, (c - 1) * q, q, q) = -(x.transpose() * v.asDiagonal() * x) / static_cast<double>(n);
      }
    }
    return j;
  };

  VectorXd init = VectorXd::Zero(2 * q);
  // Intercept-like start from empirical log-odds when the first column is constant.
  if (q > 0 && (x.col(0).array() == 1.0).all()) {
    init(0) = std::log(static_cast<double>(counts[1]) / static_cast<double>(counts[0]));
    init(q) = std::log(static_cast<double>(counts[2]) / static_cast<double>(counts[0]));
  }
  try {
    NewtonResult res = newton_solve(score, jac, init, cfg);
    fit.coef = unpack(res.x);
    fit.iterations = res.iterations;
    fit.residual = res.residual;
    fit.converged = true;
  } catch (const SolverError& e) {
    const MatrixXd c = unpack(e.best());
    const bool separated = !c.allFinite() || c.norm() > 1e4 || (x * c).cwiseAbs().maxCoeff() > 30.0;
    if (!separated) throw;
    fit.coef = c;
    fit.converged = false;
    fit.separation = true;
    fit.residual = score(e.best()).cwiseAbs().maxCoeff();
  }
  fit.probs = fit.predict(x);
  return fit;
}

double simplex_deviance(double y, double mu) {
  const double e = y - mu;
  const double g = mu * (1.0 - mu);
  return e * e / (y * (1.0 - y) * g * g);
}

VectorXd SimplexFit::predict(const MatrixXd& x) const {
  return (x * coef).unaryExpr([](double v) { return expit(v); });
}

SimplexFit fit_simplex_mean_regression(const MatrixXd& x, const VectorXd& p, const NewtonConfig& cfg) {
  const Index n = x.rows(), q = x.cols();
  require(p.size() == n, ErrorKind::DimensionMismatch, "simplex: response length differs from rows");
  for (Index i = 0; i < n; ++i)
    if (!(p(i) > 0.0 && p(i) < 1.0))
      fail(ErrorKind::ResponseOutOfRange, "simplex: responses must lie strictly inside (0, 1)");
  {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
    require(qr.rank() == q, ErrorKind::RankDeficient, "simplex: design is rank deficient");
  }

  // Minimizes the total unit deviance; the dispersion profiles out.
  // Per row, with e = y - mu, g = mu(1 - mu), a = y(1 - y):
  //   dd/deta   = -2 e (g + e g') / (a g^2)
  //   d2d/deta2 = -2 (A' - 2 g' A) / (a g^2),  A = e g + e^2 g',  A' = -g^2 - e g g' - 2 e^2 g
  auto derivs = [&](const VectorXd& b, VectorXd& first, VectorXd& second) {
    const VectorXd eta = x * b;
    first.resize(n);
    second.resize(n);
    for (Index i = 0; i < n; ++i) {
      const double mu = expit(eta(i));
      const double y = p(i);
      const double e = y - mu, g = mu * (1.0 - mu), gp = 1.0 - 2.0 * mu, a = y * (1.0 - y);
      const double big_a = e * g + e * e * gp;
      const double big_a_prime = -g * g - e * g * gp - 2.0 * e * e * g;
      first(i) = -2.0 * big_a / (a * g * g);
      second(i) = -2.0 * (big_a_prime - 2.0 * gp * big_a) / (a * g * g);
    }
  };
  auto score = [&](const VectorXd& b) -> VectorXd {
    VectorXd f, s;
    derivs(b, f, s);
    return x.transpose() * f / static_cast<double>(n);
  };
  auto jac = [&](const VectorXd& b) -> MatrixXd {
    VectorXd f, s;
    derivs(b, f, s);
    return x.transpose() * s.asDiagonal() * x / static_cast<double>(n);
  };

  // Start from least squares on the logit scale.
  const VectorXd logit = p.unaryExpr([](double v) { return std::log(v / (1.0 - v)); });
  VectorXd init = x.colPivHouseholderQr().solve(logit);

  SimplexFit fit;
  NewtonResult res = newton_solve(score, jac, init, cfg);
  fit.coef = res.x;
  fit.iterations = res.iterations;
  fit.residual = res.residual;
  fit.converged = true;
  fit.fitted = fit.predict(x);
  double dev = 0.0;
  for (Index i = 0; i < n; ++i) dev += simplex_deviance(p(i), fit.fitted(i));
  fit.dispersion = dev / static_cast<double>(n);
  return fit;
}

}  // namespace jaipw
