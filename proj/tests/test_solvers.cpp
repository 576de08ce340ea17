#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "jaipw/error.hpp"
#include "jaipw/rng.hpp"
#include "jaipw/solvers.hpp"
#include "oracles.hpp"

using namespace jaipw;

using oracle::grid_maximizer;

TEST_CASE("newton solves a smooth system") {
  auto f = [](const VectorXd& v) {
    VectorXd r(2);
    r << v(0) * v(0) - 2.0, v(0) * v(1) - 1.0;
    return r;
  };
  auto j = [](const VectorXd& v) {
    MatrixXd m(2, 2);
    m << 2 * v(0), 0, v(1), v(0);
    return m;
  };
  const auto res = newton_solve(f, j, VectorXd::Constant(2, 1.0));
  CHECK(res.converged);
  CHECK(res.x(0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(res.x(1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("singular jacobians raise with the best iterate attached") {
  auto f = [](const VectorXd& v) { return VectorXd::Constant(1, v(0) * v(0) + 1.0); };
  auto j = [](const VectorXd& v) { return MatrixXd::Constant(1, 1, 2 * v(0)); };
  try {
    newton_solve(f, j, VectorXd::Zero(1));
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(e.kind() == ErrorKind::SingularJacobian);
    CHECK(e.best().size() == 1);
  }
}

TEST_CASE("solver configuration is validated") {
  NewtonConfig c;
  c.max_iter = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("weighted logistic matches a grid-search likelihood maximizer") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = oracle::small_logistic(seed, 40);
    const auto fit = fit_weighted_logistic(s.x, s.y, s.w);
    const VectorXd oracle = grid_maximizer(s.x, s.y, s.w);
    CAPTURE(seed);
    CHECK(fit.converged);
    CHECK((fit.coef - oracle).cwiseAbs().maxCoeff() < 1e-4);
  }
}

TEST_CASE("logistic fit is invariant to weight scale and honours a score shift") {
  const auto s = oracle::small_logistic(9, 200);
  const auto a = fit_weighted_logistic(s.x, s.y, s.w);
  const auto b = fit_weighted_logistic(s.x, s.y, 1000.0 * s.w);
  CHECK((a.coef - b.coef).cwiseAbs().maxCoeff() < 1e-8);

  VectorXd shift(2);
  shift << 3.0, -1.0;
  LogisticOptions o;
  o.score_shift = shift;
  const auto c = fit_weighted_logistic(s.x, s.y, s.w, {}, o);
  VectorXd r = VectorXd::Zero(2);
  for (Index i = 0; i < s.x.rows(); ++i) r += s.w(i) * (s.y(i) - expit(s.x.row(i).dot(c.coef))) * s.x.row(i).transpose();
  CHECK((r - shift).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("complete separation is flagged") {
  MatrixXd x(6, 2);
  x << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
  VectorXd y(6);
  y << 0, 0, 0, 1, 1, 1;
  const auto fit = fit_weighted_logistic(x, y, VectorXd::Ones(6));
  CHECK(fit.separation);
}

TEST_CASE("rank-deficient designs are rejected") {
  MatrixXd x(4, 2);
  x << 1, 2, 1, 2, 1, 2, 1, 2;
  VectorXd y(4);
  y << 0, 1, 0, 1;
  CHECK_THROWS_AS(fit_weighted_logistic(x, y, VectorXd::Ones(4)), Error);
}

TEST_CASE("multinomial logistic recovers its coefficients") {
  Rng rng = make_rng(5, 3);
  boost::random::normal_distribution<double> normal;
  boost::random::uniform_01<double> unif;
  const Index n = 20000;
  MatrixXd x(n, 2);
  VectorXi lab(n);
  MatrixXd truth(2, 2);
  truth << -0.5, 0.3, 1.0, -0.7;
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = normal(rng);
    const double e1 = std::exp(x.row(i).dot(truth.col(0))), e2 = std::exp(x.row(i).dot(truth.col(1)));
    const double u = unif(rng) * (1 + e1 + e2);
    lab(i) = u < 1 ? 0 : (u < 1 + e1 ? 1 : 2);
  }
  const auto fit = fit_multinomial_logistic(x, lab);
  CHECK(fit.converged);
  CHECK((fit.coef - truth).cwiseAbs().maxCoeff() < 0.08);
  CHECK((fit.probs.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK((fit.predict(x) - fit.probs).cwiseAbs().maxCoeff() < 1e-12);

  VectorXi two = lab.unaryExpr([](int v) { return v == 2 ? 1 : v; });
  try {
    fit_multinomial_logistic(x, two);
    FAIL("expected MissingCategory");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingCategory);
  }
}

TEST_CASE("simplex deviance and mean regression") {
  // d(y, mu) = (y - mu)^2 / (y (1 - y) mu^2 (1 - mu)^2)
  CHECK(simplex_deviance(0.2, 0.5) == doctest::Approx(0.09 / (0.16 * 0.0625)));
  CHECK(simplex_deviance(0.3, 0.3) == 0.0);

  Rng rng = make_rng(8, 4);
  boost::random::normal_distribution<double> normal;
  const Index n = 5000;
  MatrixXd x(n, 2);
  VectorXd p(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = normal(rng);
    p(i) = expit(-1.0 + 0.6 * x(i, 1) + 0.05 * normal(rng));
  }
  const auto fit = fit_simplex_mean_regression(x, p);
  CHECK(fit.converged);
  CHECK(fit.coef(0) == doctest::Approx(-1.0).epsilon(0.02));
  CHECK(fit.coef(1) == doctest::Approx(0.6).epsilon(0.02));
  CHECK(fit.dispersion > 0.0);

  VectorXd bad = p;
  bad(0) = 1.0;
  try {
    fit_simplex_mean_regression(x, bad);
    FAIL("expected ResponseOutOfRange");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ResponseOutOfRange);
  }
}

TEST_CASE("condition number") {
  MatrixXd m = MatrixXd::Identity(3, 3);
  m(2, 2) = 1e-3;
  CHECK(condition_number(m) == doctest::Approx(1e3));
  CHECK(std::isinf(condition_number(MatrixXd::Zero(2, 2))));
}
