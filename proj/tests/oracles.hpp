#pragma once

// Independent reference computations shared by the unit tests and the acceptance run.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "jaipw/selection_models.hpp"
#include "test_support.hpp"

namespace oracle {

using namespace jaipw;

inline double weighted_loglik(const MatrixXd& x, const VectorXd& y, const VectorXd& w, const VectorXd& b) {
  double ll = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    const double eta = x.row(i).dot(b);
    ll += w(i) * (y(i) * eta - std::log1p(std::exp(eta)));
  }
  return ll;
}

// Coarse-to-fine grid search over two coefficients; the log-likelihood is concave.
inline VectorXd grid_maximizer(const MatrixXd& x, const VectorXd& y, const VectorXd& w) {
  VectorXd best = VectorXd::Zero(2);
  double step = 0.25, half = 6.0;
  while (step > 1e-7) {
    VectorXd centre = best;
    double best_ll = -INFINITY;
    const int steps = static_cast<int>(std::round(half / step));
    for (int a = -steps; a <= steps; ++a)
      for (int b = -steps; b <= steps; ++b) {
        VectorXd c(2);
        c << centre(0) + a * step, centre(1) + b * step;
        const double ll = weighted_loglik(x, y, w, c);
        if (ll > best_ll) {
          best_ll = ll;
          best = c;
        }
      }
    half = 2 * step;
    step /= 8;
  }
  return best;
}

struct Small {
  MatrixXd x;
  VectorXd y, w;
};

inline Small small_logistic(std::uint64_t seed, Index n) {
  Rng rng = make_rng(seed, 11);
  boost::random::normal_distribution<double> normal;
  boost::random::uniform_01<double> unif;
  Small s{MatrixXd(n, 2), VectorXd(n), VectorXd(n)};
  for (Index i = 0; i < n; ++i) {
    s.x(i, 0) = 1.0;
    s.x(i, 1) = normal(rng);
    s.y(i) = unif(rng) < expit(-0.3 + 0.8 * s.x(i, 1)) ? 1 : 0;
    s.w(i) = 0.5 + 3.0 * unif(rng);
  }
  return s;
}

// Gauss-Hermite nodes and weights for weight exp(-x^2), via the Golub-Welsch eigenproblem.
inline void gauss_hermite(int n, VectorXd& nodes, VectorXd& weights) {
  MatrixXd j = MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) j(i, i - 1) = j(i - 1, i) = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(j);
  nodes = es.eigenvalues();
  weights = es.eigenvectors().row(0).transpose().array().square() * std::sqrt(M_PI);
}

inline PopulationTotals fixture_totals(const fixture::Fixture& fx) {
  PopulationTotals t;
  t.population_size = fx.population_size;
  for (size_t k = 0; k < fx.totals.size(); ++k)
    t.totals.push_back({{"D", fx.totals[k][1]}, {"W" + std::to_string(k + 1), fx.totals[k][2]}});
  return t;
}

// Two strata variables per cohort: D (categorical) and W_k split at zero.
inline StrataSpec empirical_strata(const AnalysisContext& ctx) {
  StrataSpec spec;
  spec.mode = StrataMode::ExactJoint;
  spec.empty_cells = EmptyCellPolicy::Error;
  for (Index k = 0; k < ctx.cohorts(); ++k) {
    CohortStrata cs;
    cs.variables = {{"D", {}}, {"W" + std::to_string(k + 1), {0.0}}};
    // Any positive shares satisfy the identity under test.
    cs.joint = {{{0, 0}, 0.35}, {{0, 1}, 0.35}, {{1, 0}, 0.15}, {{1, 1}, 0.15}};
    spec.cohorts.push_back(cs);
  }
  return spec;
}

// Largest relative gap between the weighted cell count and N times the cell share.
inline double ht_cell_gap(const AnalysisContext& ctx, const StrataSpec& spec, const SelectionModelFit& fit) {
  double worst = 0.0;
  for (Index k = 0; k < ctx.cohorts(); ++k) {
    const auto& cs = spec.cohorts[static_cast<size_t>(k)];
    std::map<std::vector<int>, double> ht;
    for (Index i = 0; i < ctx.n_internal(); ++i) {
      if (!ctx.internal->cohort_indicators(i, k)) continue;
      std::vector<int> key;
      for (const auto& v : cs.variables) key.push_back(v.level_of(internal_term(*ctx.internal, v.name)(i)));
      ht[key] += 1.0 / fit.pi_internal(i, k);
    }
    for (const auto& [key, total] : ht) {
      const double want = ctx.population_size * cs.joint.at(key);
      worst = std::max(worst, std::abs(total - want) / want);
    }
  }
  return worst;
}

}  // namespace oracle
