#pragma once

// Small synthetic population shared by the unit tests. Selection into cohort k depends on
// D and W_k; Z1 never enters selection, so it can serve as the auxiliary covariate.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "jaipw/data_model.hpp"
#include "jaipw/rng.hpp"

namespace fixture {

using namespace jaipw;

struct Fixture {
  std::shared_ptr<const CombinedSample> internal;
  std::shared_ptr<const ExternalSample> external;
  VariableRoles roles;
  double population_size = 0.0;
  MatrixXd true_pi;     // selected rows x K
  VectorXd true_theta;  // intercept, Z1, Z2
  // Population totals of each cohort's selection terms (intercept first).
  std::vector<std::vector<double>> totals;
};

inline double cohort_intercept(int k) { return k == 0 ? -1.0 : -1.4; }

inline Fixture make_fixture(std::uint64_t seed, Index N = 3000, int K = 2, double ext_intercept = -1.5) {
  Rng rng = make_rng(seed, 0x66697874);
  boost::random::normal_distribution<double> normal;
  boost::random::uniform_01<double> unif;

  Fixture fx;
  fx.true_theta = VectorXd(3);
  fx.true_theta << -1.0, 0.5, 0.4;
  fx.population_size = static_cast<double>(N);
  fx.totals.assign(static_cast<size_t>(K), std::vector<double>(3, 0.0));

  std::vector<std::string> ids, ext_ids;
  std::vector<double> d, z1, z2, pis, ext_pi;
  std::vector<std::vector<double>> w(static_cast<size_t>(K));
  std::vector<std::vector<int>> s(static_cast<size_t>(K));
  std::vector<std::vector<double>> pik(static_cast<size_t>(K));
  std::vector<std::vector<double>> ext_rows;

  for (Index i = 0; i < N; ++i) {
    const double a = normal(rng), b = normal(rng);
    const double zz1 = a, zz2 = 0.3 * a + std::sqrt(1 - 0.09) * b;
    const double dd = unif(rng) < expit(fx.true_theta(0) + fx.true_theta(1) * zz1 + fx.true_theta(2) * zz2) ? 1 : 0;
    std::vector<double> ww(static_cast<size_t>(K));
    std::vector<int> ss(static_cast<size_t>(K));
    std::vector<double> pp(static_cast<size_t>(K));
    int any = 0;
    for (int k = 0; k < K; ++k) {
      ww[static_cast<size_t>(k)] = 0.5 * zz2 + normal(rng);
      pp[static_cast<size_t>(k)] = expit(cohort_intercept(k) + 0.7 * ww[static_cast<size_t>(k)] + 0.6 * dd);
      ss[static_cast<size_t>(k)] = unif(rng) < pp[static_cast<size_t>(k)] ? 1 : 0;
      any += ss[static_cast<size_t>(k)];
      auto& t = fx.totals[static_cast<size_t>(k)];
      t[0] += 1.0;
      t[1] += dd;
      t[2] += ww[static_cast<size_t>(k)];
    }
    const double pe = expit(ext_intercept + 0.3 * zz2);
    const std::string id = "u" + std::to_string(i);
    if (unif(rng) < pe) {
      ext_ids.push_back(id);
      ext_pi.push_back(pe);
      std::vector<double> row{dd, zz1, zz2};
      row.insert(row.end(), ww.begin(), ww.end());
      ext_rows.push_back(std::move(row));
    }
    if (any == 0) continue;
    ids.push_back(id);
    d.push_back(dd);
    z1.push_back(zz1);
    z2.push_back(zz2);
    for (int k = 0; k < K; ++k) {
      w[static_cast<size_t>(k)].push_back(ww[static_cast<size_t>(k)]);
      s[static_cast<size_t>(k)].push_back(ss[static_cast<size_t>(k)]);
      pik[static_cast<size_t>(k)].push_back(pp[static_cast<size_t>(k)]);
    }
  }

  const Index n = static_cast<Index>(ids.size());
  NamedMatrix cov;
  cov.names = {"Z1", "Z2"};
  std::vector<std::string> cohort_names;
  for (int k = 0; k < K; ++k) {
    cov.names.push_back("W" + std::to_string(k + 1));
    cohort_names.push_back("C" + std::to_string(k + 1));
  }
  cov.values.resize(n, 2 + K);
  MatrixXi ind(n, K);
  fx.true_pi.resize(n, K);
  VectorXd outcome(n);
  for (Index i = 0; i < n; ++i) {
    const auto u = static_cast<size_t>(i);
    outcome(i) = d[u];
    cov.values(i, 0) = z1[u];
    cov.values(i, 1) = z2[u];
    for (int k = 0; k < K; ++k) {
      cov.values(i, 2 + k) = w[static_cast<size_t>(k)][u];
      ind(i, k) = s[static_cast<size_t>(k)][u];
      fx.true_pi(i, k) = pik[static_cast<size_t>(k)][u];
    }
  }
  fx.internal = std::make_shared<const CombinedSample>(
      CombinedSample::make(ids, outcome, cov, ind, false, cohort_names));

  NamedMatrix ecov;
  ecov.names = {"D", "Z1", "Z2"};
  for (int k = 0; k < K; ++k) ecov.names.push_back("W" + std::to_string(k + 1));
  const Index m = static_cast<Index>(ext_ids.size());
  ecov.values.resize(m, 3 + K);
  VectorXd epi(m);
  for (Index e = 0; e < m; ++e) {
    for (Index j = 0; j < 3 + K; ++j) ecov.values(e, j) = ext_rows[static_cast<size_t>(e)][static_cast<size_t>(j)];
    epi(e) = ext_pi[static_cast<size_t>(e)];
  }
  fx.external = std::make_shared<const ExternalSample>(ExternalSample::make(ext_ids, ecov, epi));

  fx.roles.disease_covariates = {"Z1", "Z2"};
  fx.roles.auxiliary = {"Z1"};
  for (int k = 0; k < K; ++k) fx.roles.cohorts.push_back({cohort_names[static_cast<size_t>(k)], {"D", "W" + std::to_string(k + 1)}});
  return fx;
}

inline AnalysisContext context(const Fixture& fx, bool require_aux = false, bool aux_outcome = true,
                               bool give_population_size = true) {
  ContextOptions o;
  o.require_auxiliary = require_aux;
  o.aux_includes_outcome = aux_outcome;
  if (give_population_size) o.population_size = fx.population_size;
  return validate_roles(fx.internal, fx.external, fx.roles, {true, fx.roles.disease_covariates}, o);
}

}  // namespace fixture
