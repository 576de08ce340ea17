#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace jaipw {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::MatrixXi;
using Eigen::VectorXd;
using Eigen::VectorXi;

inline double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline const std::string kOutcome = "D";
inline const std::string kIntercept = "(Intercept)";

// Column-named real matrix. Names are unique.
struct NamedMatrix {
  std::vector<std::string> names;
  MatrixXd values;

  std::optional<Index> find(const std::string& name) const;
  // Throws MissingColumn naming `dataset`.
  Index index_of(const std::string& name, const std::string& dataset) const;
  Eigen::Ref<const VectorXd> column(const std::string& name, const std::string& dataset) const;
};

struct CombinedSample {
  std::vector<std::string> ids;
  VectorXd outcome;
  NamedMatrix covariates;
  MatrixXi cohort_indicators;  // rows x K, entries 0/1
  std::vector<std::string> cohort_names;
  VectorXi composite;
  // Rows with composite 0 are only legal here, inside the simulation harness.
  bool full_population = false;

  Index rows() const { return outcome.size(); }
  Index cohorts() const { return cohort_indicators.cols(); }

  // Validates invariants and computes the composite indicator.
  static CombinedSample make(std::vector<std::string> ids, VectorXd outcome, NamedMatrix covariates,
                             MatrixXi indicators, bool full_population = false,
                             std::vector<std::string> cohort_names = {});

  // new_ids, when given, replace the copied ids (resampling duplicates rows).
  CombinedSample subset(const std::vector<Index>& rows, std::vector<std::string> new_ids = {}) const;
  CombinedSample selected() const;
  // Rows with S_k = 1 only, as a single-cohort sample.
  CombinedSample cohort_only(Index k) const;
};

struct ExternalSample {
  std::vector<std::string> ids;
  NamedMatrix covariates;
  VectorXd pi_ext;

  Index rows() const { return pi_ext.size(); }

  static ExternalSample make(std::vector<std::string> ids, NamedMatrix covariates, VectorXd pi_ext);
  ExternalSample subset(const std::vector<Index>& rows, std::vector<std::string> new_ids = {}) const;
};

// A selection model term is a variable name or a ':'-joined product ("D:Z2").
// The intercept is implicit.
struct CohortSelection {
  std::string name;
  std::vector<std::string> terms;
};

struct VariableRoles {
  std::vector<CohortSelection> cohorts;
  std::vector<std::string> disease_covariates;  // Z
  std::vector<std::string> auxiliary;           // Z1 intersection

  std::vector<std::string> complement() const;  // Z minus the auxiliary set
};

struct DiseaseModelSpec {
  bool intercept = true;
  std::vector<std::string> covariates;
};

VectorXi composite_indicator(const MatrixXi& indicators);

std::vector<std::string> split_term(const std::string& term);

struct ContextOptions {
  bool require_external = true;
  bool require_auxiliary = false;  // set for the doubly robust estimator
  bool aux_includes_outcome = true;
  std::optional<double> population_size;
};

// Everything an estimator needs, bound once. Internal rows are the selected rows.
struct AnalysisContext {
  std::shared_ptr<const CombinedSample> internal;
  std::shared_ptr<const ExternalSample> external;
  VariableRoles roles;
  DiseaseModelSpec disease;
  ContextOptions options;

  double population_size = 0.0;
  bool population_size_estimated = false;
  std::vector<std::string> warnings;

  std::vector<std::string> disease_terms;
  MatrixXd disease_design;  // n x p

  std::vector<std::vector<std::string>> selection_terms;  // with intercept first
  std::vector<MatrixXd> selection_internal;               // per cohort, n x q_k
  std::vector<MatrixXd> selection_external;               // per cohort, m x q_k

  // external_match[i] = external row of internal row i, or -1.
  VectorXi external_match;
  std::vector<std::pair<Index, Index>> overlap;

  // Positions of the auxiliary covariates within disease_terms.
  std::vector<Index> aux_positions;
  std::vector<std::string> aux_features;
  MatrixXd aux_internal;  // n x r
  MatrixXd aux_external;  // m x r

  Index n_internal() const { return internal->rows(); }
  Index n_external() const { return external ? external->rows() : 0; }
  Index cohorts() const { return static_cast<Index>(roles.cohorts.size()); }
  Index dim() const { return disease_design.cols(); }
  Index cohort_size(Index k) const;
  VectorXd cohort_column(Index k) const;
};

AnalysisContext validate_roles(std::shared_ptr<const CombinedSample> sample,
                               std::shared_ptr<const ExternalSample> external, VariableRoles roles,
                               DiseaseModelSpec disease, ContextOptions options = {});

// Single-cohort view: internal rows with S_k = 1, only cohort k's selection model.
AnalysisContext restrict_to_cohort(const AnalysisContext& ctx, Index k);

// Ordered feature list (D, Z minus aux, selection variables) used by the auxiliary model.
std::vector<std::string> auxiliary_feature_names(const VariableRoles& roles, bool include_outcome,
                                                 std::optional<Index> only_cohort = std::nullopt);

// Evaluates a term on the internal sample (D resolves to the outcome).
VectorXd internal_term(const CombinedSample& sample, const std::string& term);
VectorXd external_term(const ExternalSample& sample, const std::string& term);

}  // namespace jaipw
