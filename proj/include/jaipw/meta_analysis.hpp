#pragma once

#include <string>
#include <vector>

#include "jaipw/pipeline.hpp"

namespace jaipw {

struct MetaEntry {
  std::string label;
  VectorXd estimate;
  MatrixXd variance;
};

struct MetaFailure {
  std::string label;
  std::string message;
};

struct MetaInput {
  std::vector<std::string> terms;
  std::vector<MetaEntry> entries;
  std::vector<MetaFailure> failures;
  std::vector<std::string> warnings;
  std::vector<EstimateReport> reports;  // per successful cohort, same order as entries

  void validate() const;
};

// Fits `spec` on each cohort separately; failures are recorded with the cohort label.
MetaInput fit_per_cohort(const AnalysisContext& ctx, const MethodSpec& spec);

// Coordinate-wise inverse-variance weighting.
EstimateReport combine_fixed_effects(const MetaInput& input);

}  // namespace jaipw
