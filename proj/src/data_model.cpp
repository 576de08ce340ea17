#include "jaipw/data_model.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "jaipw/error.hpp"

namespace jaipw {

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::vector<std::string> default_ids(Index n) {
  std::vector<std::string> ids(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = std::to_string(i + 1);
  return ids;
}

void check_unique_ids(const std::vector<std::string>& ids, const std::string& dataset) {
  std::unordered_map<std::string, int> seen;
  seen.reserve(ids.size());
  for (const auto& id : ids) {
    if (++seen[id] > 1) fail(ErrorKind::DataFormat, dataset + ": duplicate id '" + id + "'");
  }
}

MatrixXd subset_rows(const MatrixXd& m, const std::vector<Index>& rows) {
  MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

}  // namespace

std::optional<Index> NamedMatrix::find(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<Index>(it - names.begin());
}

Index NamedMatrix::index_of(const std::string& name, const std::string& dataset) const {
  auto idx = find(name);
  if (!idx) fail(ErrorKind::MissingColumn, "column '" + name + "' not found in " + dataset);
  return *idx;
}

Eigen::Ref<const VectorXd> NamedMatrix::column(const std::string& name,
                                               const std::string& dataset) const {
  return values.col(index_of(name, dataset));
}

VectorXi composite_indicator(const MatrixXi& indicators) {
  require(indicators.cols() >= 1, ErrorKind::InvalidArgument, "need at least one cohort column");
  VectorXi out(indicators.rows());
  for (Index i = 0; i < indicators.rows(); ++i) out(i) = indicators.row(i).maxCoeff() > 0 ? 1 : 0;
  return out;
}

std::vector<std::string> split_term(const std::string& term) {
  std::vector<std::string> parts;
  std::stringstream ss(term);
  std::string part;
  while (std::getline(ss, part, ':')) {
    if (part.empty()) fail(ErrorKind::Config, "malformed term '" + term + "'");
    parts.push_back(part);
  }
  if (parts.empty()) fail(ErrorKind::Config, "empty term");
  return parts;
}

CombinedSample CombinedSample::make(std::vector<std::string> ids, VectorXd outcome,
                                    NamedMatrix covariates, MatrixXi indicators,
                                    bool full_population, std::vector<std::string> cohort_names) {
  const Index n = outcome.size();
  if (ids.empty()) ids = default_ids(n);
  require(static_cast<Index>(ids.size()) == n && covariates.values.rows() == n &&
              indicators.rows() == n,
          ErrorKind::DimensionMismatch, "internal sample: inconsistent row counts");
  require(static_cast<Index>(covariates.names.size()) == covariates.values.cols(),
          ErrorKind::DimensionMismatch, "internal sample: covariate names do not match columns");
  require(indicators.cols() >= 1, ErrorKind::DataFormat, "internal sample: no cohort indicators");
  check_unique_ids(ids, "internal sample");
  std::set<std::string> names(covariates.names.begin(), covariates.names.end());
  require(names.size() == covariates.names.size(), ErrorKind::DataFormat,
          "internal sample: duplicate covariate names");

  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < indicators.cols(); ++k) {
      const int s = indicators(i, k);
      require(s == 0 || s == 1, ErrorKind::DataFormat, "cohort indicators must be 0 or 1");
    }
  }
  VectorXi composite = composite_indicator(indicators);
  for (Index i = 0; i < n; ++i) {
    if (!composite(i)) {
      require(full_population, ErrorKind::DataFormat,
              "internal sample row '" + ids[static_cast<size_t>(i)] + "' is not in any cohort");
      continue;
    }
    require(outcome(i) == 0.0 || outcome(i) == 1.0, ErrorKind::DataFormat,
            "outcome must be 0 or 1 (row '" + ids[static_cast<size_t>(i)] + "')");
    require(covariates.values.row(i).allFinite(), ErrorKind::DataFormat,
            "missing or non-finite covariate in row '" + ids[static_cast<size_t>(i)] + "'");
  }

  if (cohort_names.empty()) {
    for (Index k = 0; k < indicators.cols(); ++k) cohort_names.push_back("S" + std::to_string(k + 1));
  }
  require(static_cast<Index>(cohort_names.size()) == indicators.cols(),
          ErrorKind::DimensionMismatch, "cohort name count does not match indicator columns");

  CombinedSample s;
  s.ids = std::move(ids);
  s.outcome = std::move(outcome);
  s.covariates = std::move(covariates);
  s.cohort_indicators = std::move(indicators);
  s.cohort_names = std::move(cohort_names);
  s.composite = std::move(composite);
  s.full_population = full_population;
  return s;
}

CombinedSample CombinedSample::subset(const std::vector<Index>& rows, std::vector<std::string> new_ids) const {
  std::vector<std::string> sub_ids;
  sub_ids.reserve(rows.size());
  VectorXd y(static_cast<Index>(rows.size()));
  MatrixXi ind(static_cast<Index>(rows.size()), cohorts());
  for (size_t r = 0; r < rows.size(); ++r) {
    sub_ids.push_back(ids[static_cast<size_t>(rows[r])]);
    y(static_cast<Index>(r)) = outcome(rows[r]);
    ind.row(static_cast<Index>(r)) = cohort_indicators.row(rows[r]);
  }
  if (!new_ids.empty()) sub_ids = std::move(new_ids);
  NamedMatrix cov{covariates.names, subset_rows(covariates.values, rows)};
  return make(std::move(sub_ids), std::move(y), std::move(cov), std::move(ind), full_population,
              cohort_names);
}

CombinedSample CombinedSample::selected() const {
  std::vector<Index> rows;
  for (Index i = 0; i < this->rows(); ++i)
    if (composite(i)) rows.push_back(i);
  CombinedSample s = subset(rows);
  s.full_population = false;
  return s;
}

CombinedSample CombinedSample::cohort_only(Index k) const {
  std::vector<Index> rows;
  for (Index i = 0; i < this->rows(); ++i)
    if (cohort_indicators(i, k)) rows.push_back(i);
  CombinedSample s = subset(rows);
  MatrixXi ind = s.cohort_indicators.col(k);
  return make(s.ids, s.outcome, s.covariates, ind, false, {cohort_names[static_cast<size_t>(k)]});
}

ExternalSample ExternalSample::make(std::vector<std::string> ids, NamedMatrix covariates,
                                    VectorXd pi_ext) {
  const Index m = pi_ext.size();
  if (ids.empty()) ids = default_ids(m);
  require(static_cast<Index>(ids.size()) == m && covariates.values.rows() == m,
          ErrorKind::DimensionMismatch, "external sample: inconsistent row counts");
  require(static_cast<Index>(covariates.names.size()) == covariates.values.cols(),
          ErrorKind::DimensionMismatch, "external sample: covariate names do not match columns");
  check_unique_ids(ids, "external sample");
  for (Index i = 0; i < m; ++i) {
    require(std::isfinite(pi_ext(i)) && pi_ext(i) > 0.0 && pi_ext(i) <= 1.0,
            ErrorKind::DataFormat,
            "pi_ext must lie in (0, 1] (row '" + ids[static_cast<size_t>(i)] + "')");
  }
  ExternalSample s;
  s.ids = std::move(ids);
  s.covariates = std::move(covariates);
  s.pi_ext = std::move(pi_ext);
  return s;
}

ExternalSample ExternalSample::subset(const std::vector<Index>& rows, std::vector<std::string> new_ids) const {
  std::vector<std::string> sub_ids;
  VectorXd p(static_cast<Index>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    sub_ids.push_back(ids[static_cast<size_t>(rows[r])]);
    p(static_cast<Index>(r)) = pi_ext(rows[r]);
  }
  if (!new_ids.empty()) sub_ids = std::move(new_ids);
  return make(std::move(sub_ids), NamedMatrix{covariates.names, subset_rows(covariates.values, rows)},
              std::move(p));
}

std::vector<std::string> VariableRoles::complement() const {
  std::vector<std::string> out;
  for (const auto& z : disease_covariates)
    if (!contains(auxiliary, z)) out.push_back(z);
  return out;
}

VectorXd internal_term(const CombinedSample& sample, const std::string& term) {
  VectorXd v = VectorXd::Ones(sample.rows());
  for (const auto& part : split_term(term)) {
    if (part == kOutcome && !sample.covariates.find(kOutcome)) {
      v.array() *= sample.outcome.array();
    } else {
      v.array() *= sample.covariates.column(part, "internal sample").array();
    }
  }
  return v;
}

VectorXd external_term(const ExternalSample& sample, const std::string& term) {
  VectorXd v = VectorXd::Ones(sample.rows());
  for (const auto& part : split_term(term))
    v.array() *= sample.covariates.column(part, "external sample").array();
  return v;
}

std::vector<std::string> auxiliary_feature_names(const VariableRoles& roles, bool include_outcome,
                                                 std::optional<Index> only_cohort) {
  std::vector<std::string> out;
  if (include_outcome) out.push_back(kOutcome);
  for (const auto& z : roles.complement())
    if (!contains(out, z)) out.push_back(z);
  for (size_t k = 0; k < roles.cohorts.size(); ++k) {
    if (only_cohort && static_cast<Index>(k) != *only_cohort) continue;
    for (const auto& term : roles.cohorts[k].terms)
      for (const auto& part : split_term(term))
        if (part != kOutcome && !contains(out, part)) out.push_back(part);
  }
  return out;
}

Index AnalysisContext::cohort_size(Index k) const {
  return internal->cohort_indicators.col(k).sum();
}

VectorXd AnalysisContext::cohort_column(Index k) const {
  return internal->cohort_indicators.col(k).cast<double>();
}

AnalysisContext validate_roles(std::shared_ptr<const CombinedSample> sample,
                               std::shared_ptr<const ExternalSample> external, VariableRoles roles,
                               DiseaseModelSpec disease, ContextOptions options) {
  require(sample != nullptr, ErrorKind::InvalidArgument, "internal sample missing");
  require(!roles.cohorts.empty(), ErrorKind::Config, "at least one cohort is required");
  require(sample->cohorts() == static_cast<Index>(roles.cohorts.size()), ErrorKind::Config,
          "internal sample has " + std::to_string(sample->cohorts()) +
              " cohort indicators but roles declare " + std::to_string(roles.cohorts.size()));
  require(sample->composite.minCoeff() == 1, ErrorKind::DataFormat,
          "internal sample contains rows outside every cohort");
  require(!options.require_external || external != nullptr, ErrorKind::Config,
          "this method requires an external sample");

  if (disease.covariates.empty()) disease.covariates = roles.disease_covariates;
  if (roles.disease_covariates.empty()) roles.disease_covariates = disease.covariates;
  require(disease.covariates == roles.disease_covariates, ErrorKind::Config,
          "disease model covariates disagree with the declared roles");

  // Role partition and disjointness of the auxiliary set from every selection model.
  std::set<std::string> zset(roles.disease_covariates.begin(), roles.disease_covariates.end());
  require(zset.size() == roles.disease_covariates.size(), ErrorKind::Config,
          "duplicate disease covariate");
  for (const auto& a : roles.auxiliary) {
    require(zset.count(a) == 1, ErrorKind::Config,
            "auxiliary variable '" + a + "' is not a disease covariate");
  }
  if (options.require_auxiliary && roles.auxiliary.empty())
    fail(ErrorKind::EmptyAuxiliary, "the doubly robust estimator needs a nonempty auxiliary set");
  for (const auto& cohort : roles.cohorts) {
    for (const auto& term : cohort.terms) {
      for (const auto& part : split_term(term)) {
        if (contains(roles.auxiliary, part))
          fail(ErrorKind::AuxiliaryInSelection,
               "auxiliary variable '" + part + "' appears in the selection model of cohort " +
                   cohort.name);
      }
    }
  }

  AnalysisContext ctx;
  ctx.internal = std::move(sample);
  ctx.external = std::move(external);
  ctx.options = options;

  const Index n = ctx.internal->rows();
  const Index p = (disease.intercept ? 1 : 0) + static_cast<Index>(disease.covariates.size());
  ctx.disease_design.resize(n, p);
  Index col = 0;
  if (disease.intercept) {
    ctx.disease_terms.push_back(kIntercept);
    ctx.disease_design.col(col++).setOnes();
  }
  for (const auto& z : disease.covariates) {
    require(z != kOutcome, ErrorKind::Config, "the outcome cannot be a disease covariate");
    ctx.disease_terms.push_back(z);
    if (contains(roles.auxiliary, z)) ctx.aux_positions.push_back(col);
    ctx.disease_design.col(col++) = ctx.internal->covariates.column(z, "internal sample");
  }
  {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(ctx.disease_design);
    require(qr.rank() == p, ErrorKind::RankDeficient,
            "disease design is not of full column rank on the selected rows");
  }

  for (const auto& cohort : roles.cohorts) {
    std::vector<std::string> terms{kIntercept};
    for (const auto& t : cohort.terms) {
      require(!contains(terms, t), ErrorKind::Config, "duplicate term '" + t + "' in cohort " + cohort.name);
      terms.push_back(t);
    }
    MatrixXd xi(n, static_cast<Index>(terms.size()));
    xi.col(0).setOnes();
    for (size_t j = 1; j < terms.size(); ++j)
      xi.col(static_cast<Index>(j)) = internal_term(*ctx.internal, terms[j]);
    ctx.selection_internal.push_back(std::move(xi));
    if (ctx.external) {
      MatrixXd xe(ctx.external->rows(), static_cast<Index>(terms.size()));
      xe.col(0).setOnes();
      for (size_t j = 1; j < terms.size(); ++j)
        xe.col(static_cast<Index>(j)) = external_term(*ctx.external, terms[j]);
      require(xe.allFinite(), ErrorKind::DataFormat,
              "external sample has missing selection variables for cohort " + cohort.name);
      ctx.selection_external.push_back(std::move(xe));
    }
    ctx.selection_terms.push_back(std::move(terms));
  }

  ctx.external_match = VectorXi::Constant(n, -1);
  if (ctx.external) {
    std::unordered_map<std::string, Index> ext_index;
    ext_index.reserve(ctx.external->ids.size());
    for (Index e = 0; e < ctx.external->rows(); ++e) ext_index[ctx.external->ids[static_cast<size_t>(e)]] = e;
    for (Index i = 0; i < n; ++i) {
      auto it = ext_index.find(ctx.internal->ids[static_cast<size_t>(i)]);
      if (it != ext_index.end()) {
        ctx.external_match(i) = static_cast<int>(it->second);
        ctx.overlap.emplace_back(i, it->second);
      }
    }
  }

  if (options.population_size) {
    require(*options.population_size > 0, ErrorKind::Config, "population size must be positive");
    ctx.population_size = *options.population_size;
  } else {
    require(ctx.external != nullptr, ErrorKind::Config,
            "population size is required when no external sample is supplied");
    ctx.population_size = ctx.external->pi_ext.cwiseInverse().sum();
    ctx.population_size_estimated = true;
    ctx.warnings.push_back("population size not supplied; using the design-weighted external total " +
                           std::to_string(ctx.population_size));
  }

  if (options.require_auxiliary) {
    ctx.aux_features = auxiliary_feature_names(roles, options.aux_includes_outcome);
    const Index r = static_cast<Index>(ctx.aux_features.size());
    ctx.aux_internal.resize(n, r);
    for (Index j = 0; j < r; ++j)
      ctx.aux_internal.col(j) = internal_term(*ctx.internal, ctx.aux_features[static_cast<size_t>(j)]);
    if (ctx.external) {
      ctx.aux_external.resize(ctx.external->rows(), r);
      for (Index j = 0; j < r; ++j)
        ctx.aux_external.col(j) = external_term(*ctx.external, ctx.aux_features[static_cast<size_t>(j)]);
      require(ctx.aux_external.allFinite(), ErrorKind::DataFormat,
              "external sample has missing auxiliary features");
    }
  }

  ctx.roles = std::move(roles);
  ctx.disease = std::move(disease);
  return ctx;
}

AnalysisContext restrict_to_cohort(const AnalysisContext& ctx, Index k) {
  require(k >= 0 && k < ctx.cohorts(), ErrorKind::InvalidArgument, "cohort index out of range");
  require(ctx.cohort_size(k) > 0, ErrorKind::TooFewRows,
          "cohort " + ctx.roles.cohorts[static_cast<size_t>(k)].name + " has no selected rows");
  auto sub = std::make_shared<const CombinedSample>(ctx.internal->cohort_only(k));
  VariableRoles roles = ctx.roles;
  roles.cohorts = {ctx.roles.cohorts[static_cast<size_t>(k)]};
  ContextOptions opts = ctx.options;
  opts.population_size = ctx.population_size;
  AnalysisContext out = validate_roles(sub, ctx.external, roles, ctx.disease, opts);
  out.population_size_estimated = ctx.population_size_estimated;
  return out;
}

}  // namespace jaipw
