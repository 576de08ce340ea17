#include "jaipw/sim_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "jaipw/csv_io.hpp"
#include "jaipw/error.hpp"
#include "jaipw/ipw_estimator.hpp"
#include "jaipw/meta_analysis.hpp"
#include "jaipw/pipeline.hpp"
#include "jaipw/rng.hpp"

namespace jaipw {

namespace {

constexpr std::uint64_t kPopulationStream = 0x706f70ULL;
constexpr std::uint64_t kReferenceStream = 0x726566ULL;
constexpr std::uint64_t kJaipwStream = 0x6a6169ULL;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::vector<std::string> kCovariates{"Z1", "Z2", "Z3", "W1", "W2", "W3"};
const std::vector<std::string> kCohortNames{"C1", "C2", "C3"};

struct Raw {
  MatrixXd z, w, pi;
  VectorXd d, pe;
  MatrixXi s;
  std::vector<char> ext;
};

Raw generate_raw(const SimScenario& sc, Index n, Rng& rng) {
  boost::random::normal_distribution<double> norm;
  boost::random::uniform_01<double> unif;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Constant(sc.z_correlation);
  cov.diagonal().setOnes();
  const Eigen::Matrix3d chol = cov.llt().matrixL();
  // eps1 = a (Z1 + Z2 + Z3) + b eta has unit variance and correlation rho with each Z_j.
  const double rho = sc.z_correlation;
  const double a = rho / (1.0 + 2.0 * rho);
  const double var_sum = 3.0 + 6.0 * rho;
  const double b = std::sqrt(std::max(0.0, 1.0 - a * a * var_sum));
  const double g = sc.setup == 2 ? sc.interaction : 0.0;

  Raw r;
  r.z.resize(n, 3);
  r.w.resize(n, 3);
  r.pi.resize(n, 3);
  r.d.resize(n);
  r.pe.resize(n);
  r.s.resize(n, 3);
  r.ext.resize(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Eigen::Vector3d e(norm(rng), norm(rng), norm(rng));
    const Eigen::Vector3d z = chol * e;
    r.z.row(i) = z.transpose();
    const double eta = sc.theta[0] + sc.theta[1] * z(0) + sc.theta[2] * z(1) + sc.theta[3] * z(2);
    const double d = unif(rng) < expit(eta) ? 1.0 : 0.0;
    r.d(i) = d;
    const double zsum = z.sum();
    for (int k = 0; k < 3; ++k) {
      const auto& gk = sc.gamma[static_cast<size_t>(k)];
      const double eps1 = a * zsum + b * norm(rng);
      const double mean = gk[0] * d + gk[1] * z(0) + gk[2] * z(1) + gk[3] * z(2);
      r.w(i, k) = eps1 + mean + norm(rng) + norm(rng);
    }
    const double z2 = z(1), z3 = z(2), w1 = r.w(i, 0), w2 = r.w(i, 1), w3 = r.w(i, 2);
    const auto& a1 = sc.alpha1;
    const auto& a2 = sc.alpha2;
    const auto& a3 = sc.alpha3;
    const double l1 = a1[0] + a1[1] * z2 + a1[2] * z3 + a1[3] * w1 + a1[4] * d + g * (d * z2 + d * z3 + d * w1);
    const double l2 = a2[0] + a2[1] * z3 + a2[2] * w2 + a2[3] * d + g * (d * z3 + d * w2);
    const double l3 = a3[0] + a3[1] * z2 + a3[2] * w3 + g * z2 * w3;
    r.pi(i, 0) = expit(l1);
    r.pi(i, 1) = expit(l2);
    r.pi(i, 2) = expit(l3);
    for (int k = 0; k < 3; ++k) r.s(i, k) = unif(rng) < r.pi(i, k) ? 1 : 0;
    const auto& nu = sc.nu;
    r.pe(i) = sc.external_scale * expit(nu[0] + nu[1] * d + nu[2] * z(0) + nu[3] * z2 + nu[4] * z3);
    r.ext[static_cast<size_t>(i)] = unif(rng) < r.pe(i) ? 1 : 0;
  }
  return r;
}

double raw_value(const Raw& r, const std::string& name, Index i) {
  if (name == kOutcome) return r.d(i);
  if (name.size() == 2 && name[0] == 'Z') return r.z(i, name[1] - '1');
  if (name.size() == 2 && name[0] == 'W') return r.w(i, name[1] - '1');
  fail(ErrorKind::InvalidArgument, "unknown simulation variable '" + name + "'");
}

const std::vector<std::vector<std::string>>& strata_variables() {
  static const std::vector<std::vector<std::string>> v{{"D", "Z2", "Z3", "W1"}, {"D", "Z3", "W2"}, {"Z2", "W3"}};
  return v;
}

struct SimMethod {
  std::string label;
  EstimatorKind kind = EstimatorKind::JPL;
  SelectionMethod selection = SelectionMethod::JPL;
  StrataMode strata = StrataMode::ExactJoint;
  bool meta = false;
  int aux = -1;  // -1: scenario default, 0: without D, 1: with D
};

SimMethod parse_sim_method(const std::string& label) {
  SimMethod m;
  m.label = label;
  std::string base = label;
  if (base.rfind("Meta-", 0) == 0) {
    m.meta = true;
    base = base.substr(5);
  }
  if (base == "JPS-Exact" || base == "JPS-Marginal") {
    m.kind = EstimatorKind::JPS;
    m.strata = base == "JPS-Exact" ? StrataMode::ExactJoint : StrataMode::MarginalApprox;
  } else if (base == "JAIPW-NoD" || base == "JAIPW-D") {
    m.kind = EstimatorKind::JAIPW;
    m.aux = base == "JAIPW-D" ? 1 : 0;
  } else {
    m.kind = parse_estimator(base);
  }
  require(!(m.meta && (m.kind == EstimatorKind::Unweighted || m.kind == EstimatorKind::UnweightedCohortIntercepts)),
          ErrorKind::Config, "meta-analysis of an unweighted fit is not supported");
  return m;
}

VariableRoles sim_roles(const std::vector<std::vector<std::string>>& designs) {
  VariableRoles roles;
  for (size_t k = 0; k < designs.size(); ++k) roles.cohorts.push_back({kCohortNames[k], designs[k]});
  roles.disease_covariates = {"Z1", "Z2", "Z3"};
  roles.auxiliary = {"Z1"};
  return roles;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNaN : s / static_cast<double>(v.size());
}

}  // namespace

void SimScenario::validate() const {
  require(setup == 1 || setup == 2, ErrorKind::Config, "setup must be 1 or 2");
  require(population_size >= 100, ErrorKind::Config, "population size must be at least 100");
  require(replications >= 2, ErrorKind::Config, "replications must be at least 2");
  require(threads >= 1, ErrorKind::Config, "threads must be positive");
  require(z_correlation > -0.5 && z_correlation < 1.0, ErrorKind::Config, "Z correlation must be in (-0.5, 1)");
  require(external_scale > 0.0 && external_scale <= 1.0, ErrorKind::Config, "external scale must be in (0, 1]");
  require(reference_size >= 1000, ErrorKind::Config, "reference population must have at least 1000 rows");
  require(!methods.empty(), ErrorKind::Config, "at least one method is required");
  for (const auto& m : methods) parse_sim_method(m);
  jaipw.validate();
}

std::vector<std::string> true_selection_terms(int k, int setup) {
  return build_misspecified_design(k, setup, false);
}

std::vector<std::string> build_misspecified_design(int k, int setup, bool misspecified) {
  require(k >= 0 && k < 3, ErrorKind::InvalidArgument, "cohort index out of range");
  require(setup == 1 || setup == 2, ErrorKind::InvalidArgument, "setup must be 1 or 2");
  static const std::vector<std::vector<std::string>> main{{"Z2", "Z3", "W1", "D"}, {"Z3", "W2", "D"}, {"Z2", "W3"}};
  static const std::vector<std::vector<std::string>> inter{{"D:Z2", "D:Z3", "D:W1"}, {"D:Z3", "D:W2"}, {"Z2:W3"}};
  std::vector<std::string> terms = main[static_cast<size_t>(k)];
  if (setup == 1) {
    if (misspecified) {
      const std::string drop = k < 2 ? "D" : "Z2";
      terms.erase(std::remove(terms.begin(), terms.end(), drop), terms.end());
    }
  } else if (!misspecified) {
    const auto& extra = inter[static_cast<size_t>(k)];
    terms.insert(terms.end(), extra.begin(), extra.end());
  }
  return terms;
}

SimPopulation generate_population(const SimScenario& sc, int replicate_index) {
  Rng rng = make_rng(sc.seed, kPopulationStream, static_cast<std::uint64_t>(replicate_index));
  const Index n = sc.population_size;
  const Raw r = generate_raw(sc, n, rng);

  std::vector<std::string> ids(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = "u" + std::to_string(i);
  NamedMatrix cov{kCovariates, MatrixXd(n, 6)};
  cov.values << r.z, r.w;

  SimPopulation out;
  std::vector<Index> ext_rows;
  for (Index i = 0; i < n; ++i)
    if (r.ext[static_cast<size_t>(i)]) ext_rows.push_back(i);
  const Index m = static_cast<Index>(ext_rows.size());
  std::vector<std::string> ext_ids;
  NamedMatrix ext_cov;
  ext_cov.names = {kOutcome};
  ext_cov.names.insert(ext_cov.names.end(), kCovariates.begin(), kCovariates.end());
  ext_cov.values.resize(m, 7);
  VectorXd pe(m);
  for (Index j = 0; j < m; ++j) {
    const Index i = ext_rows[static_cast<size_t>(j)];
    ext_ids.push_back(ids[static_cast<size_t>(i)]);
    ext_cov.values(j, 0) = r.d(i);
    ext_cov.values.block(j, 1, 1, 6) = cov.values.row(i);
    pe(j) = r.pe(i);
  }
  out.external = ExternalSample::make(std::move(ext_ids), std::move(ext_cov), std::move(pe));
  out.population = CombinedSample::make(std::move(ids), r.d, std::move(cov), r.s, true, kCohortNames);
  out.true_pi = r.pi;
  return out;
}

StrataSpec simulation_strata(const SimScenario& sc, StrataMode mode) {
  Rng rng = make_rng(sc.seed, kReferenceStream);
  const Index n = sc.reference_size;
  const Raw r = generate_raw(sc, n, rng);

  // Cutpoints at the 15th and 85th percentiles of each continuous variable.
  std::map<std::string, StratVariable> vars;
  vars["D"] = StratVariable{"D", {}};
  for (const std::string name : {"Z2", "Z3", "W1", "W2", "W3"}) {
    std::vector<double> v(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) v[static_cast<size_t>(i)] = raw_value(r, name, i);
    std::sort(v.begin(), v.end());
    auto q = [&](double p) { return v[static_cast<size_t>(std::floor(p * static_cast<double>(n - 1)))]; };
    vars[name] = StratVariable{name, {q(0.15), q(0.85)}};
  }

  StrataSpec spec;
  spec.mode = mode;
  spec.empty_cells = EmptyCellPolicy::Zero;
  const StratVariable& anchor_var = vars["Z2"];
  const int anchor_levels = anchor_var.levels();
  std::vector<int> anchor_level(static_cast<size_t>(n));
  std::vector<double> anchor_marginal(static_cast<size_t>(anchor_levels), 0.0);
  for (Index i = 0; i < n; ++i) {
    anchor_level[static_cast<size_t>(i)] = anchor_var.level_of(raw_value(r, "Z2", i));
    anchor_marginal[static_cast<size_t>(anchor_level[static_cast<size_t>(i)])] += 1.0;
  }

  for (const auto& names : strata_variables()) {
    CohortStrata cs;
    for (const auto& nm : names) cs.variables.push_back(vars[nm]);
    if (mode == StrataMode::ExactJoint) {
      std::vector<int> key(names.size());
      for (Index i = 0; i < n; ++i) {
        for (size_t v = 0; v < names.size(); ++v) key[v] = cs.variables[v].level_of(raw_value(r, names[v], i));
        cs.joint[key] += 1.0;
      }
      for (auto& [k, p] : cs.joint) p /= static_cast<double>(n);
    } else {
      const auto it = std::find(names.begin(), names.end(), "Z2");
      cs.anchor = it == names.end() ? -1 : static_cast<int>(it - names.begin());
      cs.anchor_marginal = anchor_marginal;
      for (double& p : cs.anchor_marginal) p /= static_cast<double>(n);
      for (size_t v = 0; v < names.size(); ++v) {
        std::vector<std::vector<double>> table(static_cast<size_t>(anchor_levels),
                                               std::vector<double>(static_cast<size_t>(cs.variables[v].levels()), 0.0));
        for (Index i = 0; i < n; ++i) {
          const auto al = static_cast<size_t>(anchor_level[static_cast<size_t>(i)]);
          table[al][static_cast<size_t>(cs.variables[v].level_of(raw_value(r, names[v], i)))] += 1.0;
        }
        for (size_t al = 0; al < table.size(); ++al)
          for (double& p : table[al]) p /= anchor_marginal[al];
        cs.conditionals.push_back(std::move(table));
      }
    }
    spec.cohorts.push_back(std::move(cs));
  }
  spec.validate();
  return spec;
}

std::vector<MetricRow> compute_metrics(const std::string& method, const std::vector<std::string>& terms,
                                       const MatrixXd& est, const MatrixXd& se, const VectorXd& truth,
                                       const MatrixXd& naive) {
  const Index R = est.rows(), p = est.cols();
  require(truth.size() == p && static_cast<Index>(terms.size()) == p, ErrorKind::DimensionMismatch,
          "metrics: truth and terms must match the estimate columns");
  require(naive.rows() == R && naive.cols() == p, ErrorKind::DimensionMismatch,
          "metrics: naive estimates must align with the method's replicates");
  require(se.size() == 0 || (se.rows() == R && se.cols() == p), ErrorKind::DimensionMismatch,
          "metrics: standard errors must align with the estimates");
  std::vector<MetricRow> rows;
  for (Index j = 0; j < p; ++j) {
    MetricRow m;
    m.method = method;
    m.term = terms[static_cast<size_t>(j)];
    m.truth = truth(j);
    std::vector<double> dev, ses, hits;
    double ss = 0.0, ss_naive = 0.0;
    for (Index r = 0; r < R; ++r) {
      if (!std::isfinite(est(r, j)) || !std::isfinite(naive(r, j))) continue;
      const double d = est(r, j) - truth(j);
      dev.push_back(d);
      ss += d * d;
      ss_naive += (naive(r, j) - truth(j)) * (naive(r, j) - truth(j));
      if (se.size() > 0 && std::isfinite(se(r, j))) {
        ses.push_back(se(r, j));
        hits.push_back(std::abs(d) <= kNormalQuantile975 * se(r, j) ? 1.0 : 0.0);
      }
    }
    m.n_ok = static_cast<int>(dev.size());
    const double bias = mean_of(dev);
    m.bias_x100 = 100.0 * bias;
    m.relative_bias_pct = std::abs(bias) / std::abs(truth(j)) * 100.0;
    m.rmse_ratio = ss / ss_naive;
    double var = 0.0;
    for (double d : dev) var += (d - bias) * (d - bias);
    m.mc_sd = dev.size() > 1 ? std::sqrt(var / static_cast<double>(dev.size() - 1)) : kNaN;
    m.zero_sd = m.mc_sd == 0.0;
    m.has_se = !ses.empty();
    m.mean_se = mean_of(ses);
    if (m.zero_sd) {
      m.coverage = 1.0;
      m.se_bias_pct = kNaN;
    } else {
      m.coverage = m.has_se ? mean_of(hits) : kNaN;
      m.se_bias_pct = m.has_se ? std::abs(m.mean_se - m.mc_sd) / m.mc_sd * 100.0 : kNaN;
    }
    rows.push_back(m);
  }
  return rows;
}

const MetricRow& SimStudyResult::metric(const std::string& method, const std::string& term) const {
  for (const auto& m : metrics)
    if (m.method == method && m.term == term) return m;
  fail(ErrorKind::InvalidArgument, "no metric for " + method + " / " + term);
}

SimStudyResult run_study(const SimScenario& scenario) {
  SimScenario sc = scenario;
  if (std::find(sc.methods.begin(), sc.methods.end(), "Unweighted") == sc.methods.end())
    sc.methods.insert(sc.methods.begin(), "Unweighted");
  sc.validate();

  std::vector<SimMethod> methods;
  bool need_exact = false, need_marginal = false;
  for (const auto& label : sc.methods) {
    methods.push_back(parse_sim_method(label));
    const auto& m = methods.back();
    if (m.kind == EstimatorKind::JPS) (m.strata == StrataMode::ExactJoint ? need_exact : need_marginal) = true;
  }
  const StrataSpec exact = need_exact ? simulation_strata(sc, StrataMode::ExactJoint) : StrataSpec{};
  const StrataSpec marginal = need_marginal ? simulation_strata(sc, StrataMode::MarginalApprox) : StrataSpec{};

  SimStudyResult res;
  res.scenario = sc;
  res.terms = {kIntercept, "Z1", "Z2", "Z3"};
  res.replications = sc.replications;
  const Index R = sc.replications, p = 4;
  for (const auto& m : methods) {
    MethodRun run;
    run.method = m.label;
    run.estimates = MatrixXd::Constant(R, p, kNaN);
    run.se = MatrixXd::Constant(R, p, kNaN);
    run.errors.assign(static_cast<size_t>(R), "");
    res.runs.push_back(std::move(run));
  }

  std::vector<std::vector<std::string>> fitted(3), main_effects(3);
  for (int k = 0; k < 3; ++k) {
    fitted[static_cast<size_t>(k)] = build_misspecified_design(k, sc.setup, sc.misspecified[static_cast<size_t>(k)]);
    main_effects[static_cast<size_t>(k)] = build_misspecified_design(k, 1, false);
  }
  const DiseaseModelSpec disease{true, {"Z1", "Z2", "Z3"}};

  auto run_replicate = [&](int r) {
    const SimPopulation pop = generate_population(sc, r);
    auto internal = std::make_shared<const CombinedSample>(pop.population.selected());
    auto external = std::make_shared<const ExternalSample>(pop.external);
    ContextOptions opts;
    opts.population_size = static_cast<double>(sc.population_size);

    std::map<std::pair<int, int>, std::shared_ptr<AnalysisContext>> contexts;  // (design, aux flag)
    auto context = [&](bool jcl, int aux) -> const AnalysisContext& {
      auto& slot = contexts[{jcl ? 1 : 0, aux}];
      if (!slot) {
        ContextOptions o = opts;
        o.require_auxiliary = aux >= 0;
        o.aux_includes_outcome = aux == 1;
        slot = std::make_shared<AnalysisContext>(
            validate_roles(internal, external, sim_roles(jcl ? main_effects : fitted), disease, o));
      }
      return *slot;
    };

    MatrixXd known_pi(internal->rows(), 3);
    {
      Index j = 0;
      for (Index i = 0; i < pop.population.rows(); ++i)
        if (pop.population.composite(i) == 1) known_pi.row(j++) = pop.true_pi.row(i);
    }

    for (size_t mi = 0; mi < methods.size(); ++mi) {
      const SimMethod& m = methods[mi];
      MethodRun& run = res.runs[mi];
      try {
        const int aux = m.kind == EstimatorKind::JAIPW ? (m.aux >= 0 ? m.aux : (sc.aux_includes_outcome ? 1 : 0)) : -1;
        const bool jcl = m.kind == EstimatorKind::JCL;
        const AnalysisContext& ctx = context(jcl, aux);
        MethodSpec spec;
        spec.kind = m.kind;
        spec.variance = VarianceFlavor::Auto;
        if (m.kind == EstimatorKind::JPS) spec.strata = m.strata == StrataMode::ExactJoint ? exact : marginal;
        if (jcl) {
          spec.totals.population_size = static_cast<double>(sc.population_size);
          for (int k = 0; k < 3; ++k) {
            std::map<std::string, double> block;
            for (const auto& t : main_effects[static_cast<size_t>(k)])
              block[t] = internal_term(pop.population, t).sum();
            spec.totals.totals.push_back(std::move(block));
          }
        }
        if (m.kind == EstimatorKind::Known) spec.known_pi = known_pi;
        if (m.kind == EstimatorKind::JAIPW) {
          spec.jaipw = sc.jaipw;
          spec.jaipw.seed = derive_seed(sc.seed, kJaipwStream, static_cast<std::uint64_t>(r));
          spec.variance = sc.jaipw_variance ? VarianceFlavor::Approx : VarianceFlavor::None;
        }
        EstimateReport rep;
        if (m.meta) {
          rep = combine_fixed_effects(fit_per_cohort(ctx, spec));
        } else {
          rep = run_method(ctx, spec).report;
        }
        require(rep.estimate.allFinite(), ErrorKind::NoConvergence, "non-finite estimate");
        run.estimates.row(r) = rep.estimate.transpose();
        if (rep.has_variance()) run.se.row(r) = rep.se.transpose();
      } catch (const std::exception& e) {
        run.errors[static_cast<size_t>(r)] = e.what();
      }
    }
  };

  const int workers = std::max(1, std::min<int>(sc.threads, sc.replications));
  if (workers == 1) {
    for (int r = 0; r < sc.replications; ++r) run_replicate(r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (int r = next++; r < sc.replications; r = next++) run_replicate(r);
      });
    for (auto& th : pool) th.join();
  }

  const VectorXd truth = Eigen::Map<const VectorXd>(sc.theta.data(), 4);
  const MatrixXd& naive = res.runs[static_cast<size_t>(
      std::find(sc.methods.begin(), sc.methods.end(), "Unweighted") - sc.methods.begin())].estimates;
  for (auto& run : res.runs) {
    for (const auto& e : run.errors)
      if (!e.empty()) ++run.failures;
    if (sc.abort_on_failures && run.failures * 10 > sc.replications) {
      std::string first;
      for (const auto& e : run.errors)
        if (!e.empty()) {
          first = e;
          break;
        }
      fail(ErrorKind::TooManyFailedReplicates, run.method + " failed in " + std::to_string(run.failures) + " of " +
                                                    std::to_string(sc.replications) + " replicates (first: " + first + ")");
    }
    const bool any_se = run.se.array().isFinite().any();
    auto rows = compute_metrics(run.method, res.terms, run.estimates, any_se ? run.se : MatrixXd(), truth, naive);
    res.metrics.insert(res.metrics.end(), rows.begin(), rows.end());
  }
  return res;
}

std::vector<BandCheck> check_tables(const SimStudyResult& res) {
  const SimScenario& sc = res.scenario;
  std::vector<BandCheck> out;
  const double inf = std::numeric_limits<double>::infinity();
  auto has = [&](const std::string& m) {
    return std::find(sc.methods.begin(), sc.methods.end(), m) != sc.methods.end();
  };
  auto add = [&](const std::string& label, double value, double lo, double hi) {
    out.push_back({label, value, lo, hi, value >= lo && value <= hi});
  };
  const std::vector<std::string> slopes{"Z1", "Z2", "Z3"};
  const bool all_correct = !sc.misspecified[0] && !sc.misspecified[1] && !sc.misspecified[2];
  const bool all_wrong = sc.misspecified[0] && sc.misspecified[1] && sc.misspecified[2];

  if (sc.setup == 1 && has("Unweighted")) {
    const double ref[3] = {24.21, 41.20, 53.71};
    for (int j = 0; j < 3; ++j)
      add("Unweighted relative bias % " + slopes[static_cast<size_t>(j)],
          res.metric("Unweighted", slopes[static_cast<size_t>(j)]).relative_bias_pct, ref[j] - 6.0, ref[j] + 6.0);
  }
  if (sc.setup == 1 && all_correct) {
    for (const std::string m : {"JPL", "JSR"}) {
      if (!has(m)) continue;
      for (const auto& t : slopes) {
        add(m + " relative bias % " + t, res.metric(m, t).relative_bias_pct, 0.0, 5.0);
        add(m + " RMSE ratio " + t, res.metric(m, t).rmse_ratio, 0.0, 0.10);
      }
    }
    if (has("JPL"))
      for (const auto& t : slopes) add("JPL coverage " + t, res.metric("JPL", t).coverage, 0.91, 0.98);
    if (has("Meta-JPL"))
      for (const auto& t : slopes) add("Meta-JPL relative bias % " + t, res.metric("Meta-JPL", t).relative_bias_pct, 0.0, 5.0);
    if (has("Known"))
      for (const auto& t : slopes) add("Known relative bias % " + t, res.metric("Known", t).relative_bias_pct, 0.0, 2.0);
  }
  if (sc.setup == 1 && all_wrong && has("JPL"))
    add("JPL relative bias % Z2", res.metric("JPL", "Z2").relative_bias_pct, 25.0, inf);
  if (sc.setup == 2 && all_wrong) {
    auto dr_with_d = [&](const std::string& m) {
      for (const auto& t : slopes) {
        add(m + " relative bias % " + t, res.metric(m, t).relative_bias_pct, 0.0, 10.0);
        add(m + " RMSE ratio " + t, res.metric(m, t).rmse_ratio, 0.0, 0.6);
      }
    };
    auto dr_without_d = [&](const std::string& m) {
      add(m + " relative bias % Z1", res.metric(m, "Z1").relative_bias_pct, 10.0, inf);
    };
    if (has("JAIPW")) {
      if (sc.aux_includes_outcome) dr_with_d("JAIPW");
      else dr_without_d("JAIPW");
    }
    if (has("JAIPW-D")) dr_with_d("JAIPW-D");
    if (has("JAIPW-NoD")) dr_without_d("JAIPW-NoD");
  }
  return out;
}

std::string replicates_csv(const SimStudyResult& res) {
  std::ostringstream os;
  os << "replicate,method,term,estimate,se,error\n";
  for (Index r = 0; r < res.replications; ++r)
    for (const auto& run : res.runs)
      for (size_t j = 0; j < res.terms.size(); ++j)
        os << r << ',' << csv_escape(run.method) << ',' << csv_escape(res.terms[j]) << ','
           << format_double(run.estimates(r, static_cast<Index>(j))) << ','
           << format_double(run.se(r, static_cast<Index>(j))) << ','
           << csv_escape(run.errors[static_cast<size_t>(r)]) << '\n';
  return os.str();
}

std::string metrics_csv(const SimStudyResult& res) {
  std::ostringstream os;
  os << "method,term,truth,bias_x100,relative_bias_pct,rmse_ratio,mean_se,mc_sd,se_bias_pct,coverage,zero_sd,n_ok,"
        "n_failed\n";
  for (const auto& m : res.metrics) {
    int failed = 0;
    for (const auto& run : res.runs)
      if (run.method == m.method) failed = run.failures;
    os << csv_escape(m.method) << ',' << csv_escape(m.term) << ',' << format_double(m.truth) << ','
       << format_double(m.bias_x100) << ',' << format_double(m.relative_bias_pct) << ','
       << format_double(m.rmse_ratio) << ',' << format_double(m.mean_se) << ',' << format_double(m.mc_sd) << ','
       << format_double(m.se_bias_pct) << ',' << format_double(m.coverage) << ',' << (m.zero_sd ? 1 : 0) << ','
       << m.n_ok << ',' << failed << '\n';
  }
  return os.str();
}

std::string summary_text(const SimStudyResult& res, const std::vector<BandCheck>& checks) {
  const SimScenario& sc = res.scenario;
  std::ostringstream os;
  char buf[256];
  os << "Setup " << sc.setup << ", N = " << sc.population_size << ", R = " << sc.replications
     << ", seed = " << sc.seed << "\n";
  os << "Selection models misspecified: " << (sc.misspecified[0] ? "C1 " : "") << (sc.misspecified[1] ? "C2 " : "")
     << (sc.misspecified[2] ? "C3 " : "") << (sc.misspecified[0] || sc.misspecified[1] || sc.misspecified[2] ? "" : "none")
     << "\n";
  os << "Auxiliary model features include D: " << (sc.aux_includes_outcome ? "yes" : "no") << "\n";
  if (sc.setup == 2) os << "Interaction coefficients: " << format_double(sc.interaction) << "\n";
  os << "\nEstimated bias x100 (relative bias %) / RMSE ratio\n";
  std::snprintf(buf, sizeof buf, "%-28s %-22s %-22s %-22s\n", "Method", "theta1", "theta2", "theta3");
  os << buf;
  for (const auto& run : res.runs) {
    std::string line;
    std::snprintf(buf, sizeof buf, "%-28s", run.method.c_str());
    line += buf;
    std::string rmse;
    std::snprintf(buf, sizeof buf, "%-28s", "");
    rmse += buf;
    for (const std::string t : {"Z1", "Z2", "Z3"}) {
      const auto& m = res.metric(run.method, t);
      std::snprintf(buf, sizeof buf, " %-22s", (std::to_string(m.bias_x100).substr(0, 6) + " (" +
                                                 std::to_string(m.relative_bias_pct).substr(0, 5) + "%)").c_str());
      line += buf;
      std::snprintf(buf, sizeof buf, " %-22.2f", m.rmse_ratio);
      rmse += buf;
    }
    os << line << "\n" << rmse << "\n";
    if (run.failures > 0) os << "    failed replicates: " << run.failures << "\n";
  }
  os << "\nCoverage (mean SE / Monte Carlo SD)\n";
  for (const auto& run : res.runs) {
    std::snprintf(buf, sizeof buf, "%-28s", run.method.c_str());
    os << buf;
    for (const std::string t : {"Z1", "Z2", "Z3"}) {
      const auto& m = res.metric(run.method, t);
      if (m.has_se)
        std::snprintf(buf, sizeof buf, " %.3f (%.4f / %.4f)", m.coverage, m.mean_se, m.mc_sd);
      else
        std::snprintf(buf, sizeof buf, " n/a (- / %.4f)", m.mc_sd);
      os << buf;
    }
    os << "\n";
  }
  if (!checks.empty()) {
    os << "\nTable band checks\n";
    for (const auto& c : checks) {
      std::snprintf(buf, sizeof buf, "%s %-40s %.4f in [%g, %g]\n", c.pass ? "PASS" : "FAIL", c.label.c_str(), c.value,
                    c.low, c.high);
      os << buf;
    }
  }
  return os.str();
}

}  // namespace jaipw
