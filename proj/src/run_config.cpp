#include "jaipw/run_config.hpp"

#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "jaipw/csv_io.hpp"
#include "jaipw/error.hpp"

namespace jaipw {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config key '") + key + "': " + e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

StrataSpec parse_strata(const json& j) {
  StrataSpec s;
  const auto mode = get_or<std::string>(j, "mode", "exact");
  if (mode == "exact") s.mode = StrataMode::ExactJoint;
  else if (mode == "marginal") s.mode = StrataMode::MarginalApprox;
  else fail(ErrorKind::Config, "strata.mode must be 'exact' or 'marginal'");
  const auto empty = get_or<std::string>(j, "empty_cells", "error");
  if (empty == "error") s.empty_cells = EmptyCellPolicy::Error;
  else if (empty == "smooth") s.empty_cells = EmptyCellPolicy::Smooth;
  else if (empty == "zero") s.empty_cells = EmptyCellPolicy::Zero;
  else fail(ErrorKind::Config, "strata.empty_cells must be 'error', 'smooth' or 'zero'");
  for (const auto& c : j.value("cohorts", json::array())) {
    CohortStrata cs;
    for (const auto& v : c.at("variables"))
      cs.variables.push_back({v.at("name").get<std::string>(), get_or<std::vector<double>>(v, "cutpoints", {})});
    for (const auto& cell : c.value("cells", json::array()))
      cs.joint[cell.at("key").get<std::vector<int>>()] = cell.at("p").get<double>();
    cs.anchor = get_or<int>(c, "anchor", 0);
    cs.anchor_marginal = get_or<std::vector<double>>(c, "anchor_marginal", {});
    cs.conditionals = get_or<std::vector<std::vector<std::vector<double>>>>(c, "conditionals", {});
    s.cohorts.push_back(std::move(cs));
  }
  s.validate();
  return s;
}

FlexSettings parse_regressor(const json& j) {
  const auto kind = get_or<std::string>(j, "kind", "gbt");
  if (kind == "linear") return LinearSettings{};
  require(kind == "gbt", ErrorKind::Config, "jaipw.regressor.kind must be 'gbt' or 'linear'");
  GbtSettings g;
  g.rounds = get_or(j, "rounds", g.rounds);
  g.max_depth = get_or(j, "max_depth", g.max_depth);
  g.learning_rate = get_or(j, "learning_rate", g.learning_rate);
  g.subsample = get_or(j, "subsample", g.subsample);
  g.max_bins = get_or(j, "max_bins", g.max_bins);
  g.min_leaf = get_or(j, "min_leaf", g.min_leaf);
  g.lambda = get_or(j, "lambda", g.lambda);
  g.seed = get_or<std::uint64_t>(j, "seed", g.seed);
  return g;
}

JaipwConfig parse_jaipw(const json& j) {
  JaipwConfig c;
  const auto aux = get_or<std::string>(j, "aux", "flexible");
  if (aux == "flexible") c.mode = AuxMode::Flexible;
  else if (aux == "parametric") c.mode = AuxMode::Parametric;
  else if (aux == "zero") c.mode = AuxMode::Zero;
  else fail(ErrorKind::Config, "jaipw.aux must be 'flexible', 'parametric' or 'zero'");
  const auto target = get_or<std::string>(j, "target", "projection");
  if (target == "projection") c.target = AuxTarget::Projection;
  else if (target == "literal") c.target = AuxTarget::Literal;
  else fail(ErrorKind::Config, "jaipw.target must be 'projection' or 'literal'");
  c.eps_theta = get_or(j, "eps_theta", c.eps_theta);
  c.eps_score = get_or(j, "eps_score", c.eps_score);
  c.max_outer = get_or(j, "max_outer", c.max_outer);
  c.mc_draws = get_or(j, "mc_draws", c.mc_draws);
  c.bootstrap_replicates = get_or(j, "bootstrap_replicates", c.bootstrap_replicates);
  c.strict_outer = get_or(j, "strict_outer", c.strict_outer);
  if (j.contains("regressor")) c.flex = parse_regressor(j.at("regressor"));
  return c;
}

std::array<bool, 3> parse_misspec(const std::string& s) {
  if (s == "none") return {false, false, false};
  if (s == "c3") return {false, false, true};
  if (s == "c23") return {false, true, true};
  if (s == "all") return {true, true, true};
  fail(ErrorKind::Config, "misspecification must be one of none, c3, c23, all");
}

bool parse_aux_flag(const std::string& s) {
  if (s == "correct") return true;
  if (s == "incorrect") return false;
  fail(ErrorKind::Config, "aux must be 'correct' or 'incorrect'");
}

void parse_simulation(const json& j, SimScenario& sc) {
  sc.setup = get_or(j, "setup", sc.setup);
  sc.population_size = get_or<Index>(j, "population_size", sc.population_size);
  sc.replications = get_or(j, "replications", sc.replications);
  sc.interaction = get_or(j, "interaction", sc.interaction);
  sc.reference_size = get_or<Index>(j, "reference_size", sc.reference_size);
  sc.jaipw_variance = get_or(j, "jaipw_variance", sc.jaipw_variance);
  sc.abort_on_failures = get_or(j, "abort_on_failures", sc.abort_on_failures);
  if (j.contains("misspec_selection")) sc.misspecified = parse_misspec(j.at("misspec_selection").get<std::string>());
  if (j.contains("aux")) sc.aux_includes_outcome = parse_aux_flag(j.at("aux").get<std::string>());
  sc.methods = get_or(j, "methods", sc.methods);
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vector_json(const VectorXd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(number_or_null(v(i)));
  return a;
}

json report_json(const EstimateReport& r) {
  json j;
  j["method"] = r.method;
  j["variance_flavor"] = r.variance_flavor;
  j["terms"] = r.terms;
  j["estimate"] = vector_json(r.estimate);
  if (r.has_variance()) {
    j["se"] = vector_json(r.se);
    j["ci_low"] = vector_json(r.ci_low);
    j["ci_high"] = vector_json(r.ci_high);
    json rows = json::array();
    for (Index i = 0; i < r.variance.rows(); ++i) rows.push_back(vector_json(r.variance.row(i).transpose()));
    j["variance"] = rows;
  }
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["residual"] = number_or_null(r.residual);
  j["effective_n"] = r.effective_n;
  j["warnings"] = r.warnings;
  return j;
}

json selection_json(const AnalysisContext& ctx, const SelectionModelFit& fit) {
  json j;
  j["method"] = method_name(fit.method);
  j["floor"] = fit.floor;
  j["clamped"] = fit.clamped;
  j["warnings"] = fit.warnings;
  json diag = json::array();
  for (size_t k = 0; k < fit.diagnostics.size(); ++k) {
    const auto& d = fit.diagnostics[k];
    json e{{"cohort", ctx.roles.cohorts[k].name},
           {"converged", d.converged},
           {"iterations", d.iterations},
           {"residual", number_or_null(d.residual)},
           {"constraint_residual", number_or_null(d.constraint_residual)}};
    if (k < fit.alpha.size()) {
      e["terms"] = ctx.selection_terms[k];
      e["alpha"] = vector_json(fit.alpha[k]);
    }
    diag.push_back(e);
  }
  j["cohorts"] = diag;
  return j;
}

json context_json(const AnalysisContext& ctx) {
  return {{"population_size", ctx.population_size},
          {"population_size_estimated", ctx.population_size_estimated},
          {"n_internal", ctx.n_internal()},
          {"n_external", ctx.n_external()},
          {"n_overlap", ctx.overlap.size()},
          {"warnings", ctx.warnings}};
}

// Writes every file or none: earlier files are removed if a later write fails.
void write_outputs(const std::vector<std::pair<fs::path, std::string>>& files) {
  std::vector<fs::path> done;
  try {
    for (const auto& [path, content] : files) {
      write_file_atomic(path, content);
      done.push_back(path);
    }
  } catch (...) {
    std::error_code ec;
    for (const auto& p : done) fs::remove(p, ec);
    throw;
  }
}

bool needs_external(const MethodSpec& m) {
  switch (m.kind) {
    case EstimatorKind::JPL:
    case EstimatorKind::JSR:
    case EstimatorKind::JAIPW: return true;
    default: return false;
  }
}

struct CliOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
  bool check_tables = false;
  std::optional<int> setup;
  std::optional<int> replications;
  std::string misspec;
  std::string aux;
  std::string methods;
  std::optional<Index> population_size;
};

void add_common(CLI::App* app, CliOptions& o) {
  app->add_option("--config", o.config, "JSON run configuration");
  app->add_option("--seed", o.seed, "master seed");
  app->add_option("--threads", o.threads, "worker threads");
  app->add_option("--out", o.out, "output directory");
}

RunConfig build_config(const CliOptions& o, bool config_required) {
  RunConfig cfg;
  if (!o.config.empty()) {
    cfg = load_run_config(o.config);
  } else {
    require(!config_required, ErrorKind::Config, "--config is required for this subcommand");
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (!o.out.empty()) cfg.out_dir = o.out;
  require(cfg.threads >= 1, ErrorKind::Config, "--threads must be positive");
  cfg.method.threads = cfg.threads;
  cfg.scenario.threads = cfg.threads;
  if (cfg.seed) {
    cfg.scenario.seed = *cfg.seed;
    cfg.method.jaipw.seed = *cfg.seed;
    cfg.scenario.jaipw.seed = *cfg.seed;
  }
  return cfg;
}

int cmd_fit(const RunConfig& cfg, std::ostream& out) {
  const AnalysisContext ctx = load_context(cfg);
  MethodSpec spec = cfg.method;
  if (spec.kind == EstimatorKind::JAIPW &&
      (spec.jaipw.mode == AuxMode::Parametric || spec.variance == VarianceFlavor::Bootstrap))
    require(cfg.seed.has_value(), ErrorKind::Config, "a seed is required for stochastic JAIPW settings");
  if (spec.kind == EstimatorKind::Known || spec.selection == SelectionMethod::Known)
    spec.known_pi = load_known_pi(cfg.known_pi_csv, ctx);
  const MethodOutcome res = run_method(ctx, spec);
  json report{{"schema_version", kSchemaVersion}, {"command", "fit"}, {"report", report_json(res.report)},
              {"context", context_json(ctx)}};
  std::vector<std::pair<fs::path, std::string>> files{{cfg.out_dir / "estimates.csv", estimates_csv(res.report)}};
  if (res.fit) {
    report["selection"] = selection_json(ctx, *res.fit);
    files.emplace_back(cfg.out_dir / "weights.csv", weights_csv(ctx, *res.fit));
  }
  files.emplace_back(cfg.out_dir / "report.json", report.dump(2) + "\n");
  write_outputs(files);
  out << estimates_csv(res.report);
  return kExitOk;
}

int cmd_weights(const RunConfig& cfg, std::ostream& out) {
  const AnalysisContext ctx = load_context(cfg);
  MethodSpec spec = cfg.method;
  SelectionMethod method = spec.selection;
  switch (spec.kind) {
    case EstimatorKind::JPL: method = SelectionMethod::JPL; break;
    case EstimatorKind::JSR: method = SelectionMethod::JSR; break;
    case EstimatorKind::JPS: method = SelectionMethod::JPS; break;
    case EstimatorKind::JCL: method = SelectionMethod::JCL; break;
    case EstimatorKind::Known: method = SelectionMethod::Known; break;
    case EstimatorKind::JAIPW: break;
    default: fail(ErrorKind::Config, "the weights subcommand needs a selection method");
  }
  if (method == SelectionMethod::Known) spec.known_pi = load_known_pi(cfg.known_pi_csv, ctx);
  const SelectionModelFit fit = fit_selection(ctx, method, spec);
  json report{{"schema_version", kSchemaVersion},
              {"command", "weights"},
              {"selection", selection_json(ctx, fit)},
              {"context", context_json(ctx)}};
  const std::string w = weights_csv(ctx, fit);
  write_outputs({{cfg.out_dir / "weights.csv", w}, {cfg.out_dir / "report.json", report.dump(2) + "\n"}});
  out << "wrote " << (cfg.out_dir / "weights.csv").string() << "\n";
  return kExitOk;
}

int cmd_meta(const RunConfig& cfg, std::ostream& out) {
  const AnalysisContext ctx = load_context(cfg);
  MethodSpec spec = cfg.method;
  if (spec.kind == EstimatorKind::Known) spec.known_pi = load_known_pi(cfg.known_pi_csv, ctx);
  const MetaInput input = fit_per_cohort(ctx, spec);
  const EstimateReport combined = combine_fixed_effects(input);
  json cohorts = json::array();
  for (const auto& r : input.reports) cohorts.push_back(report_json(r));
  json failures = json::array();
  for (const auto& f : input.failures) failures.push_back({{"cohort", f.label}, {"message", f.message}});
  json report{{"schema_version", kSchemaVersion}, {"command", "meta"}, {"combined", report_json(combined)},
              {"cohorts", cohorts}, {"failures", failures}, {"context", context_json(ctx)}};
  const std::string table = meta_csv(input, combined);
  write_outputs({{cfg.out_dir / "meta.csv", table}, {cfg.out_dir / "report.json", report.dump(2) + "\n"}});
  out << table;
  return kExitOk;
}

int cmd_simulate(RunConfig cfg, const CliOptions& o, std::ostream& out) {
  SimScenario& sc = cfg.scenario;
  if (o.setup) sc.setup = *o.setup;
  if (o.replications) sc.replications = *o.replications;
  if (o.population_size) sc.population_size = *o.population_size;
  if (!o.misspec.empty()) sc.misspecified = parse_misspec(o.misspec);
  if (!o.aux.empty()) sc.aux_includes_outcome = parse_aux_flag(o.aux);
  if (!o.methods.empty()) {
    sc.methods.clear();
    std::stringstream ss(o.methods);
    for (std::string m; std::getline(ss, m, ',');)
      if (!m.empty()) sc.methods.push_back(m);
  }
  require(cfg.seed.has_value(), ErrorKind::Config, "simulate requires a seed (--seed or config 'seed')");
  sc.validate();
  const SimStudyResult res = run_study(sc);
  const std::vector<BandCheck> checks = o.check_tables ? check_tables(res) : std::vector<BandCheck>{};
  const std::string summary = summary_text(res, checks);
  write_outputs({{cfg.out_dir / "replicates.csv", replicates_csv(res)},
                 {cfg.out_dir / "metrics.csv", metrics_csv(res)},
                 {cfg.out_dir / "summary.txt", summary}});
  out << summary;
  return kExitOk;
}

}  // namespace

int exit_code_for(const Error& error) {
  switch (category_of(error.kind())) {
    case ErrorCategory::Config: return kExitConfig;
    case ErrorCategory::Data: return kExitData;
    case ErrorCategory::Numerical: return kExitNumerical;
  }
  return kExitNumerical;
}

RunConfig parse_run_config(const std::string& text, const fs::path& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  require(j.is_object(), ErrorKind::Config, "config must be a JSON object");
  require(j.contains("schema_version"), ErrorKind::Config, "config is missing 'schema_version'");
  require(get_or<int>(j, "schema_version", 0) == kSchemaVersion, ErrorKind::Config,
          "unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
  RunConfig cfg;
  try {
    cfg.internal_csv = resolve(base, get_or<std::string>(j, "internal", ""));
    cfg.external_csv = resolve(base, get_or<std::string>(j, "external", ""));
    cfg.known_pi_csv = resolve(base, get_or<std::string>(j, "known_pi", ""));
    if (j.contains("disease")) {
      const auto& d = j.at("disease");
      cfg.disease.intercept = get_or(d, "intercept", true);
      cfg.disease.covariates = get_or<std::vector<std::string>>(d, "covariates", {});
    }
    cfg.roles.disease_covariates = cfg.disease.covariates;
    cfg.roles.auxiliary = get_or<std::vector<std::string>>(j, "auxiliary", {});
    for (const auto& c : j.value("cohorts", json::array()))
      cfg.roles.cohorts.push_back({c.at("name").get<std::string>(), get_or<std::vector<std::string>>(c, "terms", {})});
    if (j.contains("population_size") && !j.at("population_size").is_null())
      cfg.population_size = j.at("population_size").get<double>();
    cfg.aux_includes_outcome = get_or(j, "aux_includes_outcome", true);

    MethodSpec& m = cfg.method;
    m.kind = parse_estimator(get_or<std::string>(j, "method", "JPL"));
    const auto sel = get_or<std::string>(j, "selection", "JPL");
    static const std::map<std::string, SelectionMethod> sels{{"JPL", SelectionMethod::JPL},
                                                             {"JSR", SelectionMethod::JSR},
                                                             {"JPS", SelectionMethod::JPS},
                                                             {"JCL", SelectionMethod::JCL},
                                                             {"Known", SelectionMethod::Known}};
    require(sels.count(sel) > 0, ErrorKind::Config, "unknown selection method '" + sel + "'");
    m.selection = sels.at(sel);
    m.variance = parse_variance_flavor(get_or<std::string>(j, "variance", "auto"));
    m.selection_cfg.floor = get_or(j, "floor", m.selection_cfg.floor);
    if (j.contains("strata")) m.strata = parse_strata(j.at("strata"));
    if (j.contains("totals")) {
      const auto& t = j.at("totals");
      m.totals.population_size = get_or(t, "population_size", 0.0);
      for (const auto& block : t.value("cohorts", json::array()))
        m.totals.totals.push_back(block.get<std::map<std::string, double>>());
    }
    if (j.contains("jaipw")) {
      m.jaipw = parse_jaipw(j.at("jaipw"));
      const int sim_cap = cfg.scenario.jaipw.max_outer;
      cfg.scenario.jaipw = m.jaipw;
      if (!j.at("jaipw").contains("max_outer")) cfg.scenario.jaipw.max_outer = sim_cap;
    }
    m.jaipw.validate();

    if (j.contains("out")) cfg.out_dir = resolve(base, j.at("out").get<std::string>());
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.threads = get_or(j, "threads", cfg.threads);
    if (j.contains("simulation")) parse_simulation(j.at("simulation"), cfg.scenario);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, "cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), path.parent_path());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

AnalysisContext load_context(const RunConfig& cfg) {
  require(!cfg.internal_csv.empty(), ErrorKind::Config, "config does not name an internal sample");
  require(fs::exists(cfg.internal_csv), ErrorKind::Config, "internal sample '" + cfg.internal_csv.string() + "' does not exist");
  auto internal = std::make_shared<const CombinedSample>(load_internal_csv(cfg.internal_csv));
  std::shared_ptr<const ExternalSample> external;
  if (!cfg.external_csv.empty()) {
    require(fs::exists(cfg.external_csv), ErrorKind::Config,
            "external sample '" + cfg.external_csv.string() + "' does not exist");
    external = std::make_shared<const ExternalSample>(load_external_csv(cfg.external_csv));
  }
  ContextOptions opts;
  opts.require_external = needs_external(cfg.method);
  opts.require_auxiliary = cfg.method.kind == EstimatorKind::JAIPW;
  opts.aux_includes_outcome = cfg.aux_includes_outcome;
  opts.population_size = cfg.population_size;
  require(!opts.require_external || external, ErrorKind::Config,
          std::string("method ") + estimator_name(cfg.method.kind) + " needs an external sample");
  return validate_roles(internal, external, cfg.roles, cfg.disease, opts);
}

MatrixXd load_known_pi(const fs::path& path, const AnalysisContext& ctx) {
  require(!path.empty(), ErrorKind::Config, "known selection probabilities need a 'known_pi' file");
  const CsvTable t = read_csv(path);
  const Index id_col = t.column("id");
  require(id_col >= 0, ErrorKind::MissingColumn, "column 'id' not found in " + path.string());
  const Index K = ctx.cohorts();
  std::vector<Index> cols;
  for (Index k = 0; k < K; ++k) {
    const std::string name = "pi_" + std::to_string(k + 1);
    const Index c = t.column(name);
    require(c >= 0, ErrorKind::MissingColumn, "column '" + name + "' not found in " + path.string());
    cols.push_back(c);
  }
  std::map<std::string, size_t> by_id;
  for (size_t r = 0; r < t.rows.size(); ++r) by_id[t.rows[r][static_cast<size_t>(id_col)]] = r;
  MatrixXd pi(ctx.n_internal(), K);
  for (Index i = 0; i < ctx.n_internal(); ++i) {
    const auto& id = ctx.internal->ids[static_cast<size_t>(i)];
    const auto it = by_id.find(id);
    require(it != by_id.end(), ErrorKind::DataFormat, path.string() + ": no probabilities for id '" + id + "'");
    for (Index k = 0; k < K; ++k) {
      const std::string& cell = t.rows[it->second][static_cast<size_t>(cols[static_cast<size_t>(k)])];
      try {
        size_t used = 0;
        pi(i, k) = std::stod(cell, &used);
        require(used == cell.size(), ErrorKind::DataFormat, "trailing characters");
      } catch (const std::exception&) {
        fail(ErrorKind::DataFormat, path.string() + ", line " + std::to_string(it->second + 2) +
                                        ": cannot parse '" + cell + "' as a number");
      }
    }
  }
  return pi;
}

std::string estimates_csv(const EstimateReport& r) {
  std::ostringstream os;
  os << "term,estimate,se,ci_low,ci_high\n";
  for (Index j = 0; j < r.estimate.size(); ++j) {
    const bool v = r.has_variance();
    os << csv_escape(r.terms[static_cast<size_t>(j)]) << ',' << format_double(r.estimate(j)) << ','
       << (v ? format_double(r.se(j)) : "NA") << ',' << (v ? format_double(r.ci_low(j)) : "NA") << ','
       << (v ? format_double(r.ci_high(j)) : "NA") << '\n';
  }
  return os.str();
}

std::string weights_csv(const AnalysisContext& ctx, const SelectionModelFit& fit) {
  std::ostringstream os;
  os << "id";
  for (Index k = 0; k < ctx.cohorts(); ++k) os << ",pi_" << (k + 1);
  os << ",pi_joint\n";
  for (Index i = 0; i < ctx.n_internal(); ++i) {
    os << csv_escape(ctx.internal->ids[static_cast<size_t>(i)]);
    for (Index k = 0; k < ctx.cohorts(); ++k) os << ',' << format_double(fit.pi_internal(i, k));
    os << ',' << format_double(fit.pi_joint(i)) << '\n';
  }
  return os.str();
}

std::string meta_csv(const MetaInput& input, const EstimateReport& combined) {
  std::ostringstream os;
  os << "row,cohort,term,estimate,se,ci_low,ci_high\n";
  for (const auto& e : input.entries) {
    for (Index j = 0; j < e.estimate.size(); ++j) {
      const double se = std::sqrt(std::max(0.0, e.variance(j, j)));
      os << "cohort," << csv_escape(e.label) << ',' << csv_escape(input.terms[static_cast<size_t>(j)]) << ','
         << format_double(e.estimate(j)) << ',' << format_double(se) << ','
         << format_double(e.estimate(j) - kNormalQuantile975 * se) << ','
         << format_double(e.estimate(j) + kNormalQuantile975 * se) << '\n';
    }
  }
  for (Index j = 0; j < combined.estimate.size(); ++j)
    os << "combined,," << csv_escape(combined.terms[static_cast<size_t>(j)]) << ','
       << format_double(combined.estimate(j)) << ',' << format_double(combined.se(j)) << ','
       << format_double(combined.ci_low(j)) << ',' << format_double(combined.ci_high(j)) << '\n';
  return os.str();
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint inverse-probability-weighted and doubly robust estimation across multiple cohorts"};
  app.require_subcommand(1);
  CliOptions o;
  CLI::App* fit = app.add_subcommand("fit", "fit one estimator and write its report");
  CLI::App* sim = app.add_subcommand("simulate", "run a simulation study");
  CLI::App* meta = app.add_subcommand("meta", "per-cohort fits combined by fixed-effects meta-analysis");
  CLI::App* weights = app.add_subcommand("weights", "fit the selection model only and export weights");
  for (CLI::App* sub : {fit, sim, meta, weights}) add_common(sub, o);
  sim->add_flag("--check-tables", o.check_tables, "compare metrics with the published table bands");
  sim->add_option("--setup", o.setup, "1 (main effects) or 2 (interactions)");
  sim->add_option("--replications", o.replications, "number of replications");
  sim->add_option("--misspec-selection", o.misspec, "none, c3, c23 or all");
  sim->add_option("--aux", o.aux, "correct (features include D) or incorrect");
  sim->add_option("--methods", o.methods, "comma-separated method labels");
  sim->add_option("--population-size", o.population_size, "population size N");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  std::string command = "?";
  try {
    if (fit->parsed()) {
      command = "fit";
      return cmd_fit(build_config(o, true), out);
    }
    if (weights->parsed()) {
      command = "weights";
      return cmd_weights(build_config(o, true), out);
    }
    if (meta->parsed()) {
      command = "meta";
      return cmd_meta(build_config(o, true), out);
    }
    command = "simulate";
    return cmd_simulate(build_config(o, false), o, out);
  } catch (const Error& e) {
    const json rec{{"error", {{"command", command}, {"kind", kind_name(e.kind())}, {"message", e.what()}}}};
    err << rec.dump() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    const json rec{{"error", {{"command", command}, {"kind", "Internal"}, {"message", e.what()}}}};
    err << rec.dump() << "\n";
    return kExitNumerical;
  }
}

}  // namespace jaipw
