#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "jaipw/csv_io.hpp"
#include "jaipw/error.hpp"
#include "test_support.hpp"

using namespace jaipw;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidArgument;
}

CombinedSample tiny_sample(bool full = false, int zero_row = -1) {
  NamedMatrix cov{{"Z1", "W1"}, MatrixXd(4, 2)};
  cov.values << 0.1, 1.0, -0.3, 2.0, 0.7, -1.0, 1.2, 0.5;
  MatrixXi ind(4, 2);
  ind << 1, 0, 1, 1, 0, 1, 1, 0;
  if (zero_row >= 0) ind.row(zero_row).setZero();
  VectorXd d(4);
  d << 1, 0, 0, 1;
  return CombinedSample::make({"a", "b", "c", "d"}, d, cov, ind, full);
}

}  // namespace

TEST_CASE("composite indicator is the union of memberships") {
  const auto s = tiny_sample();
  CHECK(s.composite(0) == 1);
  CHECK(s.composite(1) == 1);
  CHECK(s.composite.sum() == 4);
  MatrixXi ind(3, 2);
  ind << 0, 0, 1, 0, 1, 1;
  const VectorXi c = composite_indicator(ind);
  CHECK(c(0) == 0);
  CHECK(c(1) == 1);
  CHECK(c(2) == 1);
}

TEST_CASE("rows outside every cohort are only legal for a full population") {
  CHECK(kind_of([] { tiny_sample(false, 2); }) == ErrorKind::DataFormat);
  const auto full = tiny_sample(true, 2);
  CHECK(full.composite(2) == 0);
  CHECK(full.selected().rows() == 3);
}

TEST_CASE("malformed samples are rejected") {
  NamedMatrix cov{{"Z1"}, MatrixXd::Zero(2, 1)};
  MatrixXi ind = MatrixXi::Ones(2, 1);
  VectorXd bad_d(2);
  bad_d << 0, 2;
  CHECK(kind_of([&] { CombinedSample::make({"a", "b"}, bad_d, cov, ind); }) == ErrorKind::DataFormat);
  CHECK(kind_of([&] { CombinedSample::make({"a", "a"}, VectorXd::Zero(2), cov, ind); }) == ErrorKind::DataFormat);
  MatrixXi ind2 = ind;
  ind2(0, 0) = 3;
  CHECK(kind_of([&] { CombinedSample::make({"a", "b"}, VectorXd::Zero(2), cov, ind2); }) == ErrorKind::DataFormat);
  VectorXd pi(2);
  pi << 0.5, 1.5;
  CHECK(kind_of([&] { ExternalSample::make({"x", "y"}, cov, pi); }) == ErrorKind::DataFormat);
}

TEST_CASE("terms split on ':' and evaluate as products") {
  CHECK(split_term("D:Z2") == std::vector<std::string>{"D", "Z2"});
  CHECK(kind_of([] { split_term("D::Z2"); }) == ErrorKind::Config);
  const auto s = tiny_sample();
  const VectorXd v = internal_term(s, "D:W1");
  CHECK(v(0) == doctest::Approx(1.0));
  CHECK(v(1) == doctest::Approx(0.0));
  CHECK(v(3) == doctest::Approx(0.5));
  CHECK(kind_of([&] { internal_term(s, "Q"); }) == ErrorKind::MissingColumn);
}

TEST_CASE("cohort_only keeps members of one cohort") {
  const auto s = tiny_sample();
  const auto c2 = s.cohort_only(1);
  CHECK(c2.rows() == 2);
  CHECK(c2.cohorts() == 1);
  CHECK(c2.ids == std::vector<std::string>{"b", "c"});
}

TEST_CASE("role validation") {
  const auto fx = fixture::make_fixture(3, 1500);

  SUBCASE("auxiliary variables may not enter a selection model") {
    auto roles = fx.roles;
    roles.cohorts[0].terms.push_back("Z1:W1");
    CHECK(kind_of([&] { validate_roles(fx.internal, fx.external, roles, {}); }) ==
          ErrorKind::AuxiliaryInSelection);
  }
  SUBCASE("doubly robust contexts need an auxiliary set") {
    auto roles = fx.roles;
    roles.auxiliary.clear();
    ContextOptions o;
    o.require_auxiliary = true;
    CHECK(kind_of([&] { validate_roles(fx.internal, fx.external, roles, {}, o); }) == ErrorKind::EmptyAuxiliary);
  }
  SUBCASE("missing columns are named") {
    auto roles = fx.roles;
    roles.cohorts[0].terms.push_back("W9");
    try {
      validate_roles(fx.internal, fx.external, roles, {});
      FAIL("expected MissingColumn");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::MissingColumn);
      CHECK(std::string(e.what()).find("W9") != std::string::npos);
    }
  }
  SUBCASE("population size defaults to the design-weighted external total") {
    const auto ctx = fixture::context(fx, false, true, false);
    CHECK(ctx.population_size_estimated);
    CHECK(ctx.population_size == doctest::Approx(fx.external->pi_ext.cwiseInverse().sum()));
    CHECK(!ctx.warnings.empty());
  }
  SUBCASE("designs, overlap and auxiliary features") {
    const auto ctx = fixture::context(fx, true);
    CHECK(ctx.dim() == 3);
    CHECK(ctx.disease_terms == std::vector<std::string>{kIntercept, "Z1", "Z2"});
    CHECK(ctx.aux_positions == std::vector<Index>{1});
    CHECK(ctx.selection_terms[0] == std::vector<std::string>{kIntercept, "D", "W1"});
    CHECK(ctx.aux_features.front() == kOutcome);
    CHECK(std::find(ctx.aux_features.begin(), ctx.aux_features.end(), "Z1") == ctx.aux_features.end());
    CHECK(!ctx.overlap.empty());
    for (const auto& [i, e] : ctx.overlap)
      CHECK(ctx.internal->ids[static_cast<size_t>(i)] == ctx.external->ids[static_cast<size_t>(e)]);
    const auto no_d = fixture::context(fx, true, false);
    CHECK(std::find(no_d.aux_features.begin(), no_d.aux_features.end(), kOutcome) == no_d.aux_features.end());
  }
  SUBCASE("restricting to one cohort") {
    const auto ctx = fixture::context(fx);
    const auto sub = restrict_to_cohort(ctx, 1);
    CHECK(sub.cohorts() == 1);
    CHECK(sub.n_internal() == ctx.cohort_size(1));
    CHECK(sub.population_size == ctx.population_size);
  }
}

TEST_CASE("csv parsing and round trips") {
  const auto t = parse_csv("id,x\n\"a,1\",2.5\nb,-1e-3\n", "inline");
  CHECK(t.rows.size() == 2);
  CHECK(t.rows[0][0] == "a,1");
  CHECK(t.column("x") == 1);
  CHECK(t.column("y") == -1);
  CHECK(kind_of([] { parse_csv("id,x\n1\n", "inline"); }) == ErrorKind::DataFormat);
  CHECK(kind_of([] { parse_csv("id,x\n\"1,2\n", "inline"); }) == ErrorKind::DataFormat);

  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125, 0.0}) CHECK(std::stod(format_double(v)) == v);
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("plain") == "plain");
}

TEST_CASE("csv loaders") {
  const auto dir = std::filesystem::temp_directory_path() / "jaipw_test_data_model";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "internal.csv") << "id,D,Z1,W1,S1,S2\na,1,0.5,1,1,0\nb,0,-0.5,2,0,1\n";
    std::ofstream(dir / "external.csv") << "id,D,Z1,W1,pi_ext\na,1,0.5,1,0.2\n";
    std::ofstream(dir / "no_pi.csv") << "id,D,Z1,W1\na,1,0.5,1\n";
    std::ofstream(dir / "bad_s.csv") << "id,D,Z1,S1\na,1,0.5,2\n";
  }
  const auto in = load_internal_csv(dir / "internal.csv");
  CHECK(in.rows() == 2);
  CHECK(in.cohorts() == 2);
  CHECK(in.covariates.names == std::vector<std::string>{"Z1", "W1"});
  const auto ex = load_external_csv(dir / "external.csv");
  CHECK(ex.pi_ext(0) == doctest::Approx(0.2));
  try {
    load_external_csv(dir / "no_pi.csv");
    FAIL("expected MissingColumn");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingColumn);
    CHECK(std::string(e.what()).find("pi_ext") != std::string::npos);
  }
  CHECK(kind_of([&] { load_internal_csv(dir / "bad_s.csv"); }) == ErrorKind::DataFormat);

  write_file_atomic(dir / "out.txt", "hello");
  std::ifstream f(dir / "out.txt");
  std::string s;
  f >> s;
  CHECK(s == "hello");
  std::filesystem::remove_all(dir);
}
