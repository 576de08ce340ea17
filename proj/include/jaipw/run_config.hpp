#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "jaipw/error.hpp"
#include "jaipw/meta_analysis.hpp"
#include "jaipw/pipeline.hpp"
#include "jaipw/sim_harness.hpp"

namespace jaipw {

inline constexpr int kSchemaVersion = 1;

enum ExitCode { kExitOk = 0, kExitConfig = 2, kExitNumerical = 3, kExitData = 4 };

int exit_code_for(const Error& error);

struct RunConfig {
  std::filesystem::path internal_csv;
  std::filesystem::path external_csv;
  std::filesystem::path known_pi_csv;  // id, pi_1..pi_K
  VariableRoles roles;
  DiseaseModelSpec disease;
  std::optional<double> population_size;
  bool aux_includes_outcome = true;
  MethodSpec method;
  std::filesystem::path out_dir = ".";
  std::optional<std::uint64_t> seed;
  int threads = 1;
  SimScenario scenario;
};

// Relative paths inside the file resolve against `base_dir`.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Loads the samples and binds the roles; the same call the CLI makes.
AnalysisContext load_context(const RunConfig& cfg);

MatrixXd load_known_pi(const std::filesystem::path& path, const AnalysisContext& ctx);

std::string estimates_csv(const EstimateReport& report);
std::string weights_csv(const AnalysisContext& ctx, const SelectionModelFit& fit);
std::string meta_csv(const MetaInput& input, const EstimateReport& combined);

// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace jaipw
