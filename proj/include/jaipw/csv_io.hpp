#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "jaipw/data_model.hpp"

namespace jaipw {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  Index column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(const std::string& text, const std::string& source);

// Internal file: id, D, <covariates...>, S1..SK.
CombinedSample load_internal_csv(const std::filesystem::path& path);
// External file: id, <covariates...>, pi_ext. Columns named in `skip` are never read.
ExternalSample load_external_csv(const std::filesystem::path& path,
                                 const std::vector<std::string>& skip = {});

// Shortest round-trip decimal representation.
std::string format_double(double value);

std::string csv_escape(const std::string& field);

// Writes to a sibling temporary file, then renames over the destination.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace jaipw
