#include "jaipw/csv_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "jaipw/error.hpp"

namespace jaipw {

namespace {

std::vector<std::string> split_line(const std::string& line, const std::string& where) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) fail(ErrorKind::DataFormat, where + ": unterminated quote");
  out.push_back(field);
  return out;
}

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

double parse_number(const std::string& text, const std::string& where) {
  const std::string s = trim(text);
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (s.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
    fail(ErrorKind::DataFormat, where + ": '" + s + "' is not a finite number");
  return v;
}

std::string where(const std::string& source, size_t row, const std::string& column) {
  return source + ":" + std::to_string(row + 2) + " column '" + column + "'";
}

}  // namespace

Index CsvTable::column(const std::string& name) const {
  for (size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return static_cast<Index>(j);
  return -1;
}

CsvTable parse_csv(const std::string& text, const std::string& source) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto fields = split_line(line, source + ":" + std::to_string(line_no));
    for (auto& f : fields) f = trim(f);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size())
      fail(ErrorKind::DataFormat, source + ":" + std::to_string(line_no) + ": expected " +
                                      std::to_string(table.header.size()) + " fields, found " +
                                      std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
  }
  if (!have_header) fail(ErrorKind::DataFormat, source + ": missing header row");
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Config, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path.string());
}

CombinedSample load_internal_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::string src = path.string();
  const Index id_col = t.column("id");
  const Index d_col = t.column(kOutcome);
  if (id_col < 0) fail(ErrorKind::MissingColumn, "column 'id' not found in internal sample " + src);
  if (d_col < 0) fail(ErrorKind::MissingColumn, "column 'D' not found in internal sample " + src);

  static const std::regex cohort_re("S([0-9]+)");
  std::vector<std::pair<int, Index>> cohort_cols;
  std::vector<Index> cov_cols;
  for (size_t j = 0; j < t.header.size(); ++j) {
    const auto& h = t.header[j];
    std::smatch m;
    if (static_cast<Index>(j) == id_col || static_cast<Index>(j) == d_col) continue;
    if (std::regex_match(h, m, cohort_re)) {
      cohort_cols.emplace_back(std::stoi(m[1].str()), static_cast<Index>(j));
    } else {
      cov_cols.push_back(static_cast<Index>(j));
    }
  }
  std::sort(cohort_cols.begin(), cohort_cols.end());
  if (cohort_cols.empty())
    fail(ErrorKind::MissingColumn, "column 'S1' not found in internal sample " + src);
  for (size_t k = 0; k < cohort_cols.size(); ++k) {
    if (cohort_cols[k].first != static_cast<int>(k + 1))
      fail(ErrorKind::MissingColumn,
           "column 'S" + std::to_string(k + 1) + "' not found in internal sample " + src);
  }

  const Index n = static_cast<Index>(t.rows.size());
  std::vector<std::string> ids;
  VectorXd y(n);
  NamedMatrix cov;
  for (Index j : cov_cols) cov.names.push_back(t.header[static_cast<size_t>(j)]);
  cov.values.resize(n, static_cast<Index>(cov_cols.size()));
  MatrixXi s(n, static_cast<Index>(cohort_cols.size()));
  for (Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<size_t>(i)];
    ids.push_back(row[static_cast<size_t>(id_col)]);
    y(i) = parse_number(row[static_cast<size_t>(d_col)], where(src, static_cast<size_t>(i), kOutcome));
    for (size_t c = 0; c < cov_cols.size(); ++c) {
      const auto j = static_cast<size_t>(cov_cols[c]);
      cov.values(i, static_cast<Index>(c)) = parse_number(row[j], where(src, static_cast<size_t>(i), t.header[j]));
    }
    for (size_t k = 0; k < cohort_cols.size(); ++k) {
      const auto j = static_cast<size_t>(cohort_cols[k].second);
      const double v = parse_number(row[j], where(src, static_cast<size_t>(i), t.header[j]));
      if (v != 0.0 && v != 1.0)
        fail(ErrorKind::DataFormat, where(src, static_cast<size_t>(i), t.header[j]) + ": must be 0 or 1");
      s(i, static_cast<Index>(k)) = static_cast<int>(v);
    }
    if (y(i) != 0.0 && y(i) != 1.0)
      fail(ErrorKind::DataFormat, where(src, static_cast<size_t>(i), kOutcome) + ": must be 0 or 1");
  }
  return CombinedSample::make(std::move(ids), std::move(y), std::move(cov), std::move(s));
}

ExternalSample load_external_csv(const std::filesystem::path& path,
                                 const std::vector<std::string>& skip) {
  const CsvTable t = read_csv(path);
  const std::string src = path.string();
  const Index id_col = t.column("id");
  const Index p_col = t.column("pi_ext");
  if (id_col < 0) fail(ErrorKind::MissingColumn, "column 'id' not found in external sample " + src);
  if (p_col < 0) fail(ErrorKind::MissingColumn, "column 'pi_ext' not found in external sample " + src);
  std::vector<Index> cov_cols;
  NamedMatrix cov;
  for (size_t j = 0; j < t.header.size(); ++j) {
    if (static_cast<Index>(j) == id_col || static_cast<Index>(j) == p_col) continue;
    if (std::find(skip.begin(), skip.end(), t.header[j]) != skip.end()) continue;
    cov_cols.push_back(static_cast<Index>(j));
    cov.names.push_back(t.header[j]);
  }
  const Index m = static_cast<Index>(t.rows.size());
  std::vector<std::string> ids;
  VectorXd p(m);
  cov.values.resize(m, static_cast<Index>(cov_cols.size()));
  for (Index i = 0; i < m; ++i) {
    const auto& row = t.rows[static_cast<size_t>(i)];
    ids.push_back(row[static_cast<size_t>(id_col)]);
    p(i) = parse_number(row[static_cast<size_t>(p_col)], where(src, static_cast<size_t>(i), "pi_ext"));
    for (size_t c = 0; c < cov_cols.size(); ++c) {
      const auto j = static_cast<size_t>(cov_cols[c]);
      cov.values(i, static_cast<Index>(c)) = parse_number(row[j], where(src, static_cast<size_t>(i), t.header[j]));
    }
  }
  return ExternalSample::make(std::move(ids), std::move(cov), std::move(p));
}

std::string format_double(double value) {
  if (std::isnan(value)) return "NA";
  if (std::isinf(value)) return value > 0 ? "Inf" : "-Inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  (void)ec;
  return std::string(buf, ptr);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Config, "cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      fail(ErrorKind::Config, "failed writing '" + tmp.string() + "'");
    }
  }
  fs::rename(tmp, path);
}

}  // namespace jaipw
