#include "cyclic_em/csv.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace cyclic_em::csv {

std::string format_double(double value) {
  if (std::isnan(value)) return "NaN";
  if (std::isinf(value)) return value > 0 ? "Inf" : "-Inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

double parse_double(const std::string& field) {
  if (field == "NaN" || field == "nan") return std::nan("");
  const char* begin = field.c_str();
  char* end = nullptr;
  const double value = std::strtod(begin, &end);
  if (end == begin) throw ValidationError("not a number: '" + field + "'");
  while (*end == ' ' || *end == '\r' || *end == '\t') ++end;
  if (*end != '\0') throw ValidationError("not a number: '" + field + "'");
  return value;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(field);
  }
  if (!line.empty() && line.back() == sep) out.emplace_back();
  if (line.empty()) out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string>& fields, char sep) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += sep;
    out += fields[i];
  }
  return out;
}

Table read(const std::filesystem::path& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  Table table;
  std::size_t first = 0;
  if (has_header) {
    if (lines.empty()) throw ValidationError("missing header in " + path.string());
    table.header = split(lines[0]);
    first = 1;
  }
  for (std::size_t i = first; i < lines.size(); ++i) table.rows.push_back(split(lines[i]));
  return table;
}

void write(const std::filesystem::path& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  if (!table.header.empty()) out << join(table.header) << '\n';
  for (const auto& row : table.rows) out << join(row) << '\n';
  if (!out) throw UsageError("write failed for " + path.string());
}

Matrix read_matrix(const std::filesystem::path& path, bool has_header) {
  const Table table = read(path, has_header);
  if (table.rows.empty()) return Matrix(0, has_header ? Index(table.header.size()) : 0);
  const Index cols = static_cast<Index>(table.rows.front().size());
  Matrix out(static_cast<Index>(table.rows.size()), cols);
  for (Index r = 0; r < out.rows(); ++r) {
    const auto& row = table.rows[static_cast<std::size_t>(r)];
    if (static_cast<Index>(row.size()) != cols)
      throw ValidationError("ragged row " + std::to_string(r) + " in " + path.string());
    for (Index c = 0; c < cols; ++c) out(r, c) = parse_double(row[static_cast<std::size_t>(c)]);
  }
  return out;
}

}  // namespace cyclic_em::csv
