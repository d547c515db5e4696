#pragma once

#include "cyclic_em/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cyclic_em::csv {

// Lossless double formatting: 17 significant digits, NaN as "NaN".
std::string format_double(double value);

double parse_double(const std::string& field);

std::vector<std::string> split(const std::string& line, char sep = ',');

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Reads a comma-separated file. With has_header the first line goes to
// Table::header. Blank trailing lines are dropped; blank interior lines are
// kept as single empty-field rows.
Table read(const std::filesystem::path& path, bool has_header);

void write(const std::filesystem::path& path, const Table& table);

// Reads a table of reals (header optional).
Matrix read_matrix(const std::filesystem::path& path, bool has_header);

std::string join(const std::vector<std::string>& fields, char sep = ',');

}  // namespace cyclic_em::csv
