#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dispatchlab::csv {

struct Row {
  std::size_t line = 0;  // 1-based line number in the source file
  std::vector<std::string> fields;
};

// Comma-separated table with a header line. Fields are trimmed; quoting is
// not supported. Blank lines are skipped.
struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  // Index of `name` in the header; throws DataError naming the column.
  std::size_t column(std::string_view name) const;
};

Table read(const std::filesystem::path& path);
Table parse(std::string_view text, std::string_view source_name);

double to_double(const Row& row, std::size_t column, std::string_view source_name);
long long to_integer(const Row& row, std::size_t column, std::string_view source_name);

}  // namespace dispatchlab::csv
