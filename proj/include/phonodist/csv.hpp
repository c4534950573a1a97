#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace phonodist::csv {

struct Row {
  std::size_t line_number = 0;  // 1-based, for error messages
  std::vector<std::string> fields;
};

// Splits one line into fields. Supports double-quoted fields with "" escapes.
std::vector<std::string> parse_line(const std::string& line, char delim = ',');

// Reads all rows from a file. Skips blank lines; lines starting with '#' are
// skipped when skip_comments is set. Throws std::runtime_error if the file
// cannot be opened.
std::vector<Row> read_rows(const std::filesystem::path& path, char delim = ',',
                           bool skip_comments = true);

// Quotes a field if it contains the delimiter, quotes or newlines.
std::string escape(const std::string& field, char delim = ',');

}  // namespace phonodist::csv
