#pragma once

// Minimal comma-separated reader/writer. No quoting: every field in the
// formats used here is numeric or a plain identifier.

#include <filesystem>
#include <string>
#include <vector>

namespace mansy::csv {

struct Row {
  std::size_t line = 0;  ///< 1-based line number in the source file
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  /// Column position of `name`; throws std::runtime_error when absent.
  std::size_t column(const std::string& name) const;
};

/// Reads a file with a header line. Blank lines are skipped; a row whose field
/// count differs from the header is rejected with its line number.
Table read(const std::filesystem::path& path);
Table parse(const std::string& text, const std::string& source = "<memory>");

/// Parses a floating-point field, naming `source` and the row on failure.
double to_double(const Row& row, std::size_t col, const std::string& source);
long long to_int(const Row& row, std::size_t col, const std::string& source);

/// Shortest decimal form that round-trips to the same double.
std::string format(double v);
/// Fixed six-decimal form.
std::string format6(double v);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace mansy::csv
