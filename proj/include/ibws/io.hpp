#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ibws {

// Raised for malformed input files or documents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shortest decimal representation that round-trips to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

using CsvRow = std::vector<std::string>;

// RFC 4180 style: fields containing a delimiter, quote or newline are quoted.
void write_csv_row(std::ostream& out, const CsvRow& row, char delim = ',');
std::vector<CsvRow> read_csv(std::istream& in, char delim = ',');

// A delimited table with a header row. Column lookup is by header name.
struct Table {
  CsvRow header;
  std::vector<CsvRow> rows;

  // Index of a header column; -1 when absent.
  int column(std::string_view name) const;
  int require_column(std::string_view name) const;
};

Table read_table(const std::filesystem::path& path);
void write_table(const std::filesystem::path& path, const Table& table);
void write_table(std::ostream& out, const Table& table);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// Tab for .tsv, comma otherwise.
char delimiter_for(const std::filesystem::path& path);

}  // namespace ibws
