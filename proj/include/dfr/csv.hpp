#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dfr/nn.hpp"

namespace dfr::data {

// Header plus string cells. Parsing follows RFC 4180 quoting: fields may be
// wrapped in double quotes, embedded quotes are doubled.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable parse_csv(std::string_view text);
std::string format_csv(const CsvTable& table);
CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

// Shortest decimal form that parses back to the same double.
std::string format_double(double value);
// Strict full-field numeric parse; false on garbage or empty input.
bool parse_double(std::string_view text, double& out);

struct CsvSchema {
  std::string target;
  std::vector<std::string> categorical;
  nn::Task task = nn::Task::regression;
};

// Typed view of a CSV file: numeric and categorical feature columns plus a
// numeric target.
struct RawTable {
  std::vector<std::string> feature_names;
  std::vector<bool> categorical;                  // per feature
  std::vector<std::vector<double>> numeric;       // per feature; empty if categorical
  std::vector<std::vector<std::string>> levels;   // per feature; empty if numeric
  std::vector<double> target;
  nn::Task task = nn::Task::regression;

  std::size_t rows() const noexcept { return target.size(); }
};

// Missing cells (empty, NA, NaN, ?) are rejected with their row and column.
RawTable table_from_csv(const CsvTable& csv, const CsvSchema& schema);
RawTable load_csv(const std::string& path, const CsvSchema& schema);

}  // namespace dfr::data
