#include "dfr/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "dfr/errors.hpp"
#include "dfr/io.hpp"

namespace dfr::data {
namespace {

bool needs_quotes(const std::string& s) {
  return s.find_first_of(",\"\r\n") != std::string::npos;
}

void append_field(std::string& out, const std::string& field) {
  if (!needs_quotes(field)) {
    out += field;
    return;
  }
  out += '"';
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
}

bool is_missing(const std::string& cell) {
  std::string lower = cell;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  return lower.empty() || lower == "na" || lower == "nan" || lower == "?" || lower == "null";
}

}  // namespace

CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  std::size_t i = 0;
  auto end_record = [&] {
    record.push_back(std::move(field));
    field.clear();
    records.push_back(std::move(record));
    record.clear();
    field_started = false;
  };
  while (i < text.size()) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
    } else if (c == '"') {
      if (!field.empty()) throw ParseError("csv line " + std::to_string(line) + ": stray quote");
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      field_started = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
      ++line;
    } else {
      field += c;
      field_started = true;
    }
    ++i;
  }
  if (in_quotes) throw ParseError("csv: unterminated quoted field at line " + std::to_string(line));
  if (field_started || !field.empty() || !record.empty()) end_record();

  if (records.empty()) throw ParseError("csv: missing header row");
  CsvTable table;
  table.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() == 1 && records[r][0].empty()) continue;  // blank line
    if (records[r].size() != table.header.size()) {
      throw ParseError("csv row " + std::to_string(r) + ": expected " +
                       std::to_string(table.header.size()) + " fields, found " +
                       std::to_string(records[r].size()));
    }
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

std::string format_csv(const CsvTable& table) {
  std::string out;
  auto write_row = [&](const std::vector<std::string>& row) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ',';
      append_field(out, row[j]);
    }
    out += '\n';
  };
  write_row(table.header);
  for (const auto& row : table.rows) write_row(row);
  return out;
}

CsvTable read_csv(const std::string& path) { return parse_csv(read_text(path)); }

void write_csv(const std::string& path, const CsvTable& table) {
  write_text_atomic(path, format_csv(table));
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

bool parse_double(std::string_view text, double& out) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size() && std::isfinite(out);
}

RawTable table_from_csv(const CsvTable& csv, const CsvSchema& schema) {
  const auto target_it = std::find(csv.header.begin(), csv.header.end(), schema.target);
  if (schema.target.empty() || target_it == csv.header.end()) {
    throw ConfigError("schema: target column '" + schema.target + "' not found in header");
  }
  for (const auto& c : schema.categorical) {
    if (std::find(csv.header.begin(), csv.header.end(), c) == csv.header.end()) {
      throw ConfigError("schema: categorical column '" + c + "' not found in header");
    }
  }
  const std::size_t target_col = static_cast<std::size_t>(target_it - csv.header.begin());

  RawTable t;
  t.task = schema.task;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < csv.header.size(); ++c) {
    if (c == target_col) continue;
    feature_cols.push_back(c);
    t.feature_names.push_back(csv.header[c]);
    const bool cat = std::find(schema.categorical.begin(), schema.categorical.end(), csv.header[c]) !=
                     schema.categorical.end();
    t.categorical.push_back(cat);
  }
  t.numeric.resize(feature_cols.size());
  t.levels.resize(feature_cols.size());
  t.target.reserve(csv.rows.size());

  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    auto where = [&](std::size_t c) {
      return "row " + std::to_string(r + 1) + ", column '" + csv.header[c] + "'";
    };
    for (std::size_t f = 0; f < feature_cols.size(); ++f) {
      const std::size_t c = feature_cols[f];
      if (is_missing(row[c])) throw ParseError("csv: missing value at " + where(c));
      if (t.categorical[f]) {
        t.levels[f].push_back(row[c]);
      } else {
        double v = 0.0;
        if (!parse_double(row[c], v)) throw ParseError("csv: non-numeric value '" + row[c] + "' at " + where(c));
        t.numeric[f].push_back(v);
      }
    }
    if (is_missing(row[target_col])) throw ParseError("csv: missing value at " + where(target_col));
    double y = 0.0;
    if (!parse_double(row[target_col], y)) {
      throw ParseError("csv: non-numeric target '" + row[target_col] + "' at " + where(target_col));
    }
    if (schema.task == nn::Task::binary_classification && y != 0.0 && y != 1.0) {
      throw ParseError("csv: classification label must be 0 or 1 at " + where(target_col));
    }
    t.target.push_back(y);
  }
  return t;
}

RawTable load_csv(const std::string& path, const CsvSchema& schema) {
  return table_from_csv(read_csv(path), schema);
}

}  // namespace dfr::data
