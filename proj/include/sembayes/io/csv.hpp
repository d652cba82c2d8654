#pragma once

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "sembayes/model.hpp"

namespace sembayes {

namespace detail {

inline std::string trim_cell(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  s = s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim_cell(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// Comma-separated numeric table with a header row; '.' decimal separator.
/// Every row must have a value in every column.
inline DataSet parse_csv(std::istream& in, const std::string& source = "csv") {
  std::string line;
  int lineno = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line = line.substr(3);
    if (detail::trim_cell(line).empty()) continue;
    header = detail::split_csv_line(line);
  }
  if (header.empty()) throw DataError(source + ": empty file, expected a header row");
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c].empty()) throw DataError(source + ": empty column name in header (column " + std::to_string(c + 1) + ")");
    for (std::size_t k = 0; k < c; ++k)
      if (header[k] == header[c]) throw DataError(source + ": duplicate column '" + header[c] + "'");
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim_cell(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError(source + ": line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(header.size()));
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string& s = cells[c];
      if (s.empty() || s == "NA" || s == "NaN" || s == "nan")
        throw DataError(source + ": line " + std::to_string(lineno) + ", column '" + header[c] + "': missing value");
      const char* first = s.data() + (s.front() == '+' ? 1 : 0);
      const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), row[c]);
      if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(row[c]))
        throw DataError(source + ": line " + std::to_string(lineno) + ", column '" + header[c] + "': '" + s +
                        "' is not a finite number");
    }
    rows.push_back(std::move(row));
  }
  Mat y(rows.size(), header.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < header.size(); ++c) y(r, c) = rows[r][c];
  return DataSet(std::move(y), std::move(header));
}

inline DataSet load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  return parse_csv(in, path);
}

/// Loads a table and selects the model's indicator columns by name.
inline DataSet load_csv(const std::string& path, const ModelSpec& model) {
  const DataSet raw = load_csv(path);
  std::vector<std::string> missing;
  for (const auto& name : model.indicators())
    if (std::find(raw.names().begin(), raw.names().end(), name) == raw.names().end()) missing.push_back(name);
  if (!missing.empty()) {
    std::string list;
    for (const auto& n : missing) list += (list.empty() ? "" : ", ") + n;
    throw DataError(path + ": header lacks model indicator(s) " + list);
  }
  Mat y(raw.n(), model.p());
  for (int i = 0; i < model.p(); ++i) {
    const auto it = std::find(raw.names().begin(), raw.names().end(), model.indicators()[i]);
    y.col(i) = raw.y().col(std::distance(raw.names().begin(), it));
  }
  return DataSet(std::move(y), model.indicators());
}

inline void write_csv(std::ostream& out, const DataSet& data) {
  for (int c = 0; c < data.p(); ++c) out << (c ? "," : "") << data.names()[c];
  out << '\n' << std::setprecision(17);
  for (int r = 0; r < data.n(); ++r) {
    for (int c = 0; c < data.p(); ++c) out << (c ? "," : "") << data.y()(r, c);
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const DataSet& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_csv(out, data);
}

}  // namespace sembayes
