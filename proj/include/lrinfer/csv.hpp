#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lrinfer/types.hpp"

namespace lrinfer {

namespace csv_detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline bool is_missing_token(const std::string& t) {
  if (t.empty()) return true;
  std::string low;
  low.reserve(t.size());
  for (char c : t) low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return low == "nan" || low == "na";
}

inline std::optional<double> parse_number(const std::string& t) {
  if (t.empty()) return std::nullopt;
  const char* begin = t.data();
  const char* end = begin + t.size();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace csv_detail

// A parsed CSV grid; missing cells are NaN. Missing = empty cell or a
// "NaN"/"NA" token (case-insensitive). A leading header row is skipped when
// its first cell is neither numeric nor a missing token.
inline Matrix read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open CSV file: " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  bool first_content_row = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (csv_detail::trim(line).empty()) continue;
    auto cells = csv_detail::split_line(line);
    if (first_content_row) {
      first_content_row = false;
      const std::string& head = cells.front();
      if (!csv_detail::is_missing_token(head) && !csv_detail::parse_number(head)) {
        continue;  // header row
      }
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const std::string& tok = cells[j];
      if (csv_detail::is_missing_token(tok)) {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      auto v = csv_detail::parse_number(tok);
      if (!v) {
        throw ValidationError("non-numeric cell '" + tok + "' at line " + std::to_string(line_no) +
                              ", column " + std::to_string(j + 1) + " in " + path);
      }
      row.push_back(*v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ValidationError("ragged CSV: line " + std::to_string(line_no) + " has " +
                            std::to_string(row.size()) + " cells, expected " +
                            std::to_string(rows.front().size()) + " in " + path);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("empty CSV file: " + path);

  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

// Writes a dense matrix; NaN entries become empty cells.
inline void write_csv_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open CSV file for writing: " + path);
  out.precision(17);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ',';
      if (!std::isnan(m(i, j))) out << m(i, j);
    }
    out << '\n';
  }
}

}  // namespace lrinfer
