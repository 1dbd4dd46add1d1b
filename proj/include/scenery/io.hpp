#pragma once

// Result tables: CSV with a fixed header row and JSON arrays of row objects.
// Floats are written with 17 significant digits so they re-parse bit-equal.

#include <cstdint>
#include <cstdio>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenery/errors.hpp"

namespace scenery {

using Cell = std::variant<double, std::int64_t, std::uint64_t, std::string>;

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
  // optional per-row fields that go to the JSON form only (dt, dt_delta, ...)
  std::vector<nlohmann::json> extras;

  void add_row(std::vector<Cell> row, nlohmann::json extra = nlohmann::json::object()) {
    if (row.size() != columns.size())
      throw DomainError("Table '" + name + "': row has " + std::to_string(row.size()) + " cells, expected " +
                        std::to_string(columns.size()));
    rows.push_back(std::move(row));
    extras.push_back(std::move(extra));
  }

  std::size_t column(const std::string& c) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == c) return i;
    throw DomainError("Table '" + name + "': no column '" + c + "'");
  }

  double number(std::size_t row, const std::string& c) const {
    const auto& cell = rows.at(row).at(column(c));
    if (auto* d = std::get_if<double>(&cell)) return *d;
    if (auto* i = std::get_if<std::int64_t>(&cell)) return static_cast<double>(*i);
    if (auto* u = std::get_if<std::uint64_t>(&cell)) return static_cast<double>(*u);
    throw DomainError("Table '" + name + "': column '" + c + "' is not numeric");
  }
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  // keep floats distinguishable from integers on re-read
  if (s.find_first_of(".eEni") == std::string::npos) s += ".0";
  return s;
}

inline std::string format_cell(const Cell& c) {
  if (auto* d = std::get_if<double>(&c)) return format_double(*d);
  if (auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  if (auto* u = std::get_if<std::uint64_t>(&c)) return std::to_string(*u);
  const auto& s = std::get<std::string>(c);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

inline Cell parse_cell(const std::string& tok) {
  if (!tok.empty() && tok.find_first_not_of("0123456789") == std::string::npos) return std::uint64_t{std::stoull(tok)};
  if (tok.size() > 1 && tok[0] == '-' && tok.find_first_not_of("0123456789", 1) == std::string::npos)
    return std::int64_t{std::stoll(tok)};
  if (!tok.empty()) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() + tok.size()) return v;
  }
  return tok;
}

inline nlohmann::json cell_json(const Cell& c) {
  return std::visit([](const auto& v) { return nlohmann::json(v); }, c);
}

inline std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + t.columns[i];
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + format_cell(row[i]);
    out += '\n';
  }
  return out;
}

/// Array of row objects; doubles go through the same 17-digit text as the CSV.
inline std::string to_json_text(const Table& t) {
  std::string out = "[";
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out += r ? ",\n  {" : "\n  {";
    bool first = true;
    auto field = [&](const std::string& k, const std::string& v) {
      out += (first ? "" : ", ") + nlohmann::json(k).dump() + ": " + v;
      first = false;
    };
    auto value_text = [](const nlohmann::json& v) {
      if (v.is_number_float()) {
        const double d = v.get<double>();
        return std::isfinite(d) ? format_double(d) : std::string("null");
      }
      return v.dump();
    };
    for (std::size_t i = 0; i < t.columns.size(); ++i) field(t.columns[i], value_text(cell_json(t.rows[r][i])));
    if (r < t.extras.size())
      for (const auto& [k, v] : t.extras[r].items()) field(k, value_text(v));
    out += "}";
  }
  out += t.rows.empty() ? "]\n" : "\n]\n";
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(path.parent_path().string(), "cannot create directory: " + ec.message());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path.string(), "cannot open for writing");
  f << text;
  f.close();
  if (!f) throw IoError(path.string(), "write failed");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path.string(), "cannot open for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

enum class TableFormat { csv, json };

/// Writes one table. Empty tables are rejected.
inline void emit(const Table& t, TableFormat format, const std::filesystem::path& path) {
  if (t.rows.empty()) throw DomainError("emit: table '" + t.name + "' has no rows");
  write_text(path, format == TableFormat::csv ? to_csv(t) : to_json_text(t));
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

inline Table parse_csv(const std::string& text, std::string name = {}) {
  Table t;
  t.name = std::move(name);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) return t;
  t.columns = detail::split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<Cell> row;
    for (const auto& tok : detail::split_csv_line(line)) row.push_back(parse_cell(tok));
    t.add_row(std::move(row));
  }
  return t;
}

inline Table read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path), path.stem().string()); }

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace scenery
