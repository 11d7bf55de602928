#pragma once

#include <Eigen/Dense>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gfreml/errors.hpp"

namespace gfreml::io {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double parse_double(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  if (s.empty()) throw InvalidInput(where + ": empty numeric field");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size())
    throw InvalidInput(where + ": cannot parse '" + s + "' as a number");
  return v;
}

inline long long parse_int(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  if (s.empty()) throw InvalidInput(where + ": empty integer field");
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size())
    throw InvalidInput(where + ": cannot parse '" + s + "' as an integer");
  return v;
}

}  // namespace detail

// Tabular data: one header row naming the columns, then numeric rows. All
// columns but the last are features; the last is the response.
struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<std::string> feature_names;
  std::string response_name;
};

inline Dataset read_csv_data(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw InvalidInput(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = detail::split(line, ',');
  if (header.size() < 2)
    throw InvalidInput(path + ": need at least one feature column and a response column");

  Dataset ds;
  for (std::size_t j = 0; j + 1 < header.size(); ++j)
    ds.feature_names.push_back(detail::trim(header[j]));
  ds.response_name = detail::trim(header.back());

  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> cells = detail::split(line, ',');
    if (cells.size() != header.size())
      throw InvalidInput(path + ":" + std::to_string(lineno) + ": expected " +
                         std::to_string(header.size()) + " columns, got " +
                         std::to_string(cells.size()));
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j)
      row[j] = detail::parse_double(cells[j], path + ":" + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidInput(path + ": no data rows");

  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index d = static_cast<Eigen::Index>(header.size()) - 1;
  ds.X.resize(n, d);
  ds.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) ds.X(i, j) = rows[i][j];
    ds.y[i] = rows[i][d];
  }
  return ds;
}

// key = value config files; '#' starts a comment, blank lines are skipped,
// later assignments to the same key win. Unknown keys are rejected by the
// consumer via require_known, so typos fail loudly instead of being ignored.
class Config {
 public:
  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    Config cfg;
    cfg.path_ = path;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string stripped = detail::trim(line);
      if (stripped.empty()) continue;
      const std::size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw InvalidInput(path + ":" + std::to_string(lineno) +
                           ": expected 'key = value'");
      const std::string key = detail::trim(stripped.substr(0, eq));
      if (key.empty())
        throw InvalidInput(path + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = detail::trim(stripped.substr(eq + 1));
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end())
      throw InvalidInput(path_ + ": missing required key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return detail::parse_double(it->second, path_ + ": key '" + key + "'");
  }

  int get_int(const std::string& key, int fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const long long v = detail::parse_int(it->second, path_ + ": key '" + key + "'");
    return static_cast<int>(v);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string s = detail::trim(it->second);
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || end != s.c_str() + s.size())
      throw InvalidInput(path_ + ": key '" + key + "': cannot parse '" + s +
                         "' as an unsigned integer");
    return v;
  }

  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    for (const std::string& cell : detail::split(it->second, ','))
      out.push_back(static_cast<int>(
          detail::parse_int(cell, path_ + ": key '" + key + "'")));
    return out;
  }

  void require_known(const std::set<std::string>& known) const {
    for (const auto& [key, value] : values_) {
      (void)value;
      if (!known.count(key))
        throw InvalidInput(path_ + ": unknown key '" + key + "'");
    }
  }

 private:
  std::string path_;
  std::map<std::string, std::string> values_;
};

}  // namespace gfreml::io
