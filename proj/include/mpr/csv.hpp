#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "mpr/config.hpp"
#include "mpr/errors.hpp"
#include "mpr/linalg.hpp"

namespace mpr::csv {

/// Shortest-safe decimal: 17 significant digits round-trips any double.
inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Matrix CSV: `dim=<n>` then n rows of n comma-separated decimals. Non-square
/// operators use `dim=<rows>x<cols>`.
inline void write_matrix(std::ostream& os, const Eigen::Ref<const Matrix>& m) {
  if (m.rows() == m.cols()) {
    os << "dim=" << m.rows() << '\n';
  } else {
    os << "dim=" << m.rows() << 'x' << m.cols() << '\n';
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_real(m(i, j));
    }
    os << '\n';
  }
}

inline Matrix read_matrix(std::istream& is, const std::string& source = "matrix") {
  std::string line;
  while (std::getline(is, line) && detail::trim(line).empty()) {
  }
  const std::string header = detail::trim(line);
  if (header.rfind("dim=", 0) != 0) {
    throw ConfigError(source + ": expected header 'dim=<n>', got '" + header + "'");
  }
  const std::string dims = header.substr(4);
  long rows = 0;
  long cols = 0;
  if (const auto x = dims.find('x'); x != std::string::npos) {
    rows = detail::parse_long(dims.substr(0, x), source + " dim");
    cols = detail::parse_long(dims.substr(x + 1), source + " dim");
  } else {
    rows = cols = detail::parse_long(dims, source + " dim");
  }
  if (rows <= 0 || cols <= 0) throw ConfigError(source + ": dimension must be positive");
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    if (!std::getline(is, line)) {
      throw ConfigError(source + ": expected " + std::to_string(rows) + " rows, got " +
                        std::to_string(i));
    }
    const auto cells = detail::split(line, ',');
    if (static_cast<long>(cells.size()) != cols) {
      throw ConfigError(source + " row " + std::to_string(i + 1) + ": expected " +
                        std::to_string(cols) + " values, got " + std::to_string(cells.size()));
    }
    for (long j = 0; j < cols; ++j) {
      m(i, j) = detail::parse_double(cells[j], source + " row " + std::to_string(i + 1));
    }
  }
  return m;
}

inline void save_matrix(const std::string& path, const Eigen::Ref<const Matrix>& m) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  write_matrix(f, m);
}

inline Matrix load_matrix(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open matrix file '" + path + "'");
  return read_matrix(f, path);
}

}  // namespace mpr::csv
