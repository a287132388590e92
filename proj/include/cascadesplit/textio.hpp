#pragma once

#include <cstdio>
#include <fstream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>

#include "cascadesplit/errors.hpp"

namespace cascadesplit::textio {

/// Shortest form that still carries 17 significant digits, so that a
/// strtod-style parse recovers the exact double.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_reals(std::ostream& os, std::span<const double> values) {
  os << '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) os << ',';
    os << format_real(values[i]);
  }
  os << ']';
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << contents;
  if (!out) throw DataError("write to '" + path + "' failed");
}

}  // namespace cascadesplit::textio
