#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clickdyne/error.hpp"

namespace clickdyne {

/// Herald-conditioned mean of X^2 on a lag grid.
struct ConditionedCurve {
  std::vector<double> tau;
  std::vector<double> mean;
  std::vector<double> se;
  std::size_t n_heralds = 0;
  double vacuum_level = 0.5;

  std::size_t size() const { return tau.size(); }

  /// Index of the bin closest to tau = 0.
  std::size_t center() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < tau.size(); ++i) {
      if (std::abs(tau[i]) < std::abs(tau[best])) best = i;
    }
    return best;
  }
};

inline std::string format_sci(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

inline void write_curve_csv(std::ostream& out, const ConditionedCurve& c) {
  out << "tau_s,mean,se,n_heralds\n";
  for (std::size_t i = 0; i < c.size(); ++i) {
    out << format_sci(c.tau[i]) << ',' << format_sci(c.mean[i]) << ',' << format_sci(c.se[i]) << ','
        << c.n_heralds << '\n';
  }
}

inline void write_curve_csv(const std::string& path, const ConditionedCurve& c) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::Config, "cannot write '" + path + "'");
  write_curve_csv(f, c);
}

/// Reads a curve CSV. The n_heralds column is optional so analytic curves
/// with (tau_s, mean, se) columns can be fitted too.
inline ConditionedCurve read_curve_csv(std::istream& in, const std::string& name = "curve") {
  ConditionedCurve c;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Config, name + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      header.push_back(cell);
    }
  }
  int i_tau = -1, i_mean = -1, i_se = -1, i_n = -1;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    if (header[i] == "tau_s") i_tau = i;
    if (header[i] == "mean") i_mean = i;
    if (header[i] == "se") i_se = i;
    if (header[i] == "n_heralds") i_n = i;
  }
  if (i_tau < 0 || i_mean < 0 || i_se < 0) {
    throw Error(ErrorKind::Config, name + ": header must contain tau_s, mean, se");
  }
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < header.size()) {
      throw Error(ErrorKind::Config, name + ": row " + std::to_string(row) + " has too few columns");
    }
    try {
      c.tau.push_back(std::stod(cells[i_tau]));
      c.mean.push_back(std::stod(cells[i_mean]));
      c.se.push_back(std::stod(cells[i_se]));
      if (i_n >= 0) c.n_heralds = std::stoull(cells[i_n]);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Config, name + ": row " + std::to_string(row) + " is not numeric");
    }
  }
  return c;
}

inline ConditionedCurve read_curve_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Config, "cannot open curve file '" + path + "'");
  return read_curve_csv(f, path);
}

}  // namespace clickdyne
