#pragma once

// Number-basis distributions of diagonal single-mode states, and the
// heralded single-quantum subtraction (b rho b^dag) and addition
// (b^dag rho b) maps acting on them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "clickdyne/error.hpp"

namespace clickdyne {

struct FockDistribution {
  std::vector<double> probs;    // p_n for n = 0..n_max()
  double truncation_mass = 0.0;  // probability known to lie above n_max

  std::size_t n_max() const { return probs.empty() ? 0 : probs.size() - 1; }
  double total() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }
};

struct Heralded {
  FockDistribution dist;
  double herald_weight = 0.0;
};

inline constexpr double kDefaultMaxTruncationMass = 1e-3;
inline constexpr double kDefaultOverflowTol = 1e-6;
inline constexpr double kDefaultTruncationTol = 1e-12;
inline constexpr std::size_t kDefaultNMaxCap = 1'000'000;

/// Wraps an arbitrary probability vector after checking it is a distribution.
inline FockDistribution make_distribution(std::vector<double> probs, double tol = 1e-12) {
  if (probs.size() < 2) throw Error(ErrorKind::Config, "distribution needs n_max >= 1");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error(ErrorKind::Config, "probabilities must be finite and >= 0");
    sum += p;
  }
  if (sum > 1.0 + tol || sum <= 0.0) throw Error(ErrorKind::Config, "probabilities must sum to at most 1");
  FockDistribution d{std::move(probs), 0.0};
  d.truncation_mass = std::max(0.0, 1.0 - sum);
  return d;
}

/// Smallest n_max with thermal truncation mass (n/(n+1))^(n_max+1) below tol.
inline std::size_t default_n_max(double n_bar, double tol = kDefaultTruncationTol,
                                 std::size_t cap = kDefaultNMaxCap) {
  if (!(n_bar > 0.0)) return 1;
  const double log_q = -std::log1p(1.0 / n_bar);
  const double n = std::max(1.0, std::floor(std::log(tol) / log_q));
  return n > static_cast<double>(cap) ? cap + 1 : static_cast<std::size_t>(n);
}

inline FockDistribution thermal(double n_bar, std::size_t n_max,
                                double max_truncation_mass = kDefaultMaxTruncationMass) {
  if (!(n_bar >= 0.0) || !std::isfinite(n_bar)) throw Error(ErrorKind::Config, "n_bar must be >= 0");
  if (n_max < 1) throw Error(ErrorKind::Config, "n_max must be >= 1");
  FockDistribution d;
  d.probs.resize(n_max + 1, 0.0);
  if (n_bar == 0.0) {
    d.probs[0] = 1.0;
    return d;
  }
  const double q = n_bar / (n_bar + 1.0);
  double p = 1.0 / (n_bar + 1.0);
  for (std::size_t n = 0; n <= n_max; ++n) {
    d.probs[n] = p;
    p *= q;
  }
  d.truncation_mass = std::exp(static_cast<double>(n_max + 1) * std::log(q));
  if (d.truncation_mass > max_truncation_mass) {
    throw Error(ErrorKind::TruncationOverflow,
                "n_max = " + std::to_string(n_max) + " leaves truncation mass " + std::to_string(d.truncation_mass));
  }
  return d;
}

inline double mean_occupation(const FockDistribution& d) {
  double s0 = 0.0, s1 = 0.0;
  for (std::size_t n = 0; n < d.probs.size(); ++n) {
    s0 += d.probs[n];
    s1 += static_cast<double>(n) * d.probs[n];
  }
  return s0 > 0.0 ? s1 / s0 : 0.0;
}

inline Heralded subtract(const FockDistribution& d) {
  double w = 0.0;
  for (std::size_t n = 1; n < d.probs.size(); ++n) w += static_cast<double>(n) * d.probs[n];
  if (!(w > 0.0)) throw Error(ErrorKind::SubtractFromVacuum, "distribution has no population above n = 0");
  Heralded out;
  out.herald_weight = w;
  out.dist.probs.assign(d.probs.size(), 0.0);
  for (std::size_t n = 0; n + 1 < d.probs.size(); ++n) {
    out.dist.probs[n] = static_cast<double>(n + 1) * d.probs[n + 1] / w;
  }
  return out;
}

inline Heralded add(const FockDistribution& d, double overflow_tol = kDefaultOverflowTol) {
  double w = 0.0;
  for (std::size_t n = 0; n < d.probs.size(); ++n) w += static_cast<double>(n + 1) * d.probs[n];
  const std::size_t top = d.n_max();
  const double overflow = static_cast<double>(top + 1) * d.probs[top] / w;
  if (overflow > overflow_tol) {
    throw Error(ErrorKind::TruncationOverflow,
                "addition moves mass " + std::to_string(overflow) + " above n_max = " + std::to_string(top));
  }
  Heralded out;
  out.herald_weight = w;
  out.dist.probs.assign(d.probs.size(), 0.0);
  double kept = 0.0;
  for (std::size_t n = 1; n <= top; ++n) {
    out.dist.probs[n] = static_cast<double>(n) * d.probs[n - 1] / w;
    kept += out.dist.probs[n];
  }
  for (double& p : out.dist.probs) p /= kept;
  out.dist.truncation_mass = overflow;
  return out;
}

// ---------------------------------------------------------------------------
// Thermal inputs, with a closed-form path for large occupations

enum class HeraldOp { Subtract, Add };

inline HeraldOp parse_herald_op(const std::string& s) {
  if (s == "subtract" || s == "sub") return HeraldOp::Subtract;
  if (s == "add") return HeraldOp::Add;
  throw Error(ErrorKind::Config, "unknown operation '" + s + "' (expected subtract|add)");
}

struct ThermalHeraldSummary {
  double n_bar_in = 0.0;
  double n_bar_out = 0.0;
  double herald_weight = 0.0;
  double truncation_mass = 0.0;
  std::size_t n_max = 0;
  bool closed_form = false;
};

/// Heralded output of a thermal state from its geometric factorial moments
/// <n> = n, <n(n-1)> = 2 n^2. No truncation involved.
inline ThermalHeraldSummary herald_thermal_closed_form(double n_bar, HeraldOp op) {
  if (!(n_bar >= 0.0) || !std::isfinite(n_bar)) throw Error(ErrorKind::Config, "n_bar must be >= 0");
  const double m1 = n_bar;
  const double m2 = 2.0 * n_bar * n_bar;
  ThermalHeraldSummary s{n_bar, 0.0, 0.0, 0.0, 0, true};
  if (op == HeraldOp::Subtract) {
    if (m1 == 0.0) throw Error(ErrorKind::SubtractFromVacuum, "thermal state with n_bar = 0");
    s.herald_weight = m1;
    s.n_bar_out = m2 / m1;
  } else {
    s.herald_weight = m1 + 1.0;
    s.n_bar_out = (m2 + 3.0 * m1 + 1.0) / (m1 + 1.0);
  }
  return s;
}

struct ThermalHeraldOptions {
  double truncation_tol = kDefaultTruncationTol;
  std::size_t n_max_cap = kDefaultNMaxCap;
  double overflow_tol = kDefaultOverflowTol;
  bool force_closed_form = false;
};

inline ThermalHeraldSummary herald_thermal(double n_bar, HeraldOp op, const ThermalHeraldOptions& opt = {}) {
  const std::size_t n_max = default_n_max(n_bar, opt.truncation_tol, opt.n_max_cap);
  if (opt.force_closed_form || n_max > opt.n_max_cap) return herald_thermal_closed_form(n_bar, op);
  const auto th = thermal(n_bar, n_max, std::max(opt.truncation_tol, kDefaultMaxTruncationMass));
  const auto h = op == HeraldOp::Subtract ? subtract(th) : add(th, opt.overflow_tol);
  return {n_bar, mean_occupation(h.dist), h.herald_weight, th.truncation_mass + h.dist.truncation_mass, n_max, false};
}

}  // namespace clickdyne
