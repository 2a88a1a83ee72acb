#pragma once

// Closed-form conditioned correlators and heterodyne variances of a single
// mechanical mode in the weak-coupling limit at zero detuning, plus the
// steady-state, detection-rate and vacuum-noise bookkeeping around them.

#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "clickdyne/error.hpp"
#include "clickdyne/model.hpp"

namespace clickdyne {

// ---------------------------------------------------------------------------
// Envelope

namespace analytic_detail {

/// (e^{-gamma t} - e^{-kappa t}) / (kappa - gamma) for t >= 0, evaluated
/// without cancellation. Near kappa = gamma it switches to a power series in
/// (kappa - gamma) t whose leading term is t e^{-kappa t}.
inline double h_kernel(double kappa, double gamma, double t) {
  const double d = kappa - gamma;
  const double x = d * t;
  const bool degenerate = std::abs(d) < kDegenerateRelTol * kappa;
  if (!degenerate && std::abs(x) >= 0.5) {
    return (std::exp(-gamma * t) - std::exp(-kappa * t)) / d;
  }
  double phi;
  if (!degenerate) {
    phi = -std::expm1(-x) / d;
  } else if (std::abs(x) < 1.0) {
    // t * sum_k (-x)^k / (k+1)!
    double term = 1.0, sum = 1.0;
    for (int k = 1; k < 40; ++k) {
      term *= -x / (k + 1);
      sum += term;
      if (std::abs(term) < 1e-18 * std::abs(sum)) break;
    }
    phi = t * sum;
  } else {
    phi = -std::expm1(-x) / d;
  }
  return std::exp(-gamma * t) * phi;
}

}  // namespace analytic_detail

/// W(tau) = (kappa e^{-gamma|tau|} - gamma e^{-kappa|tau|}) / (kappa - gamma),
/// continuous through kappa = gamma where it equals e^{-kappa|tau|}(1 + kappa|tau|).
inline double envelope(double kappa, double gamma, double tau) {
  const double t = std::abs(tau);
  return std::exp(-gamma * t) + gamma * analytic_detail::h_kernel(kappa, gamma, t);
}

// ---------------------------------------------------------------------------
// Single-mode conditioned correlator and variances

struct SingleMode {
  double kappa = 0.0;
  double gamma = 0.0;
  double g = 0.0;
  double n_eff = 0.0;  // n_th (beam splitter) or n_th + 1 (two-mode squeezer)
};

inline SingleMode single_mode(InteractionKind kind, const SystemParams& p) {
  const auto& m = p.mode();
  if (m.delta != 0.0) {
    throw Error(ErrorKind::Config, "single-mode closed forms require delta = 0; use the multimode path");
  }
  return {p.optical.kappa, m.gamma, m.g, effective_occupation(kind, m.n_th)};
}

/// Intracavity occupation <a^dag a> in the weak-coupling limit.
inline double cavity_occupation(const SingleMode& s) {
  return s.n_eff * s.g * s.g / (s.kappa * (s.kappa + s.gamma));
}

inline double correlator(const SingleMode& s, double tau) {
  const double t = std::abs(tau);
  return s.n_eff * s.g * s.g / (s.kappa + s.gamma) *
         (analytic_detail::h_kernel(s.kappa, s.gamma, t) + std::exp(-s.kappa * t) / s.kappa);
}

inline double correlator(InteractionKind kind, const SystemParams& p, double tau) {
  return correlator(single_mode(kind, p), tau);
}

struct VariancePoint {
  double tau = 0.0;
  double total = 0.0;
  double vacuum = 0.5;
  double background = 0.0;
  double feature = 0.0;
};

inline constexpr double kWickTolerance = 1e-12;

inline VariancePoint cavity_variance(const SingleMode& s, double tau) {
  const double n_a = cavity_occupation(s);
  const double w = envelope(s.kappa, s.gamma, tau);
  VariancePoint v{tau, 0.0, 0.5, n_a, n_a * w * w};
  v.total = v.vacuum + v.background + v.feature;

  if (n_a > 0.0) {
    const double c = correlator(s, tau);
    const double wick = c * c / n_a + n_a + 0.5;
    if (std::abs(wick - v.total) > kWickTolerance * std::max(1.0, std::abs(v.total))) {
      throw std::logic_error("cavity_variance: closed form and Wick assembly disagree");
    }
  }
  return v;
}

inline VariancePoint cavity_variance(InteractionKind kind, const SystemParams& p, double tau) {
  return cavity_variance(single_mode(kind, p), tau);
}

/// Vacuum-normalized heterodyne variance 1/2 + eta n_eff (1 + W^2).
inline VariancePoint normalized_het_variance(const SingleMode& s, double eta, double tau) {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw Error(ErrorKind::Config, "eta must be >= 0");
  const double bg = eta * s.n_eff;
  const double w = envelope(s.kappa, s.gamma, tau);
  VariancePoint v{tau, 0.0, 0.5, bg, bg * w * w};
  v.total = v.vacuum + v.background + v.feature;
  return v;
}

inline VariancePoint normalized_het_variance(InteractionKind kind, const SystemParams& p, double eta, double tau) {
  return normalized_het_variance(single_mode(kind, p), eta, tau);
}

struct VarianceCurve {
  std::vector<double> tau;
  std::vector<double> value;
  std::vector<double> vacuum;
  std::vector<double> background;
  std::vector<double> feature;

  void push(const VariancePoint& v) {
    tau.push_back(v.tau);
    value.push_back(v.total);
    vacuum.push_back(v.vacuum);
    background.push_back(v.background);
    feature.push_back(v.feature);
  }
  std::size_t size() const { return tau.size(); }
};

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = a;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return out;
}

inline VarianceCurve het_variance_curve(const SingleMode& s, double eta, const std::vector<double>& taus) {
  VarianceCurve c;
  for (double t : taus) c.push(normalized_het_variance(s, eta, t));
  return c;
}

/// Reference doubling factor: 2 n/n for subtraction, 2(n+1)/(n+1) for addition.
inline double doubling_factor(InteractionKind kind) {
  const double n = 1.0;
  const double n_eff = effective_occupation(kind, n);
  return 2.0 * n_eff / n_eff;
}

// ---------------------------------------------------------------------------
// Steady-state mechanical occupation

enum class SteadyStateMethod { WeakExpansion, ExactIntegral };

inline double steady_state_occupation(InteractionKind kind, const SystemParams& p, SteadyStateMethod method) {
  const auto& m = p.mode();
  const double kappa = p.optical.kappa, gamma = m.gamma, g2 = m.g * m.g;
  const bool tms = kind == InteractionKind::TwoModeSqueezer;
  if (tms && g2 >= kappa * gamma) {
    throw Error(ErrorKind::UnstableAmplifier, "two-mode squeezer requires G^2 < kappa*gamma");
  }
  if (method == SteadyStateMethod::WeakExpansion) {
    const double r = g2 / (gamma * (kappa + gamma));
    return m.n_th * (tms ? 1.0 + r : 1.0 - r);
  }

  // n = (n_th / 2pi) * integral |chi_bb(w)|^2 dw; |chi_bb|^2 is even in w.
  const double sign = tms ? -1.0 : 1.0;
  // Integrated in units of kappa, w = kappa x.
  auto chi2 = [&](double x) {
    using C = std::complex<double>;
    const double w = kappa * x;
    const C num = std::sqrt(2.0 * gamma) * C(kappa, w);
    const C den = C(kappa, w) * C(gamma, w) + sign * g2;
    return kappa * std::norm(num / den);
  };
  double err = 0.0;
  const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      chi2, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-13, &err);
  if (!std::isfinite(integral) || err > 1e-9 * integral) {
    throw Error(ErrorKind::QuadratureNonConvergence, "steady-state susceptibility integral did not converge");
  }
  return m.n_th * 2.0 * integral / (2.0 * std::numbers::pi);
}

// ---------------------------------------------------------------------------
// Photon counting

struct DetectionRates {
  double r_det = 0.0;                // photons per second reaching the SPAD
  double n_det_per_gate = 0.0;       // mean counts per gate
  double expected_count_rate = 0.0;  // counts per second at the gate rate
};

inline DetectionRates detection_rates(InteractionKind kind, const SystemParams& p) {
  DetectionRates r;
  for (const auto& m : p.mechanics) {
    r.r_det += p.eff.eta_det() * effective_occupation(kind, m.n_th) * 2.0 * m.g * m.g / (p.optical.kappa + m.gamma);
  }
  r.n_det_per_gate = p.eff.eta_spad * r.r_det * p.det.t_gate;
  r.expected_count_rate = r.n_det_per_gate * p.det.gate_rate;
  return r;
}

inline DetectionRates detection_rates(const SystemParams& p) { return detection_rates(p.interaction, p); }

/// Fraction of heralds caused by dark counts.
inline double dark_fraction(double dark_counts, double signal_counts) {
  const double total = dark_counts + signal_counts;
  return total > 0.0 ? dark_counts / total : 0.0;
}

/// Conditioned value diluted by a fraction f of uncorrelated heralds.
inline double dilute(double conditioned, double unconditioned, double f) {
  return (1.0 - f) * conditioned + f * unconditioned;
}

// ---------------------------------------------------------------------------
// Balanced-detector vacuum level and heterodyne efficiency

/// Integral of |H(w)|^2 over w >= 0 for the first-order low-pass
/// H = 1/(1 + i w/w_co).
inline double vacuum_noise_level(const DetectorParams& det) {
  if (!(det.omega_co > 0.0)) throw Error(ErrorKind::Config, "omega_co must be > 0");
  return std::numbers::pi * det.omega_co / 2.0;
}

/// Same integral for an arbitrary power response |H(w)|^2.
inline double vacuum_noise_level(const std::function<double(double)>& h2, double rel_tol = 1e-10) {
  double err = 0.0;
  double l1 = 0.0;
  double value = 0.0;
  try {
    value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        h2, 0.0, std::numeric_limits<double>::infinity(), 15, rel_tol, &err, &l1);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::NonIntegrableFilter, e.what());
  }
  if (!std::isfinite(value) || !std::isfinite(err) || err > 1e3 * rel_tol * std::abs(value)) {
    throw Error(ErrorKind::NonIntegrableFilter, "filter response is not integrable on [0, inf)");
  }
  return value;
}

/// eta_het: fraction of the intracavity thermal signal that reaches the
/// balanced detector, relative to its vacuum level.
inline double heterodyne_efficiency(const SystemParams& p) {
  const auto& m = p.mode();
  return p.eff.heterodyne_chain() * m.g * m.g / ((p.optical.kappa + m.gamma) * vacuum_noise_level(p.det));
}

inline double effective_eta(const SystemParams& p) { return p.eff.eta_mm * heterodyne_efficiency(p); }

}  // namespace clickdyne
