#pragma once

// Conditioned correlator and heterodyne variance when several detuned
// mechanical modes scatter into the same optical mode. Each mode i acts
// through the filter F_i(t) = c_i (e^{-Gamma_i t} - e^{-kappa t}) Theta(t),
// Gamma_i = gamma_i + i delta_i, |c_i|^2 = 2 gamma_i G_i^2 / |kappa - Gamma_i|^2.

#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "clickdyne/analytic.hpp"
#include "clickdyne/error.hpp"
#include "clickdyne/model.hpp"

namespace clickdyne {

using cplx = std::complex<double>;

namespace multimode_detail {

// Mode rate as seen by the heralded amplitude: Gamma for the beam splitter,
// conj(Gamma) for the two-mode squeezer whose partner mode is b^dag.
inline cplx mode_rate(InteractionKind kind, const MechanicalParams& m) {
  return kind == InteractionKind::BeamSplitter ? cplx(m.gamma, m.delta) : cplx(m.gamma, -m.delta);
}

inline bool near_degenerate(double kappa, cplx rate) { return std::abs(kappa - rate) < 1e-6 * kappa; }

inline cplx filter(double kappa, cplx rate, double g, double t) {
  if (t < 0.0) return 0.0;
  const cplx d = kappa - rate;
  const cplx x = d * t;
  const cplx phi = std::abs(x) < 1e-4 ? t * (1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0)
                                      : (1.0 - std::exp(-x)) / d;
  return cplx(0.0, -g) * std::sqrt(2.0 * rate.real()) * std::exp(-rate * t) * phi;
}

inline cplx mode_closed_form(double kappa, cplx rate, double g, double n, double tau) {
  const double gam = rate.real();
  const double u = std::min(0.0, tau);
  const cplx rc = std::conj(rate);
  const cplx i_tau = std::exp(-rate * tau + 2.0 * gam * u) / (2.0 * gam)
                   - std::exp(-kappa * tau + (rc + kappa) * u) / (rc + kappa)
                   - std::exp(-rate * tau + (kappa + rate) * u) / (kappa + rate)
                   + std::exp(-kappa * tau + 2.0 * kappa * u) / (2.0 * kappa);
  const double c2 = 2.0 * gam * g * g / std::norm(kappa - rate);
  return n * c2 * i_tau;
}

inline cplx mode_quadrature(double kappa, cplx rate, double g, double n, double tau) {
  const double lower = std::max(0.0, -tau);
  double err_re = 0.0, err_im = 0.0;
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  // Integrate in units of the slowest decay so the infinite-range map sees O(1) scales.
  const double lam = std::min(kappa, rate.real());
  auto overlap = [&](double s) {
    const double t = lower + s / lam;
    return std::conj(filter(kappa, rate, g, t)) * filter(kappa, rate, g, tau + t) / lam;
  };
  // The integrand decays at least as e^{-2s}; beyond s = 40 it is below double precision.
  constexpr double kSpan = 40.0;
  const double re = GK::integrate([&](double s) { return overlap(s).real(); }, 0.0, kSpan, 20, 1e-13, &err_re);
  const double im = GK::integrate([&](double s) { return overlap(s).imag(); }, 0.0, kSpan, 20, 1e-13, &err_im);
  const double scale = std::max(std::abs(re) + std::abs(im), 1e-300);
  if (!std::isfinite(re) || !std::isfinite(im) || err_re + err_im > 1e-8 * scale + 1e-15) {
    throw Error(ErrorKind::QuadratureNonConvergence, "multimode filter overlap integral did not converge");
  }
  return n * cplx(re, im);
}

inline cplx mode_correlator(InteractionKind kind, double kappa, const MechanicalParams& m, double tau) {
  const double n = effective_occupation(kind, m.n_th);
  if (m.g == 0.0 || n == 0.0) return 0.0;
  if (m.delta == 0.0) return correlator(SingleMode{kappa, m.gamma, m.g, n}, tau);
  const cplx rate = mode_rate(kind, m);
  if (near_degenerate(kappa, rate)) return mode_quadrature(kappa, rate, m.g, n, tau);
  return mode_closed_form(kappa, rate, m.g, n, tau);
}

}  // namespace multimode_detail

struct MultimodeCorrelator {
  cplx closed_form;
  cplx quadrature;
};

/// Sum over modes of n_i * integral F_i^*(-t') F_i(tau - t') dt', by closed form.
inline cplx multimode_correlator_closed(InteractionKind kind, const std::vector<MechanicalParams>& modes,
                                        double kappa, double tau) {
  cplx sum = 0.0;
  for (const auto& m : modes) sum += multimode_detail::mode_correlator(kind, kappa, m, tau);
  return sum;
}

/// Same sum by adaptive quadrature of the filter overlap.
inline cplx multimode_correlator_quadrature(InteractionKind kind, const std::vector<MechanicalParams>& modes,
                                            double kappa, double tau) {
  cplx sum = 0.0;
  for (const auto& m : modes) {
    const double n = effective_occupation(kind, m.n_th);
    sum += multimode_detail::mode_quadrature(kappa, multimode_detail::mode_rate(kind, m), m.g, n, tau);
  }
  return sum;
}

inline MultimodeCorrelator multimode_correlator(InteractionKind kind, const std::vector<MechanicalParams>& modes,
                                                double kappa, double tau) {
  return {multimode_correlator_closed(kind, modes, kappa, tau),
          multimode_correlator_quadrature(kind, modes, kappa, tau)};
}

struct MultimodePoint {
  double tau = 0.0;
  double total = 0.0;
  double vacuum = 0.5;
  double background = 0.0;
  double feature = 0.0;
  double fringe = 0.0;  // inter-mode interference part of feature
};

/// Wick-assembled variance 1/2 + scale (|C(tau)|^2/C(0) + C(0)). scale = 1
/// gives intracavity units; scale = eta_h maps to the detected quadrature.
inline MultimodePoint multimode_variance(InteractionKind kind, const std::vector<MechanicalParams>& modes,
                                         double kappa, double tau, double scale = 1.0) {
  MultimodePoint p;
  p.tau = tau;
  const double n_a = multimode_correlator_closed(kind, modes, kappa, 0.0).real();
  if (n_a <= 0.0) {
    p.total = p.vacuum;
    return p;
  }
  cplx sum = 0.0;
  double incoherent = 0.0;
  for (const auto& m : modes) {
    const cplx c = multimode_detail::mode_correlator(kind, kappa, m, tau);
    sum += c;
    incoherent += std::norm(c);
  }
  p.background = scale * n_a;
  p.feature = scale * std::norm(sum) / n_a;
  p.fringe = scale * (std::norm(sum) - incoherent) / n_a;
  p.total = p.vacuum + p.background + p.feature;
  return p;
}

/// Linearly interpolated zero crossings of a sampled curve.
inline std::vector<double> zero_crossings(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> out;
  for (std::size_t i = 1; i < x.size() && i < y.size(); ++i) {
    const double a = y[i - 1], b = y[i];
    if (a == 0.0) {
      if (out.empty() || out.back() != x[i - 1]) out.push_back(x[i - 1]);
    } else if ((a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0)) {
      out.push_back(x[i - 1] + (x[i] - x[i - 1]) * a / (a - b));
    }
  }
  return out;
}

}  // namespace clickdyne
