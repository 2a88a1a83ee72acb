#pragma once

// Physical parameters of the heralded addition/subtraction setup.
//
// All rates are angular [rad/s] and all rates are amplitude decay rates
// (a Lorentzian of amplitude rate x has FWHM 2x). Hz-valued inputs go
// through to_rad_per_s, which is the only unit conversion in the library.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "clickdyne/error.hpp"

namespace clickdyne {

enum class InteractionKind {
  BeamSplitter,     // anti-Stokes heralding, phonon subtraction
  TwoModeSqueezer,  // Stokes heralding, phonon addition
};

inline std::string_view to_string(InteractionKind kind) {
  return kind == InteractionKind::BeamSplitter ? "beam_splitter" : "two_mode_squeezer";
}

inline InteractionKind parse_interaction(std::string_view text) {
  if (text == "beam_splitter" || text == "bs" || text == "subtraction") {
    return InteractionKind::BeamSplitter;
  }
  if (text == "two_mode_squeezer" || text == "tms" || text == "addition") {
    return InteractionKind::TwoModeSqueezer;
  }
  throw Error(ErrorKind::Config, "unknown interaction '" + std::string(text) + "'");
}

struct OpticalParams {
  double kappa = 0.0;      // optical amplitude decay rate
  double kappa_ext = 0.0;  // external (taper) coupling rate, 0 = unspecified
};

struct MechanicalParams {
  double gamma = 0.0;  // mechanical amplitude decay rate
  double delta = 0.0;  // optomechanical detuning
  double g = 0.0;      // pump-enhanced coupling G
  double n_th = 0.0;   // bath occupation
};

struct EfficiencyChain {
  double eta_taper = 1.0;
  double eta_out = 1.0;
  double eta_filter = 1.0;
  double eta_bs = 1.0;
  double eta_spad = 1.0;
  double eta_bd = 1.0;
  double eta_mm = 1.0;

  /// Efficiency from the cavity to the SPAD input (excludes the SPAD itself).
  double eta_det() const { return eta_filter * eta_bs * eta_out; }

  /// Transmission from the cavity output to the balanced detector.
  double heterodyne_chain() const { return eta_taper * eta_out * eta_bs * eta_bd; }
};

struct DetectorParams {
  double omega_co = 0.0;   // balanced-detector cut-off
  double omega_het = 0.0;  // heterodyne frequency
  double t_gate = 0.0;     // SPAD effective gate length [s]
  double gate_rate = 0.0;  // gates per second
  double dark_rate = 0.0;  // dark counts per second of open gate
};

/// Converts a wall-clock dark-count rate (clicks per second while gating at
/// gate_rate) into the open-gate rate stored in DetectorParams.
inline double open_gate_dark_rate(double clicks_per_s, double gate_rate, double t_gate) {
  return clicks_per_s / (gate_rate * t_gate);
}

struct SystemParams {
  InteractionKind interaction = InteractionKind::BeamSplitter;
  OpticalParams optical;
  std::vector<MechanicalParams> mechanics;
  EfficiencyChain eff;
  DetectorParams det;

  bool single_mode() const { return mechanics.size() == 1; }

  const MechanicalParams& mode() const {
    if (mechanics.size() != 1) {
      throw Error(ErrorKind::Config, "operation requires exactly one mechanical mode");
    }
    return mechanics.front();
  }
};

/// Mean bath occupation entering the heralded signal: n_th for the beam
/// splitter, n_th + 1 for the two-mode squeezer.
inline double effective_occupation(InteractionKind kind, double n_th) {
  return kind == InteractionKind::BeamSplitter ? n_th : n_th + 1.0;
}

// ---------------------------------------------------------------------------
// Unit conventions

enum class RateUnit {
  RadPerSecond,
  AmplitudeHz,  // x / 2pi in Hz
  FwhmHz,       // 2x / 2pi in Hz
};

inline double to_rad_per_s(double value, RateUnit unit) {
  switch (unit) {
    case RateUnit::RadPerSecond: return value;
    case RateUnit::AmplitudeHz: return 2.0 * std::numbers::pi * value;
    case RateUnit::FwhmHz: return std::numbers::pi * value;
  }
  return value;
}

inline double from_rad_per_s(double value, RateUnit unit) {
  switch (unit) {
    case RateUnit::RadPerSecond: return value;
    case RateUnit::AmplitudeHz: return value / (2.0 * std::numbers::pi);
    case RateUnit::FwhmHz: return value / std::numbers::pi;
  }
  return value;
}

// ---------------------------------------------------------------------------
// Validation

enum class Severity { Pass, Warn, Fail };

inline std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::Pass: return "pass";
    case Severity::Warn: return "warn";
    case Severity::Fail: return "fail";
  }
  return "?";
}

struct Finding {
  std::string field;
  Severity severity = Severity::Pass;
  std::string message;
};

struct ValidationReport {
  std::vector<Finding> findings;
  // max over modes of G^2 / (gamma (kappa + gamma)); the relative size of the
  // first neglected term of the weak-coupling expansions.
  double weak_coupling_ratio = 0.0;
  // max over modes of G / min(kappa, gamma); informational.
  double coupling_ratio = 0.0;
  bool degenerate_branch = false;

  Severity status() const {
    Severity worst = Severity::Pass;
    for (const auto& f : findings) worst = std::max(worst, f.severity);
    return worst;
  }
  bool ok() const { return status() != Severity::Fail; }

  std::string summary() const {
    std::string out;
    for (const auto& f : findings) {
      if (f.severity == Severity::Pass) continue;
      out += std::string(to_string(f.severity)) + " " + f.field + ": " + f.message + "\n";
    }
    return out;
  }
};

inline constexpr double kWeakCouplingWarn = 0.05;
inline constexpr double kDegenerateRelTol = 1e-6;

namespace detail {

inline void check(ValidationReport& r, bool good, std::string field, Severity bad, std::string msg) {
  r.findings.push_back({std::move(field), good ? Severity::Pass : bad, good ? std::string{} : std::move(msg)});
}

inline bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }
inline bool finite_pos(double x) { return std::isfinite(x) && x > 0.0; }

}  // namespace detail

inline ValidationReport validate(const SystemParams& p) {
  using detail::check;
  ValidationReport r;
  const double kappa = p.optical.kappa;

  check(r, detail::finite_pos(kappa), "optical.kappa", Severity::Fail, "must be > 0");
  check(r, detail::finite_nonneg(p.optical.kappa_ext) && p.optical.kappa_ext <= kappa,
        "optical.kappa_ext", Severity::Fail, "must satisfy 0 <= kappa_ext <= kappa");
  if (p.optical.kappa_ext > 0.0 && kappa > 0.0) {
    check(r, std::abs(p.eff.eta_out - p.optical.kappa_ext / kappa) < 1e-9, "efficiencies.eta_out",
          Severity::Warn, "differs from kappa_ext / kappa");
  }
  check(r, !p.mechanics.empty(), "mechanics", Severity::Fail, "at least one mechanical mode required");

  for (std::size_t i = 0; i < p.mechanics.size(); ++i) {
    const auto& m = p.mechanics[i];
    const std::string pre = "mechanics." + std::to_string(i) + ".";
    check(r, detail::finite_pos(m.gamma), pre + "gamma", Severity::Fail, "must be > 0");
    check(r, detail::finite_nonneg(m.g), pre + "g", Severity::Fail, "must be >= 0");
    check(r, detail::finite_nonneg(m.n_th), pre + "n_th", Severity::Fail, "must be >= 0");
    check(r, std::isfinite(m.delta), pre + "delta", Severity::Fail, "must be finite");
    if (!(m.gamma > 0.0) || !(kappa > 0.0)) continue;

    const double weak = m.g * m.g / (m.gamma * (kappa + m.gamma));
    r.weak_coupling_ratio = std::max(r.weak_coupling_ratio, weak);
    r.coupling_ratio = std::max(r.coupling_ratio, m.g / std::min(kappa, m.gamma));
    check(r, weak <= kWeakCouplingWarn, pre + "g", Severity::Warn,
          "G^2/(gamma(kappa+gamma)) = " + std::to_string(weak) + " exceeds weak-coupling range");

    const bool degenerate = std::abs(kappa - m.gamma) / kappa < kDegenerateRelTol;
    r.degenerate_branch = r.degenerate_branch || degenerate;
    check(r, !degenerate, pre + "gamma", Severity::Warn, "kappa == gamma, degenerate closed-form branch engaged");

    if (p.interaction == InteractionKind::TwoModeSqueezer) {
      check(r, m.g * m.g < kappa * m.gamma, pre + "g", Severity::Fail,
            "two-mode squeezer unstable: G^2 >= kappa*gamma");
    }
  }

  const auto& e = p.eff;
  const std::pair<const char*, double> etas[] = {
      {"eta_taper", e.eta_taper}, {"eta_out", e.eta_out}, {"eta_filter", e.eta_filter},
      {"eta_bs", e.eta_bs},       {"eta_spad", e.eta_spad}, {"eta_bd", e.eta_bd},
      {"eta_mm", e.eta_mm}};
  for (const auto& [name, v] : etas) {
    check(r, std::isfinite(v) && v >= 0.0 && v <= 1.0, std::string("efficiencies.") + name, Severity::Fail,
          "must lie in [0, 1]");
  }

  const auto& d = p.det;
  check(r, detail::finite_pos(d.omega_co), "detector.omega_co", Severity::Fail, "must be > 0");
  check(r, detail::finite_pos(d.omega_het), "detector.omega_het", Severity::Fail, "must be > 0");
  check(r, d.omega_het < d.omega_co, "detector.omega_het", Severity::Fail, "must lie below omega_co");
  check(r, detail::finite_pos(d.t_gate), "detector.t_gate", Severity::Fail, "must be > 0");
  check(r, detail::finite_pos(d.gate_rate), "detector.gate_rate", Severity::Fail, "must be > 0");
  check(r, detail::finite_nonneg(d.dark_rate), "detector.dark_rate", Severity::Fail, "must be >= 0");
  return r;
}

inline void require_valid(const SystemParams& p) {
  const auto report = validate(p);
  if (!report.ok()) throw Error(ErrorKind::Config, "invalid parameters\n" + report.summary());
}

// ---------------------------------------------------------------------------
// Rescaling to kappa = 1

struct ScaledParams {
  SystemParams params;
  double rate_scale = 1.0;  // original kappa [rad/s]; time unit is 1/rate_scale
};

/// Rescales every rate by 1/kappa and every duration by kappa. The closed
/// forms depend only on gamma/kappa, G/kappa and kappa*tau, so results are
/// unchanged once tau is rescaled too.
inline ScaledParams dimensionless(const SystemParams& p) {
  if (!(p.optical.kappa > 0.0)) throw Error(ErrorKind::Config, "kappa must be > 0 to rescale");
  const double s = p.optical.kappa;
  ScaledParams out{p, s};
  auto& q = out.params;
  q.optical.kappa = 1.0;
  q.optical.kappa_ext = p.optical.kappa_ext / s;
  for (auto& m : q.mechanics) {
    m.gamma /= s;
    m.delta /= s;
    m.g /= s;
  }
  q.det.omega_co /= s;
  q.det.omega_het /= s;
  q.det.gate_rate /= s;
  q.det.dark_rate /= s;
  q.det.t_gate *= s;
  return out;
}

}  // namespace clickdyne
