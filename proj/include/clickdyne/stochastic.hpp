#pragma once

// Monte Carlo twin of the heralded click-dyne experiment.
//
// The optical amplitude is split as a = a_sig + a_vac. a_sig is the
// normally ordered (Glauber P) amplitude: it obeys the exact linear
// Langevin dynamics driven only by the mechanical bath, with strength n_th
// for the beam splitter and n_th + 1 for the two-mode squeezer (whose
// partner coordinate is b^dag). Its moments reproduce the normally ordered
// correlators, so |a_sig|^2 is the photon flux that clicks the SPAD.
// a_vac is the intracavity vacuum, an independent Ornstein-Uhlenbeck process
// with <|a_vac|^2> = 1/2, so a_sig + a_vac carries symmetric-ordered moments.
// The detected field is a_out = a_in - sqrt(2 kappa) a, whose vacuum is
// white, so the heterodyne record is
//
//   X_k = sqrt(2) Re[e^{-i theta_k} sqrt(eta_h) a_sig,k] + v_k,   v_k ~ N(0, 1/2).
//
// Per trajectory the pipeline is integrate -> herald -> heterodyne ->
// condition, each stage with its own counter-derived random stream, so the
// streaming simulate() and the stage-by-stage API give identical results.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "clickdyne/analytic.hpp"
#include "clickdyne/config.hpp"
#include "clickdyne/curve.hpp"
#include "clickdyne/error.hpp"
#include "clickdyne/linear_sde.hpp"
#include "clickdyne/model.hpp"

namespace clickdyne {

using cplx = std::complex<double>;

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

enum class LoPhaseMode { Fixed, Rotating };

inline LoPhaseMode parse_lo_phase_mode(const std::string& s) {
  if (s == "fixed") return LoPhaseMode::Fixed;
  if (s == "rotating") return LoPhaseMode::Rotating;
  throw Error(ErrorKind::Config, "lo_phase_mode must be fixed or rotating, got '" + s + "'");
}

inline std::string to_string(LoPhaseMode m) { return m == LoPhaseMode::Fixed ? "fixed" : "rotating"; }

struct SimConfig {
  SystemParams params;
  double dt = 0.0;        // sampling / integration step [s]
  double duration = 0.0;  // recorded length of each trajectory [s]
  std::size_t n_trajectories = 1;
  std::uint64_t seed = 1;
  double window = 0.0;  // half-width of the conditioning window [s]
  LoPhaseMode lo_phase_mode = LoPhaseMode::Fixed;
  double lo_phase = 0.0;  // theta_0 [rad]
  double burn_in = 0.0;   // discarded lead-in [s]; the initial state is already stationary

  // When set, eta_h is chosen so that eta_h <|a_sig|^2> equals this level
  // above vacuum. Otherwise eta_h = eta_mm * chain * kappa / V.
  std::optional<double> target_background;

  bool low_pass = false;      // apply H(w) = 1/(1 + i w/omega_co) to the record
  bool exclude_dark = false;  // drop dark-tagged heralds from the average
  std::size_t target_heralds = 0;  // stop once reached (0 = run all trajectories)
  std::size_t block_size = 4;      // trajectories per work unit
  unsigned threads = 0;            // 0 = hardware concurrency
  bool keep_heralds = false;       // return the herald list
};

inline KeyValues simulation_keys(const SimConfig& c) {
  using config_detail::format_number;
  KeyValues kv = {
      {"dt", format_number(c.dt)},
      {"duration", format_number(c.duration)},
      {"n_trajectories", std::to_string(c.n_trajectories)},
      {"seed", std::to_string(c.seed)},
      {"window", format_number(c.window)},
      {"lo_phase_mode", to_string(c.lo_phase_mode)},
      {"lo_phase", format_number(c.lo_phase)},
      {"burn_in", format_number(c.burn_in)},
  };
  if (c.target_background) kv.emplace_back("target_background", format_number(*c.target_background));
  kv.emplace_back("low_pass", c.low_pass ? "true" : "false");
  kv.emplace_back("exclude_dark", c.exclude_dark ? "true" : "false");
  kv.emplace_back("target_heralds", std::to_string(c.target_heralds));
  kv.emplace_back("block_size", std::to_string(c.block_size));
  return kv;
}

inline void apply_simulation_keys(SimConfig& c, const KeyValues& kv) {
  auto num = [](const std::string& k, const std::string& v) { return config_detail::parse_number(v, "[simulation] " + k); };
  auto count = [&](const std::string& k, const std::string& v) {
    const double x = num(k, v);
    if (x < 0.0 || x != std::floor(x) || x > 9.007199254740992e15) {
      throw Error(ErrorKind::Config, "[simulation] " + k + " must be a non-negative integer");
    }
    return static_cast<std::uint64_t>(x);
  };
  auto flag = [](const std::string& k, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error(ErrorKind::Config, "[simulation] " + k + " must be true or false");
  };
  for (const auto& [k, v] : kv) {
    if (k == "dt") c.dt = num(k, v);
    else if (k == "duration") c.duration = num(k, v);
    else if (k == "n_trajectories") c.n_trajectories = count(k, v);
    else if (k == "seed") {
      try {
        std::size_t pos = 0;
        if (v.empty() || v.front() == '-' || v.front() == '+') throw std::invalid_argument(v);
        c.seed = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw Error(ErrorKind::Config, "[simulation] seed must be an unsigned 64-bit integer");
      }
    }
    else if (k == "window") c.window = num(k, v);
    else if (k == "lo_phase_mode") c.lo_phase_mode = parse_lo_phase_mode(v);
    else if (k == "lo_phase") c.lo_phase = num(k, v);
    else if (k == "burn_in") c.burn_in = num(k, v);
    else if (k == "target_background") c.target_background = num(k, v);
    else if (k == "low_pass") c.low_pass = flag(k, v);
    else if (k == "exclude_dark") c.exclude_dark = flag(k, v);
    else if (k == "target_heralds") c.target_heralds = count(k, v);
    else if (k == "block_size") c.block_size = count(k, v);
    else if (k == "threads") c.threads = static_cast<unsigned>(count(k, v));
    else throw Error(ErrorKind::Config, "[simulation]: unknown key '" + k + "'");
  }
}

// ---------------------------------------------------------------------------
// Random streams

enum class Stream : std::uint64_t { Integrate = 1, Herald = 2, Heterodyne = 3 };

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 make_stream(std::uint64_t seed, std::size_t trajectory, Stream purpose) {
  const std::uint64_t s =
      splitmix64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(trajectory)) + static_cast<std::uint64_t>(purpose));
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------
// Signal model

/// Drift and diffusion of the normally ordered signal state
/// (a_sig, b_1..b_M) or (a_sig, b_1^dag..b_M^dag).
struct SignalModel {
  MatC drift;
  MatC diffusion;
  MatC stationary;       // stationary covariance <x x^dag>
  double occupation = 0;  // <|a_sig|^2> in steady state, exact within the linear model
};

inline SignalModel build_signal_model(const SystemParams& p) {
  const auto m = static_cast<Eigen::Index>(p.mechanics.size());
  const bool tms = p.interaction == InteractionKind::TwoModeSqueezer;
  SignalModel s;
  s.drift = MatC::Zero(m + 1, m + 1);
  s.diffusion = MatC::Zero(m + 1, m + 1);
  s.drift(0, 0) = -p.optical.kappa;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& mode = p.mechanics[static_cast<std::size_t>(i)];
    s.drift(0, i + 1) = cplx(0.0, -mode.g);
    s.drift(i + 1, 0) = cplx(0.0, tms ? mode.g : -mode.g);
    s.drift(i + 1, i + 1) = -cplx(mode.gamma, tms ? -mode.delta : mode.delta);
    s.diffusion(i + 1, i + 1) = 2.0 * mode.gamma * effective_occupation(p.interaction, mode.n_th);
  }
  s.stationary = stationary_covariance(s.drift, s.diffusion);
  s.occupation = s.stationary(0, 0).real();
  return s;
}

/// Weak-coupling intracavity occupation summed over modes.
inline double weak_occupation(const SystemParams& p) {
  double n = 0.0;
  for (const auto& m : p.mechanics) {
    n += effective_occupation(p.interaction, m.n_th) * m.g * m.g / (p.optical.kappa * (p.optical.kappa + m.gamma));
  }
  return n;
}

// ---------------------------------------------------------------------------
// Validation and derived sizes

inline void validate_sim_config(const SimConfig& c) {
  // The amplifier stability rule is enforced on the drift matrix instead,
  // where it applies to any number of modes.
  SystemParams relaxed = c.params;
  relaxed.interaction = InteractionKind::BeamSplitter;
  require_valid(relaxed);
  const auto& p = c.params;

  double fastest = p.optical.kappa, slowest = p.optical.kappa;
  for (const auto& m : p.mechanics) {
    fastest = std::max({fastest, m.gamma, m.g, std::abs(m.delta)});
    slowest = std::min(slowest, m.gamma);
  }
  if (!(c.dt > 0.0)) throw Error(ErrorKind::Config, "dt must be > 0");
  if (c.dt > 0.05 / fastest * (1.0 + 1e-12)) {
    throw Error(ErrorKind::Config, "dt must be <= 0.05/max(kappa, gamma, G, |delta|) = " +
                                       std::to_string(0.05 / fastest));
  }
  if (c.window < 5.0 / slowest * (1.0 - 1e-12)) {
    throw Error(ErrorKind::Config, "window must be >= 5/min(kappa, gamma) = " + std::to_string(5.0 / slowest));
  }
  if (c.n_trajectories < 1) throw Error(ErrorKind::Config, "n_trajectories must be >= 1");
  if (c.block_size < 1) throw Error(ErrorKind::Config, "block_size must be >= 1");
  if (!(c.burn_in >= 0.0)) throw Error(ErrorKind::Config, "burn_in must be >= 0");
  if (!(c.duration >= 2.0 * c.window + 1.0 / p.det.gate_rate)) {
    throw Error(ErrorKind::Config, "duration must cover two windows plus one gate period");
  }
  if (c.target_background && !(*c.target_background >= 0.0)) {
    throw Error(ErrorKind::Config, "target_background must be >= 0");
  }
}

struct SimGeometry {
  std::size_t n_samples = 0;
  std::size_t burn_in_steps = 0;
  std::size_t window_bins = 0;     // half-width in samples
  std::size_t gate_half_bins = 0;  // gate covers center +- gate_half_bins
  std::vector<std::size_t> gates;  // sample index of each eligible gate center
  std::vector<double> gate_times;

  std::size_t n_bins() const { return 2 * window_bins + 1; }
};

inline SimGeometry make_geometry(const SimConfig& c) {
  SimGeometry g;
  g.n_samples = static_cast<std::size_t>(std::floor(c.duration / c.dt + 0.5));
  g.burn_in_steps = static_cast<std::size_t>(std::floor(c.burn_in / c.dt + 0.5));
  g.window_bins = static_cast<std::size_t>(std::floor(c.window / c.dt + 0.5));
  g.gate_half_bins = static_cast<std::size_t>(std::floor(c.params.det.t_gate / (2.0 * c.dt) + 0.5));
  const std::size_t reach = std::max(g.window_bins, g.gate_half_bins);
  const double spacing = 1.0 / c.params.det.gate_rate;
  for (std::size_t j = 0;; ++j) {
    const double t = static_cast<double>(j) * spacing;
    const auto k = static_cast<std::size_t>(std::llround(t / c.dt));
    if (k + reach >= g.n_samples) break;
    if (k >= reach) {
      g.gates.push_back(k);
      g.gate_times.push_back(t);
    }
  }
  return g;
}

/// Heterodyne gain eta_h applied to a_sig in the detected quadrature.
inline double heterodyne_gain(const SimConfig& c, const SignalModel& model) {
  double eta_h;
  if (c.target_background) {
    eta_h = model.occupation > 0.0 ? *c.target_background / model.occupation : 0.0;
  } else {
    const auto& p = c.params;
    eta_h = p.eff.eta_mm * p.eff.heterodyne_chain() * p.optical.kappa / vacuum_noise_level(p.det);
  }
  if (!(eta_h >= 0.0 && eta_h <= 1.0)) {
    throw Error(ErrorKind::Config, "heterodyne gain eta_h = " + std::to_string(eta_h) + " outside [0, 1]");
  }
  return eta_h;
}

// ---------------------------------------------------------------------------
// Stage 1: integrate

struct Trajectory {
  std::size_t id = 0;
  std::vector<cplx> a_sig;              // normally ordered optical amplitude
  std::vector<cplx> a_vac;              // intracavity vacuum, symmetric ordering
  std::vector<std::vector<cplx>> mech;  // b_i, or b_i^dag for the two-mode squeezer

  cplx field(std::size_t k) const { return a_sig[k] + a_vac[k]; }
  /// Normally ordered output photon flux 2 kappa |a_sig|^2 (needs kappa).
  double output_flux(std::size_t k, double kappa) const { return 2.0 * kappa * std::norm(a_sig[k]); }
};

struct TrajectoryEnsemble {
  double dt = 0.0;
  std::vector<Trajectory> trajectories;
};

/// Precomputed propagators shared by all trajectories of a run.
struct Propagator {
  SignalModel model;
  std::size_t dim = 0;
  std::vector<cplx> f;        // row-major transition matrix
  std::vector<cplx> l;        // row-major noise factor
  std::vector<cplx> l0;       // row-major stationary factor
  double vac_decay = 0.0;     // e^{-kappa dt}
  double vac_noise = 0.0;     // sqrt((1 - e^{-2 kappa dt}) / 2)

  Propagator(const SystemParams& p, double dt) : model(build_signal_model(p)) {
    const auto step = discretize(model.drift, model.diffusion, dt);
    const MatC s0 = hermitian_factor(model.stationary);
    dim = static_cast<std::size_t>(model.drift.rows());
    auto flatten = [this](const MatC& m) {
      std::vector<cplx> v(dim * dim);
      for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) v[i * dim + j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      return v;
    };
    f = flatten(step.transition);
    l = flatten(step.noise_factor);
    l0 = flatten(s0);
    vac_decay = std::exp(-p.optical.kappa * dt);
    vac_noise = std::sqrt(-std::expm1(-2.0 * p.optical.kappa * dt) / 2.0);
  }
};

inline Trajectory integrate_trajectory(const SimConfig& c, const SimGeometry& g, const Propagator& prop, std::size_t id) {
  auto rng = make_stream(c.seed, id, Stream::Integrate);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = prop.dim;
  auto cnormal = [&] {
    const double re = normal(rng);
    const double im = normal(rng);
    return cplx(re, im) * kInvSqrt2;
  };

  std::vector<cplx> x(d), z(d), y(d);
  for (auto& zi : z) zi = cnormal();
  for (std::size_t i = 0; i < d; ++i) {
    cplx acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += prop.l0[i * d + j] * z[j];
    x[i] = acc;
  }
  cplx vac = cnormal() * kInvSqrt2;

  auto step = [&] {
    for (auto& zi : z) zi = cnormal();
    for (std::size_t i = 0; i < d; ++i) {
      cplx acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += prop.f[i * d + j] * x[j] + prop.l[i * d + j] * z[j];
      y[i] = acc;
    }
    x.swap(y);
    vac = prop.vac_decay * vac + prop.vac_noise * cnormal();
  };

  for (std::size_t k = 0; k < g.burn_in_steps; ++k) step();

  Trajectory t;
  t.id = id;
  t.a_sig.resize(g.n_samples);
  t.a_vac.resize(g.n_samples);
  t.mech.assign(d - 1, std::vector<cplx>(g.n_samples));
  for (std::size_t k = 0; k < g.n_samples; ++k) {
    t.a_sig[k] = x[0];
    t.a_vac[k] = vac;
    for (std::size_t i = 1; i < d; ++i) t.mech[i - 1][k] = x[i];
    if (k + 1 < g.n_samples) step();
  }
  return t;
}

inline TrajectoryEnsemble integrate(const SimConfig& c) {
  validate_sim_config(c);
  const SimGeometry g = make_geometry(c);
  const Propagator prop(c.params, c.dt);
  TrajectoryEnsemble e;
  e.dt = c.dt;
  for (std::size_t i = 0; i < c.n_trajectories; ++i) e.trajectories.push_back(integrate_trajectory(c, g, prop, i));
  return e;
}

// ---------------------------------------------------------------------------
// Stage 2: herald

enum class HeraldKind { Signal, Dark };

struct HeraldRecord {
  std::size_t trajectory = 0;
  std::size_t gate = 0;    // index into SimGeometry::gates
  std::size_t sample = 0;  // sample index of the gate center
  double t0 = 0.0;         // gate center [s]
  HeraldKind kind = HeraldKind::Signal;
};

inline constexpr double kMaxGateProbability = 0.1;

struct HeraldTally {
  std::size_t gates = 0;
  std::size_t signal = 0;
  std::size_t dark = 0;
  double expected_signal = 0.0;
  double expected_dark = 0.0;
};

/// Mean click probability per gate, signal plus dark.
inline double expected_click_probability(const SimConfig& c, double occupation) {
  const auto& p = c.params;
  return p.eff.eta_spad * p.eff.eta_det() * 2.0 * p.optical.kappa * occupation * p.det.t_gate +
         p.det.dark_rate * p.det.t_gate;
}

inline void require_sparse_clicks(const SimConfig& c, double occupation) {
  const double p = expected_click_probability(c, occupation);
  if (p > kMaxGateProbability) {
    throw Error(ErrorKind::GateProbabilityOverflow,
                "mean click probability " + std::to_string(p) + " per gate exceeds 0.1");
  }
}

inline std::vector<HeraldRecord> herald_trajectory(const Trajectory& t, const SimConfig& c, const SimGeometry& g,
                                                   HeraldTally* tally = nullptr) {
  const auto& p = c.params;
  const double gain = p.eff.eta_spad * p.eff.eta_det() * 2.0 * p.optical.kappa * p.det.t_gate;
  const double p_dark = p.det.dark_rate * p.det.t_gate;
  auto rng = make_stream(c.seed, t.id, Stream::Herald);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  std::vector<HeraldRecord> out;
  for (std::size_t j = 0; j < g.gates.size(); ++j) {
    const std::size_t k = g.gates[j];
    double intensity = 0.0;
    for (std::size_t i = k - g.gate_half_bins; i <= k + g.gate_half_bins; ++i) intensity += std::norm(t.a_sig[i]);
    intensity /= static_cast<double>(2 * g.gate_half_bins + 1);
    const double p_signal = std::min(gain * intensity, 1.0 - p_dark);
    const double u = uniform(rng);
    if (tally) {
      ++tally->gates;
      tally->expected_signal += p_signal;
      tally->expected_dark += p_dark;
    }
    std::optional<HeraldKind> kind;
    if (u < p_signal) kind = HeraldKind::Signal;
    else if (u < p_signal + p_dark) kind = HeraldKind::Dark;
    if (!kind) continue;
    if (tally) ++(*kind == HeraldKind::Signal ? tally->signal : tally->dark);
    out.push_back({t.id, j, k, g.gate_times[j], *kind});
  }
  return out;
}

inline std::vector<HeraldRecord> herald(const TrajectoryEnsemble& e, const SimConfig& c) {
  require_sparse_clicks(c, build_signal_model(c.params).occupation);
  const SimGeometry g = make_geometry(c);
  std::vector<HeraldRecord> out;
  for (const auto& t : e.trajectories) {
    auto h = herald_trajectory(t, c, g);
    out.insert(out.end(), h.begin(), h.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage 3: heterodyne

inline std::vector<double> heterodyne_trajectory(const Trajectory& t, const SimConfig& c, double eta_h) {
  auto rng = make_stream(c.seed, t.id, Stream::Heterodyne);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& det = c.params.det;
  const std::size_t n = t.a_sig.size();

  // With the low-pass on, the white vacuum loses a factor (1-r)/(1+r) of its
  // variance while the in-band signal passes; the output is rescaled so the
  // vacuum stays at 1/2 and the signal gain is pre-divided to compensate.
  const double r = c.low_pass ? std::exp(-det.omega_co * c.dt) : 0.0;
  const double boost = c.low_pass ? std::sqrt((1.0 + r) / (1.0 - r)) : 1.0;
  const double amp = std::sqrt(eta_h) / boost;

  std::vector<double> x(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double theta = c.lo_phase_mode == LoPhaseMode::Rotating
                             ? c.lo_phase + det.omega_het * c.dt * static_cast<double>(k)
                             : c.lo_phase;
    const cplx rot = std::polar(1.0, -theta);
    x[k] = std::numbers::sqrt2 * amp * (rot * t.a_sig[k]).real() + normal(rng) * kInvSqrt2;
  }
  if (c.low_pass && n > 0) {
    double y = x[0] / boost;
    x[0] = boost * y;
    for (std::size_t k = 1; k < n; ++k) {
      y = r * y + (1.0 - r) * x[k];
      x[k] = boost * y;
    }
  }
  return x;
}

inline std::vector<std::vector<double>> heterodyne(const TrajectoryEnsemble& e, const SimConfig& c) {
  const Propagator prop(c.params, c.dt);
  const double eta_h = heterodyne_gain(c, prop.model);
  std::vector<std::vector<double>> out;
  for (const auto& t : e.trajectories) out.push_back(heterodyne_trajectory(t, c, eta_h));
  return out;
}

// ---------------------------------------------------------------------------
// Stage 4: condition

struct CurveAccumulator {
  std::vector<double> sum;
  std::vector<double> sum_sq;
  std::size_t count = 0;

  explicit CurveAccumulator(std::size_t bins = 0) : sum(bins, 0.0), sum_sq(bins, 0.0) {}

  void add(const std::vector<double>& trace, std::size_t center, std::size_t half) {
    for (std::size_t b = 0; b < sum.size(); ++b) {
      const double v = trace[center - half + b];
      sum[b] += v * v;
      sum_sq[b] += v * v * v * v;
    }
    ++count;
  }

  void merge(const CurveAccumulator& o) {
    for (std::size_t b = 0; b < sum.size(); ++b) {
      sum[b] += o.sum[b];
      sum_sq[b] += o.sum_sq[b];
    }
    count += o.count;
  }

  ConditionedCurve finalize(double dt, std::size_t half) const {
    ConditionedCurve c;
    c.n_heralds = count;
    const double n = static_cast<double>(count);
    for (std::size_t b = 0; b < sum.size(); ++b) {
      c.tau.push_back((static_cast<double>(b) - static_cast<double>(half)) * dt);
      const double m = count ? sum[b] / n : std::numeric_limits<double>::quiet_NaN();
      c.mean.push_back(m);
      const double var = count > 1 ? std::max(0.0, (sum_sq[b] - n * m * m) / (n - 1.0)) : std::numeric_limits<double>::quiet_NaN();
      c.se.push_back(std::sqrt(var / n));
    }
    return c;
  }
};

inline bool use_herald(const HeraldRecord& h, const SimConfig& c) {
  return !(c.exclude_dark && h.kind == HeraldKind::Dark);
}

/// Averages X^2 over windows centered on each herald.
inline ConditionedCurve condition(const std::vector<std::vector<double>>& traces,
                                  const std::vector<HeraldRecord>& heralds, const SimConfig& c) {
  const SimGeometry g = make_geometry(c);
  CurveAccumulator acc(g.n_bins());
  for (const auto& h : heralds) {
    if (use_herald(h, c)) acc.add(traces.at(h.trajectory), h.sample, g.window_bins);
  }
  return acc.finalize(c.dt, g.window_bins);
}

// ---------------------------------------------------------------------------
// Streaming driver

struct SimStats {
  std::size_t trajectories = 0;
  std::size_t gates = 0;
  std::size_t signal_heralds = 0;
  std::size_t dark_heralds = 0;
  double expected_signal = 0.0;  // sum of per-gate signal click probabilities
  double expected_dark = 0.0;
  double eta_h = 0.0;
  double occupation_exact = 0.0;  // stationary <|a_sig|^2> of the linear model
  double occupation_weak = 0.0;   // weak-coupling value
  double unconditioned_mean = 0.0;  // time-averaged X^2, batch means over trajectories
  double unconditioned_se = 0.0;
  double intensity_mean = 0.0;  // time-averaged |a_sig|^2
  double intensity_se = 0.0;
  std::vector<std::string> warnings;

  double clicks_per_gate() const { return gates ? double(signal_heralds + dark_heralds) / double(gates) : 0.0; }
  double dark_fraction() const {
    const auto n = signal_heralds + dark_heralds;
    return n ? double(dark_heralds) / double(n) : 0.0;
  }
  double background_exact() const { return eta_h * occupation_exact; }
  double background_weak() const { return eta_h * occupation_weak; }
};

struct SimResult {
  ConditionedCurve curve;
  SimStats stats;
  std::vector<HeraldRecord> heralds;
};

namespace stochastic_detail {

struct BlockResult {
  CurveAccumulator acc;
  HeraldTally tally;
  double x2_sum = 0.0, x2_sq = 0.0;  // per-trajectory means and their squares
  double i_sum = 0.0, i_sq = 0.0;
  std::size_t trajectories = 0;
  std::size_t heralds_used = 0;
  std::vector<HeraldRecord> heralds;

  explicit BlockResult(std::size_t bins) : acc(bins) {}
};

inline BlockResult run_block(const SimConfig& c, const SimGeometry& g, const Propagator& prop, double eta_h,
                             std::size_t first, std::size_t last) {
  BlockResult r(g.n_bins());
  for (std::size_t id = first; id < last; ++id) {
    const Trajectory t = integrate_trajectory(c, g, prop, id);
    const auto hs = herald_trajectory(t, c, g, &r.tally);
    const auto x = heterodyne_trajectory(t, c, eta_h);
    for (const auto& h : hs) {
      if (!use_herald(h, c)) continue;
      r.acc.add(x, h.sample, g.window_bins);
      ++r.heralds_used;
    }
    double x2 = 0.0, in = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      x2 += x[k] * x[k];
      in += std::norm(t.a_sig[k]);
    }
    x2 /= static_cast<double>(x.size());
    in /= static_cast<double>(x.size());
    r.x2_sum += x2;
    r.x2_sq += x2 * x2;
    r.i_sum += in;
    r.i_sq += in * in;
    ++r.trajectories;
    if (c.keep_heralds) r.heralds.insert(r.heralds.end(), hs.begin(), hs.end());
  }
  return r;
}

inline void batch_stats(double sum, double sq, std::size_t n, double& mean, double& se) {
  const double dn = static_cast<double>(n);
  mean = n ? sum / dn : 0.0;
  se = n > 1 ? std::sqrt(std::max(0.0, (sq - dn * mean * mean) / (dn - 1.0)) / dn) : 0.0;
}

}  // namespace stochastic_detail

/// integrate -> herald -> heterodyne -> condition without keeping the
/// trajectories. Blocks of trajectories run in parallel and are merged in
/// index order, so the result does not depend on the thread count.
inline SimResult simulate(const SimConfig& c) {
  using namespace stochastic_detail;
  validate_sim_config(c);
  const SimGeometry g = make_geometry(c);
  const Propagator prop(c.params, c.dt);
  const double eta_h = heterodyne_gain(c, prop.model);
  require_sparse_clicks(c, prop.model.occupation);

  const std::size_t n_blocks = (c.n_trajectories + c.block_size - 1) / c.block_size;
  unsigned threads = c.threads ? c.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n_blocks));

  BlockResult total(g.n_bins());
  bool done = false;
  for (std::size_t wave = 0; wave < n_blocks && !done; wave += threads) {
    const std::size_t wave_end = std::min(n_blocks, wave + threads);
    std::vector<std::optional<BlockResult>> results(wave_end - wave);
    std::vector<std::exception_ptr> errors(wave_end - wave);
    std::vector<std::thread> pool;
    for (std::size_t b = wave; b < wave_end; ++b) {
      pool.emplace_back([&, b] {
        try {
          const std::size_t first = b * c.block_size;
          const std::size_t last = std::min(c.n_trajectories, first + c.block_size);
          results[b - wave] = run_block(c, g, prop, eta_h, first, last);
        } catch (...) {
          errors[b - wave] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (std::size_t i = 0; i < results.size() && !done; ++i) {
      if (errors[i]) std::rethrow_exception(errors[i]);
      auto& r = *results[i];
      total.acc.merge(r.acc);
      total.tally.gates += r.tally.gates;
      total.tally.signal += r.tally.signal;
      total.tally.dark += r.tally.dark;
      total.tally.expected_signal += r.tally.expected_signal;
      total.tally.expected_dark += r.tally.expected_dark;
      total.x2_sum += r.x2_sum;
      total.x2_sq += r.x2_sq;
      total.i_sum += r.i_sum;
      total.i_sq += r.i_sq;
      total.trajectories += r.trajectories;
      total.heralds_used += r.heralds_used;
      total.heralds.insert(total.heralds.end(), r.heralds.begin(), r.heralds.end());
      if (c.target_heralds && total.heralds_used >= c.target_heralds) done = true;
    }
  }

  SimResult out;
  out.curve = total.acc.finalize(c.dt, g.window_bins);
  auto& s = out.stats;
  s.trajectories = total.trajectories;
  s.gates = total.tally.gates;
  s.signal_heralds = total.tally.signal;
  s.dark_heralds = total.tally.dark;
  s.expected_signal = total.tally.expected_signal;
  s.expected_dark = total.tally.expected_dark;
  s.eta_h = eta_h;
  s.occupation_exact = prop.model.occupation;
  s.occupation_weak = weak_occupation(c.params);
  batch_stats(total.x2_sum, total.x2_sq, total.trajectories, s.unconditioned_mean, s.unconditioned_se);
  batch_stats(total.i_sum, total.i_sq, total.trajectories, s.intensity_mean, s.intensity_se);
  if (out.curve.n_heralds < 100) {
    s.warnings.push_back("only " + std::to_string(out.curve.n_heralds) + " heralds; standard errors are unreliable");
  }
  if (c.target_heralds && total.heralds_used < c.target_heralds) {
    s.warnings.push_back("target_heralds not reached with n_trajectories = " + std::to_string(c.n_trajectories));
  }
  out.heralds = std::move(total.heralds);
  return out;
}

}  // namespace clickdyne
