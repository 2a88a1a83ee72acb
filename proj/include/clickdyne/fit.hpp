#pragma once

// Weighted least-squares fit of a conditioned curve to
//
//   m(tau) = V + B [1 + (D - 1) W(tau; kappa, gamma)^2]
//
// with kappa held fixed. V and B are not separately identifiable from the
// shape alone, so V is either pinned to the known vacuum level or tied to it
// through a Gaussian prior.

#include <Eigen/Dense>
#include <unsupported/Eigen/LevenbergMarquardt>
#include <unsupported/Eigen/NumericalDiff>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "clickdyne/analytic.hpp"
#include "clickdyne/curve.hpp"
#include "clickdyne/error.hpp"

namespace clickdyne {

inline double fit_model(double tau, double kappa, double d, double gamma, double b, double v) {
  const double w = envelope(kappa, gamma, tau);
  return v + b * (1.0 + (d - 1.0) * w * w);
}

struct FitOptions {
  std::optional<double> gamma_guess;  // defaults to kappa
  double vacuum = 0.5;
  double vacuum_se = 0.0;  // 0 pins V = vacuum
  std::size_t n_bootstrap = 200;
  std::uint64_t seed = 1;
  std::size_t max_iterations = 4000;
  unsigned threads = 0;
};

struct Interval {
  double low = std::numeric_limits<double>::quiet_NaN();
  double high = std::numeric_limits<double>::quiet_NaN();
};

struct FitResult {
  bool degenerate = false;
  double d = std::numeric_limits<double>::quiet_NaN();
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double background = std::numeric_limits<double>::quiet_NaN();
  double vacuum = std::numeric_limits<double>::quiet_NaN();
  Interval d_ci, gamma_ci, background_ci, vacuum_ci;  // bootstrap 95% percentile intervals
  double d_se = std::numeric_limits<double>::quiet_NaN();
  double gamma_se = std::numeric_limits<double>::quiet_NaN();
  double chi2 = std::numeric_limits<double>::quiet_NaN();
  std::size_t dof = 0;
  double reduced_chi2 = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> residuals;  // (y - m) / se
  std::size_t n_bootstrap = 0;
  std::size_t block_length = 1;  // residual block length used by the bootstrap
  double feature_significance = 0.0;  // (peak - tail) / combined SE
};

struct DoublingEstimate {
  double d_hat = 0.0;
  double se = 0.0;
  double peak = 0.0;
  double tail = 0.0;
};

// ---------------------------------------------------------------------------
// Model-free estimator

namespace fit_detail {

struct Levels {
  double peak, peak_se, tail, tail_se;
};

/// tau = 0 bin and the mean of the outer quarter of the grid on each side.
inline Levels levels(const ConditionedCurve& c) {
  if (c.size() < 3) throw Error(ErrorKind::Config, "curve needs at least 3 points");
  const std::size_t i0 = c.center();
  double reach = 0.0;
  for (double t : c.tau) reach = std::max(reach, std::abs(t));
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (std::abs(c.tau[i]) >= 0.75 * reach) {
      s += c.mean[i];
      s2 += c.se[i] * c.se[i];
      ++n;
    }
  }
  return {c.mean[i0], c.se[i0], s / double(n), std::sqrt(s2) / double(n)};
}

inline double significance(const Levels& l) {
  const double se = std::hypot(l.peak_se, l.tail_se);
  const double f = l.peak - l.tail;
  return se > 0.0 ? f / se : (f > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
}

inline constexpr double kMinSignificance = 2.0;

}  // namespace fit_detail

/// D = (peak - V)/(tail - V), for levels already measured above vacuum.
inline double doubling_ratio(double peak_above_vacuum, double tail_above_vacuum) {
  return peak_above_vacuum / tail_above_vacuum;
}

inline DoublingEstimate doubling_estimate(const ConditionedCurve& c, double vacuum = 0.5, double vacuum_se = 0.0) {
  const auto l = fit_detail::levels(c);
  if (fit_detail::significance(l) < fit_detail::kMinSignificance) {
    throw Error(ErrorKind::DegenerateCurve, "feature at tau = 0 is below 2 standard errors");
  }
  const double p = l.peak - vacuum, t = l.tail - vacuum;
  DoublingEstimate e{p / t, 0.0, l.peak, l.tail};
  const double dp = l.peak_se / t;
  const double dt = p * l.tail_se / (t * t);
  const double dv = vacuum_se * (l.peak - l.tail) / (t * t);
  e.se = std::sqrt(dp * dp + dt * dt + dv * dv);
  return e;
}

// ---------------------------------------------------------------------------
// Optimizers

namespace fit_detail {

struct Problem {
  const std::vector<double>* tau;
  const std::vector<double>* y;
  const std::vector<double>* se;
  double kappa;
  double vacuum;
  double vacuum_se;

  bool free_vacuum() const { return vacuum_se > 0.0; }
  int n_params() const { return free_vacuum() ? 4 : 3; }
  int n_residuals() const { return static_cast<int>(y->size()) + (free_vacuum() ? 1 : 0); }

  // theta = (D, ln gamma, B[, V])
  void residuals(const Eigen::VectorXd& th, Eigen::VectorXd& r) const {
    const double v = free_vacuum() ? th[3] : vacuum;
    const double gamma = std::exp(th[1]);
    for (std::size_t i = 0; i < y->size(); ++i) {
      r[static_cast<Eigen::Index>(i)] = ((*y)[i] - fit_model((*tau)[i], kappa, th[0], gamma, th[2], v)) / (*se)[i];
    }
    if (free_vacuum()) r[r.size() - 1] = (v - vacuum) / vacuum_se;
  }

  double chi2(const Eigen::VectorXd& th) const {
    Eigen::VectorXd r(n_residuals());
    residuals(th, r);
    const double c = r.squaredNorm();
    return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
  }
};

struct Functor : Eigen::DenseFunctor<double> {
  const Problem* p;
  Functor(const Problem& prob) : Eigen::DenseFunctor<double>(prob.n_params(), prob.n_residuals()), p(&prob) {}
  int operator()(const InputType& x, ValueType& f) const {
    p->residuals(x, f);
    return 0;
  }
};

/// Plain Nelder-Mead with standard coefficients.
inline Eigen::VectorXd nelder_mead(const Problem& p, Eigen::VectorXd x0, const Eigen::VectorXd& step,
                                   std::size_t max_iter, bool& converged) {
  const int n = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> s(n + 1, x0);
  std::vector<double> f(n + 1);
  for (int i = 0; i < n; ++i) s[i + 1][i] += step[i];
  for (int i = 0; i <= n; ++i) f[i] = p.chi2(s[i]);
  std::vector<int> idx(n + 1);
  converged = false;
  for (std::size_t it = 0; it < max_iter; ++it) {
    for (int i = 0; i <= n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return f[a] < f[b]; });
    const int best = idx[0], worst = idx[n], second = idx[n - 1];
    if (std::abs(f[worst] - f[best]) <= 1e-12 * (std::abs(f[best]) + 1e-12)) {
      converged = true;
      break;
    }
    Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) c += s[idx[i]];
    c /= n;
    const Eigen::VectorXd xr = c + (c - s[worst]);
    const double fr = p.chi2(xr);
    if (fr < f[best]) {
      const Eigen::VectorXd xe = c + 2.0 * (c - s[worst]);
      const double fe = p.chi2(xe);
      if (fe < fr) s[worst] = xe, f[worst] = fe;
      else s[worst] = xr, f[worst] = fr;
    } else if (fr < f[second]) {
      s[worst] = xr, f[worst] = fr;
    } else {
      const bool outside = fr < f[worst];
      const Eigen::VectorXd xc = outside ? Eigen::VectorXd(c + 0.5 * (xr - c)) : Eigen::VectorXd(c + 0.5 * (s[worst] - c));
      const double fc = p.chi2(xc);
      if (fc < std::min(fr, f[worst])) {
        s[worst] = xc, f[worst] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          s[idx[i]] = s[best] + 0.5 * (s[idx[i]] - s[best]);
          f[idx[i]] = p.chi2(s[idx[i]]);
        }
      }
    }
  }
  const auto it = std::min_element(f.begin(), f.end());
  return s[static_cast<std::size_t>(it - f.begin())];
}

struct Optimum {
  Eigen::VectorXd theta;
  double chi2 = std::numeric_limits<double>::infinity();
  bool converged = false;
};

inline Optimum refine(const Problem& p, Eigen::VectorXd x, std::size_t max_iter) {
  Functor f(p);
  Eigen::NumericalDiff<Functor, Eigen::Central> nd(f);
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<Functor, Eigen::Central>> lm(nd);
  lm.setMaxfev(static_cast<Eigen::Index>(max_iter));
  lm.setFtol(1e-15);
  lm.setXtol(1e-15);
  const auto status = lm.minimize(x);
  Optimum o{x, p.chi2(x), status != Eigen::LevenbergMarquardtSpace::TooManyFunctionEvaluation &&
                              status != Eigen::LevenbergMarquardtSpace::ImproperInputParameters};
  return o;
}

inline Optimum multistart(const Problem& p, double gamma_guess, double b0, std::size_t max_iter) {
  Optimum best;
  bool any_converged = false;
  for (double factor : {0.2, 1.0, 5.0}) {
    Eigen::VectorXd x0(p.n_params());
    x0 << 2.0, std::log(factor * gamma_guess), b0;
    if (p.free_vacuum()) x0[3] = p.vacuum;
    Eigen::VectorXd step(p.n_params());
    step << 0.5, 0.5, 0.2 * std::max(std::abs(b0), 1e-3);
    if (p.free_vacuum()) step[3] = std::max(p.vacuum_se, 1e-3);
    bool nm_ok = false;
    const Eigen::VectorXd xs = nelder_mead(p, x0, step, max_iter, nm_ok);
    Optimum o = refine(p, xs, max_iter);
    if (!(o.chi2 <= p.chi2(xs))) o = {xs, p.chi2(xs), nm_ok};
    any_converged = any_converged || o.converged;
    if (o.chi2 < best.chi2) best = o;
  }
  best.converged = best.converged || any_converged;
  return best;
}

inline Interval percentile_interval(std::vector<double> v, double estimate) {
  std::sort(v.begin(), v.end());
  auto q = [&](double f) {
    const double pos = f * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {std::min(q(0.025), estimate), std::max(q(0.975), estimate)};
}

/// Moving-block length n^(1/3), rounded up.
inline std::size_t block_length(std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::cbrt(double(n)))));
}

inline double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= double(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace fit_detail

inline FitResult fit_curve(const ConditionedCurve& curve, double fixed_kappa, const FitOptions& opt = {}) {
  using namespace fit_detail;
  if (!(fixed_kappa > 0.0)) throw Error(ErrorKind::Config, "kappa must be > 0");
  if (curve.size() < 20) throw Error(ErrorKind::Config, "fit needs at least 20 tau points");
  for (double s : curve.se) {
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorKind::Config, "standard errors must be positive");
  }
  const double gamma_guess = opt.gamma_guess.value_or(fixed_kappa);
  if (!(gamma_guess > 0.0)) throw Error(ErrorKind::Config, "gamma_guess must be > 0");
  const auto [tmin, tmax] = std::minmax_element(curve.tau.begin(), curve.tau.end());
  const double need = 5.0 / gamma_guess * (1.0 - 1e-9);
  if (-*tmin < need || *tmax < need) {
    throw Error(ErrorKind::Config, "curve must span at least 5/gamma_guess on each side of tau = 0");
  }

  FitResult res;
  const auto lv = levels(curve);
  res.feature_significance = significance(lv);
  if (res.feature_significance < kMinSignificance) {
    res.degenerate = true;
    return res;
  }

  const Problem prob{&curve.tau, &curve.mean, &curve.se, fixed_kappa, opt.vacuum, opt.vacuum_se};
  const double b0 = lv.tail - opt.vacuum;
  const Optimum best = multistart(prob, gamma_guess, b0, opt.max_iterations);
  if (!best.converged) throw Error(ErrorKind::NonConvergence, "fit did not converge within the iteration cap");

  auto unpack = [&](const Eigen::VectorXd& th, double& d, double& g, double& b, double& v) {
    d = th[0];
    g = std::exp(th[1]);
    b = th[2];
    v = prob.free_vacuum() ? th[3] : opt.vacuum;
  };
  unpack(best.theta, res.d, res.gamma, res.background, res.vacuum);

  Eigen::VectorXd r(prob.n_residuals());
  prob.residuals(best.theta, r);
  res.residuals.assign(r.data(), r.data() + curve.size());
  res.chi2 = 0.0;
  for (double x : res.residuals) res.chi2 += x * x;
  res.dof = curve.size() - 3;
  res.reduced_chi2 = res.chi2 / double(res.dof);

  // Moving-block residual bootstrap around the best fit; neighbouring lag
  // bins share trajectories, so residuals are resampled in contiguous runs.
  const std::size_t nb = opt.n_bootstrap;
  res.n_bootstrap = nb;
  const std::size_t block = fit_detail::block_length(curve.size());
  res.block_length = block;
  if (nb == 0) return res;
  std::vector<double> fitted(curve.size());
  for (std::size_t i = 0; i < curve.size(); ++i) {
    fitted[i] = fit_model(curve.tau[i], fixed_kappa, res.d, res.gamma, res.background, res.vacuum);
  }
  std::vector<double> bd(nb), bg(nb), bb(nb), bv(nb);
  auto replicate = [&](std::size_t k) {
    std::mt19937_64 rng(opt.seed * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL * (k + 1));
    std::uniform_int_distribution<std::size_t> pick(0, curve.size() - block);
    std::vector<double> y(curve.size());
    for (std::size_t i = 0; i < curve.size();) {
      const std::size_t start = pick(rng);
      for (std::size_t j = 0; j < block && i < curve.size(); ++j, ++i) {
        y[i] = fitted[i] + curve.se[i] * res.residuals[start + j];
      }
    }
    const Problem p{&curve.tau, &y, &curve.se, fixed_kappa, opt.vacuum, opt.vacuum_se};
    const Optimum o = refine(p, best.theta, opt.max_iterations);
    unpack(o.theta, bd[k], bg[k], bb[k], bv[k]);
  };
  unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, nb));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t k = t; k < nb; k += threads) replicate(k);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  res.d_ci = percentile_interval(bd, res.d);
  res.gamma_ci = percentile_interval(bg, res.gamma);
  res.background_ci = percentile_interval(bb, res.background);
  res.vacuum_ci = percentile_interval(bv, res.vacuum);
  res.d_se = sample_sd(bd);
  res.gamma_se = sample_sd(bg);
  return res;
}

}  // namespace clickdyne
