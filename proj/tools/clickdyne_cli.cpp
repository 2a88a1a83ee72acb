// clickdyne command-line tool: oracle | analytic | multimode | simulate | fit.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "clickdyne/clickdyne.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace clickdyne;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  bool json = false;
};

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Config, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Digest of the content in the form git uses for blobs.
std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorKind::Config, "cannot create output directory '" + dir + "': " + ec.message());
  }

  std::string write(const std::string& name, const std::string& content) {
    const fs::path path = dir_ / name;
    std::ofstream f(path, std::ios::binary);
    if (!f || !(f << content)) throw Error(ErrorKind::Config, "cannot write '" + path.string() + "'");
    digests_[name] = git_blob_sha1(content);
    return path.string();
  }

  const json& digests() const { return digests_; }

 private:
  fs::path dir_;
  json digests_ = json::object();
};

void emit(const Globals& g, const json& summary, const std::string& text) {
  if (g.json) {
    std::cout << summary.dump(2) << '\n';
  } else {
    std::cout << text;
  }
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

json interval(const Interval& i) { return json::array({i.low, i.high}); }

ConfigDocument require_config(const Globals& g) {
  if (g.config.empty()) throw Error(ErrorKind::Config, "--config PATH is required");
  return load_config(g.config);
}

std::vector<double> tau_grid(double tau_max, std::size_t points) {
  if (!(tau_max > 0.0)) throw Error(ErrorKind::Config, "--tau-max must be > 0");
  if (points < 2) throw Error(ErrorKind::Config, "--points must be >= 2");
  return linspace(-tau_max, tau_max, points);
}

double slowest_rate(const SystemParams& p) {
  double r = p.optical.kappa;
  for (const auto& m : p.mechanics) r = std::min(r, m.gamma);
  return r;
}

json findings_json(const ValidationReport& r) {
  json out = json::array();
  for (const auto& f : r.findings) {
    if (f.severity == Severity::Pass) continue;
    out.push_back({{"field", f.field}, {"severity", std::string(to_string(f.severity))}, {"message", f.message}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// oracle

struct OracleArgs {
  std::optional<double> n_bar;
  std::string op = "subtract";
  double tol = kDefaultTruncationTol;
  bool closed_form = false;
};

int cmd_oracle(const Globals& g, const OracleArgs& a) {
  double n_bar;
  if (a.n_bar) {
    n_bar = *a.n_bar;
  } else if (!g.config.empty()) {
    n_bar = load_config(g.config).params.mode().n_th;
  } else {
    throw Error(ErrorKind::Config, "oracle needs --n-bar or --config");
  }
  ThermalHeraldOptions opt;
  opt.truncation_tol = a.tol;
  opt.force_closed_form = a.closed_form;
  const auto s = herald_thermal(n_bar, parse_herald_op(a.op), opt);

  json j = {{"n_bar_in", s.n_bar_in},
            {"n_bar_out", s.n_bar_out},
            {"herald_weight", s.herald_weight},
            {"truncation_mass", s.truncation_mass},
            {"n_max", s.n_max},
            {"method", s.closed_form ? "closed_form" : "fock"}};
  emit(g, j,
       a.op + ": n_bar " + fmt(s.n_bar_in, "%.10g") + " -> " + fmt(s.n_bar_out, "%.10g") + "  (herald weight " +
           fmt(s.herald_weight) + ", truncation mass " + fmt(s.truncation_mass) + ", " +
           (s.closed_form ? std::string("closed form") : "n_max " + std::to_string(s.n_max)) + ")\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// analytic / multimode

struct AnalyticArgs {
  std::optional<double> tau_max;
  std::size_t points = 801;
  std::optional<double> eta;
  bool multimode = false;
};

json steady_state_json(InteractionKind kind, const SystemParams& p) {
  json j = {{"n_th", p.mode().n_th}};
  try {
    j["weak_expansion"] = steady_state_occupation(kind, p, SteadyStateMethod::WeakExpansion);
    j["exact_integral"] = steady_state_occupation(kind, p, SteadyStateMethod::ExactIntegral);
  } catch (const Error& e) {
    j["error"] = e.what();
  }
  return j;
}

json detection_json(const SystemParams& p) {
  const auto r = detection_rates(p);
  return {{"eta_det", p.eff.eta_det()},
          {"eta_spad_eta_det", p.eff.eta_spad * p.eff.eta_det()},
          {"r_det_per_s", r.r_det},
          {"n_det_per_gate", r.n_det_per_gate},
          {"count_rate_per_s", r.expected_count_rate}};
}

int run_multimode(const Globals& g, const ConfigDocument& doc, const AnalyticArgs& a, const char* file) {
  const auto& p = doc.params;
  const auto report = validate(p);
  if (!report.ok()) throw Error(ErrorKind::Config, report.summary());
  const double scale =
      a.eta ? *a.eta : p.eff.eta_mm * p.eff.heterodyne_chain() * p.optical.kappa / vacuum_noise_level(p.det);
  if (!(scale >= 0.0)) throw Error(ErrorKind::Config, "--eta must be >= 0");
  const auto taus = tau_grid(a.tau_max.value_or(8.0 / slowest_rate(p)), a.points);

  std::ostringstream csv;
  csv << "tau_s,total,vacuum,background,feature,fringe\n";
  std::vector<double> fringe;
  for (double t : taus) {
    const auto v = multimode_variance(p.interaction, p.mechanics, p.optical.kappa, t, scale);
    fringe.push_back(v.fringe);
    csv << format_sci(t) << ',' << format_sci(v.total) << ',' << format_sci(v.vacuum) << ','
        << format_sci(v.background) << ',' << format_sci(v.feature) << ',' << format_sci(v.fringe) << '\n';
  }
  OutputDir out(g.out);
  const auto path = out.write(file, csv.str());

  const auto v0 = multimode_variance(p.interaction, p.mechanics, p.optical.kappa, 0.0, scale);
  std::vector<double> pos;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (taus[i] >= 0.0) pos.push_back(taus[i]);
  }
  std::vector<double> fr_pos(fringe.end() - static_cast<std::ptrdiff_t>(pos.size()), fringe.end());
  const auto zc = zero_crossings(pos, fr_pos);
  double spacing = std::numeric_limits<double>::quiet_NaN();
  if (zc.size() >= 2) spacing = (zc.back() - zc.front()) / static_cast<double>(zc.size() - 1);

  json j = {{"interaction", std::string(to_string(p.interaction))},
            {"modes", p.mechanics.size()},
            {"scale", scale},
            {"background", v0.background},
            {"feature_over_background_at_0", v0.background > 0 ? v0.feature / v0.background : 0.0},
            {"peak_excess_over_background", v0.background > 0 ? (v0.total - v0.vacuum) / v0.background : 0.0},
            {"fringe_zero_crossings_s", zc},
            {"mean_crossing_spacing_s", spacing},
            {"csv", path}};
  if (p.mechanics.size() == 2 && p.mechanics[0].delta != p.mechanics[1].delta) {
    j["beat_period_s"] = 2.0 * std::numbers::pi / std::abs(p.mechanics[0].delta - p.mechanics[1].delta);
  }
  j["detection"] = detection_json(p);
  j["validation"] = findings_json(report);
  out.write(std::string(file) == "multimode.csv" ? "multimode.json" : "analytic.json", j.dump(2) + "\n");

  std::string text = "multimode curve (" + std::to_string(p.mechanics.size()) + " modes) -> " + path + "\n" +
                     "(peak - vacuum)/background = " + fmt(j["peak_excess_over_background"].get<double>(), "%.12g") +
                     "\nfringe zero crossings: " + std::to_string(zc.size()) +
                     ", mean spacing " + fmt(spacing) + " s\n";
  if (j.contains("beat_period_s")) text += "beat period " + fmt(j["beat_period_s"].get<double>()) + " s\n";
  emit(g, j, text);
  return kExitOk;
}

int cmd_analytic(const Globals& g, const AnalyticArgs& a) {
  const auto doc = require_config(g);
  const auto& p = doc.params;
  if (a.multimode || p.mechanics.size() != 1 || p.mode().delta != 0.0) return run_multimode(g, doc, a, "analytic.csv");

  const auto report = validate(p);
  if (!report.ok()) throw Error(ErrorKind::Config, report.summary());
  const auto s = single_mode(p.interaction, p);
  const double eta = a.eta.value_or(effective_eta(p));
  const auto taus = tau_grid(a.tau_max.value_or(8.0 / slowest_rate(p)), a.points);
  const auto curve = het_variance_curve(s, eta, taus);

  std::ostringstream csv;
  csv << "tau_s,total,vacuum,background,feature\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    csv << format_sci(curve.tau[i]) << ',' << format_sci(curve.value[i]) << ',' << format_sci(curve.vacuum[i])
        << ',' << format_sci(curve.background[i]) << ',' << format_sci(curve.feature[i]) << '\n';
  }
  OutputDir out(g.out);
  const auto path = out.write("analytic.csv", csv.str());

  const auto v0 = normalized_het_variance(s, eta, 0.0);
  json j = {{"interaction", std::string(to_string(p.interaction))},
            {"doubling_factor", doubling_factor(p.interaction)},
            {"eta", eta},
            {"n_eff", s.n_eff},
            {"vacuum", v0.vacuum},
            {"background", v0.background},
            {"peak", v0.total},
            {"kappa_rad_per_s", s.kappa},
            {"gamma_rad_per_s", s.gamma},
            {"g_rad_per_s", s.g},
            {"cavity_occupation", cavity_occupation(s)},
            {"vacuum_noise_level_rad_per_s", vacuum_noise_level(p.det)},
            {"steady_state_occupation", steady_state_json(p.interaction, p)},
            {"detection", detection_json(p)},
            {"validation", findings_json(report)},
            {"csv", path}};
  out.write("analytic.json", j.dump(2) + "\n");
  emit(g, j,
       std::string(to_string(p.interaction)) + " curve -> " + path + "\nD = " + fmt(doubling_factor(p.interaction)) +
           ", eta = " + fmt(eta) + ", background = " + fmt(v0.background) + " above vacuum 0.5\n" +
           "counts per gate " + fmt(j["detection"]["n_det_per_gate"].get<double>()) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::optional<std::size_t> target_heralds;
  std::optional<std::size_t> trajectories;
  std::optional<double> dark_rate;
  std::optional<double> lo_phase;
  unsigned threads = 0;
  std::string replay;
};

json simulation_summary(const SimResult& r) {
  const auto& s = r.stats;
  json j = {{"heralds", r.curve.n_heralds},
            {"signal_heralds", s.signal_heralds},
            {"dark_heralds", s.dark_heralds},
            {"expected_signal_heralds", s.expected_signal},
            {"expected_dark_heralds", s.expected_dark},
            {"trajectories", s.trajectories},
            {"gates", s.gates},
            {"clicks_per_gate", s.clicks_per_gate()},
            {"dark_fraction", s.dark_fraction()},
            {"eta_h", s.eta_h},
            {"occupation_exact", s.occupation_exact},
            {"occupation_weak", s.occupation_weak},
            {"background_exact", s.background_exact()},
            {"unconditioned_mean", s.unconditioned_mean},
            {"unconditioned_se", s.unconditioned_se},
            {"intensity_mean", s.intensity_mean},
            {"intensity_se", s.intensity_se}};
  try {
    const auto d = doubling_estimate(r.curve);
    j["d_hat"] = d.d_hat;
    j["d_hat_se"] = d.se;
    j["peak"] = d.peak;
    j["tail"] = d.tail;
  } catch (const Error& e) {
    j["d_hat"] = nullptr;
    j["d_hat_error"] = e.what();
  }
  j["warnings"] = s.warnings;
  return j;
}

int cmd_simulate(const Globals& g, const SimulateArgs& a) {
  SimConfig c;
  json expected_digests;
  if (!a.replay.empty()) {
    const json manifest = json::parse(read_text(a.replay), nullptr, false);
    if (manifest.is_discarded() || !manifest.contains("config") || !manifest.contains("outputs")) {
      throw Error(ErrorKind::Config, "'" + a.replay + "' is not a simulate manifest");
    }
    const auto doc = parse_config(manifest["config"].get<std::string>());
    c.params = doc.params;
    apply_simulation_keys(c, doc.simulation);
    expected_digests = manifest["outputs"];
  } else {
    const auto doc = require_config(g);
    c.params = doc.params;
    apply_simulation_keys(c, doc.simulation);
    if (g.seed) c.seed = *g.seed;
    if (a.target_heralds) c.target_heralds = *a.target_heralds;
    if (a.trajectories) c.n_trajectories = *a.trajectories;
    if (a.dark_rate) c.params.det.dark_rate = *a.dark_rate;
    if (a.lo_phase) c.lo_phase = *a.lo_phase;
  }
  c.threads = a.threads;

  const auto result = simulate(c);
  const std::string snapshot = serialize_config(c.params, simulation_keys(c));

  std::ostringstream csv;
  write_curve_csv(csv, result.curve);
  OutputDir out(g.out);
  const auto curve_path = out.write("curve.csv", csv.str());
  json summary = simulation_summary(result);
  summary["seed"] = c.seed;
  out.write("summary.json", summary.dump(2) + "\n");

  json manifest = {{"tool", "clickdyne"},
                   {"version", version()},
                   {"command", "simulate"},
                   {"seed", c.seed},
                   {"config", snapshot},
                   {"outputs", out.digests()}};
  out.write("manifest.json", manifest.dump(2) + "\n");

  std::string text = "heralds " + std::to_string(result.curve.n_heralds) + " (" +
                     std::to_string(result.stats.dark_heralds) + " dark) from " +
                     std::to_string(result.stats.trajectories) + " trajectories -> " + curve_path + "\n";
  if (!summary["d_hat"].is_null()) {
    text += "D_hat = " + fmt(summary["d_hat"].get<double>(), "%.4f") + " +- " +
            fmt(summary["d_hat_se"].get<double>(), "%.4f") + "\n";
  }
  for (const auto& w : result.stats.warnings) text += "warning: " + w + "\n";

  int code = kExitOk;
  if (!a.replay.empty()) {
    const bool same = expected_digests == manifest["outputs"];
    summary["replay_identical"] = same;
    text += same ? "replay: outputs identical\n" : "replay: outputs DIFFER from manifest\n";
    if (!same) code = kExitNumerical;
  }
  emit(g, summary, text);
  return code;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string curve;
  std::optional<double> kappa;
  std::optional<double> gamma_guess;
  std::size_t bootstrap = 200;
  double vacuum = 0.5;
  double vacuum_se = 0.0;
  unsigned threads = 0;
  bool model_csv = false;
};

int cmd_fit(const Globals& g, const FitArgs& a) {
  double kappa;
  if (a.kappa) {
    kappa = *a.kappa;
  } else if (!g.config.empty()) {
    kappa = load_config(g.config).params.optical.kappa;
  } else {
    throw Error(ErrorKind::Config, "fit needs --kappa or --config");
  }
  const auto curve = read_curve_csv(a.curve);
  FitOptions opt;
  opt.gamma_guess = a.gamma_guess;
  opt.n_bootstrap = a.bootstrap;
  opt.vacuum = a.vacuum;
  opt.vacuum_se = a.vacuum_se;
  opt.seed = g.seed.value_or(1);
  opt.threads = a.threads;
  const auto f = fit_curve(curve, kappa, opt);

  json j = {{"degenerate", f.degenerate},
            {"feature_significance", f.feature_significance},
            {"kappa_rad_per_s", kappa},
            {"d", f.d},
            {"d_se", f.d_se},
            {"d_ci95", interval(f.d_ci)},
            {"gamma_rad_per_s", f.gamma},
            {"gamma_se_rad_per_s", f.gamma_se},
            {"gamma_ci95_rad_per_s", interval(f.gamma_ci)},
            {"background", f.background},
            {"background_ci95", interval(f.background_ci)},
            {"vacuum", f.vacuum},
            {"vacuum_ci95", interval(f.vacuum_ci)},
            {"chi2", f.chi2},
            {"dof", f.dof},
            {"reduced_chi2", f.reduced_chi2},
            {"n_bootstrap", f.n_bootstrap},
            {"n_points", curve.size()},
            {"n_heralds", curve.n_heralds}};
  if (!f.degenerate) {
    const auto d = doubling_estimate(curve, a.vacuum, a.vacuum_se);
    j["d_hat"] = d.d_hat;
    j["d_hat_se"] = d.se;
  }
  OutputDir out(g.out);
  out.write("fit.json", j.dump(2) + "\n");
  if (a.model_csv && !f.degenerate) {
    std::ostringstream csv;
    csv << "tau_s,model\n";
    for (double t : curve.tau) {
      csv << format_sci(t) << ',' << format_sci(fit_model(t, kappa, f.d, f.gamma, f.background, f.vacuum)) << '\n';
    }
    out.write("fit_model.csv", csv.str());
  }

  if (f.degenerate) {
    emit(g, j,
         "degenerate curve: feature significance " + fmt(f.feature_significance, "%.3g") + " below threshold\n");
    return kExitDegenerateFit;
  }
  emit(g, j,
       "D = " + fmt(f.d, "%.4f") + " [" + fmt(f.d_ci.low, "%.4f") + ", " + fmt(f.d_ci.high, "%.4f") + "]\n" +
           "gamma = " + fmt(f.gamma) + " rad/s [" + fmt(f.gamma_ci.low) + ", " + fmt(f.gamma_ci.high) + "]\n" +
           "background = " + fmt(f.background) + ", reduced chi2 = " + fmt(f.reduced_chi2, "%.3f") + "\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clickdyne: heralded phonon addition/subtraction analytics and Monte Carlo"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(version()));

  Globals g;
  app.add_option("--config", g.config, "INI configuration file");
  app.add_option("--seed", g.seed, "Random seed (simulate, fit bootstrap)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_flag("--json", g.json, "Print the summary as JSON");

  OracleArgs oa;
  auto* oracle = app.add_subcommand("oracle", "Fock-space heralding of a thermal state");
  oracle->add_option("--n-bar", oa.n_bar, "Thermal occupation (defaults to n_th of the config)");
  oracle->add_option("--op", oa.op, "subtract | add")->capture_default_str();
  oracle->add_option("--tol", oa.tol, "Truncation tolerance")->capture_default_str();
  oracle->add_flag("--closed-form", oa.closed_form, "Use the factorial-moment closed form");

  AnalyticArgs aa;
  auto add_curve_opts = [](CLI::App* sc, AnalyticArgs& args) {
    sc->add_option("--tau-max", args.tau_max, "Half-range of the lag grid [s]");
    sc->add_option("--points", args.points, "Number of lag points")->capture_default_str();
    sc->add_option("--eta", args.eta, "Override the detection efficiency / scale");
  };
  auto* analytic = app.add_subcommand("analytic", "Closed-form conditioned heterodyne variance");
  add_curve_opts(analytic, aa);
  analytic->add_flag("--multimode", aa.multimode, "Use the multimode correlator");

  AnalyticArgs ma;
  ma.points = 2001;
  auto* multimode = app.add_subcommand("multimode", "Multimode conditioned variance and fringes");
  add_curve_opts(multimode, ma);

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Langevin Monte Carlo with click-dyne detection");
  sim->add_option("--target-heralds", sa.target_heralds, "Stop after this many heralds");
  sim->add_option("--trajectories", sa.trajectories, "Maximum number of trajectories");
  sim->add_option("--dark-rate", sa.dark_rate, "Open-gate dark-count rate [1/s]");
  sim->add_option("--lo-phase", sa.lo_phase, "Local-oscillator phase [rad]");
  sim->add_option("--threads", sa.threads, "Worker threads (0 = all cores)");
  sim->add_option("--replay", sa.replay, "Re-run a manifest.json and compare output digests");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit D and gamma to a conditioned curve");
  fit->add_option("curve", fa.curve, "Curve CSV (tau_s, mean, se[, n_heralds])")->required();
  fit->add_option("--kappa", fa.kappa, "Fixed optical decay rate [rad/s] (defaults to the config)");
  fit->add_option("--gamma-guess", fa.gamma_guess, "Initial gamma [rad/s] (defaults to kappa)");
  fit->add_option("--bootstrap", fa.bootstrap, "Bootstrap replicates")->capture_default_str();
  fit->add_option("--vacuum", fa.vacuum, "Vacuum level")->capture_default_str();
  fit->add_option("--vacuum-se", fa.vacuum_se, "Vacuum uncertainty (0 pins it)")->capture_default_str();
  fit->add_option("--threads", fa.threads, "Bootstrap threads (0 = all cores)");
  fit->add_flag("--model-csv", fa.model_csv, "Also write fit_model.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*oracle) return cmd_oracle(g, oa);
    if (*analytic) return cmd_analytic(g, aa);
    if (*multimode) return run_multimode(g, require_config(g), ma, "multimode.csv");
    if (*sim) return cmd_simulate(g, sa);
    if (*fit) return cmd_fit(g, fa);
  } catch (const Error& e) {
    if (g.json) {
      std::cout << json{{"error", to_string(e.kind())}, {"message", e.what()}}.dump(2) << '\n';
    }
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitConfig;
}
