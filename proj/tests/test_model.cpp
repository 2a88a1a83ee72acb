#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <string>

#include "clickdyne/config.hpp"
#include "clickdyne/model.hpp"
#include "test_params.hpp"

using namespace clickdyne;

namespace {

bool has_finding(const ValidationReport& r, const std::string& field, Severity s) {
  for (const auto& f : r.findings) {
    if (f.field == field && f.severity == s) return true;
  }
  return false;
}

}  // namespace

TEST(Interaction, ParseAndPrint) {
  EXPECT_EQ(parse_interaction("beam_splitter"), InteractionKind::BeamSplitter);
  EXPECT_EQ(parse_interaction("tms"), InteractionKind::TwoModeSqueezer);
  EXPECT_EQ(to_string(InteractionKind::TwoModeSqueezer), "two_mode_squeezer");
  EXPECT_EQ(parse_interaction(to_string(InteractionKind::BeamSplitter)), InteractionKind::BeamSplitter);
  try {
    parse_interaction("optomechanical");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Interaction, EffectiveOccupation) {
  EXPECT_DOUBLE_EQ(effective_occupation(InteractionKind::BeamSplitter, 3.0), 3.0);
  EXPECT_DOUBLE_EQ(effective_occupation(InteractionKind::TwoModeSqueezer, 3.0), 4.0);
}

TEST(RateUnits, LinewidthConventions) {
  // 2 gamma / 2pi = 34 MHz FWHM and gamma / 2pi = 17 MHz name the same rate.
  const double from_fwhm = to_rad_per_s(34.0e6, RateUnit::FwhmHz);
  const double from_amp = to_rad_per_s(17.0e6, RateUnit::AmplitudeHz);
  EXPECT_NEAR(from_fwhm, from_amp, 1e-6);
  EXPECT_NEAR(from_fwhm, 2.0 * std::numbers::pi * 17.0e6, 1e-6);
  for (auto u : {RateUnit::RadPerSecond, RateUnit::AmplitudeHz, RateUnit::FwhmHz}) {
    EXPECT_DOUBLE_EQ(from_rad_per_s(to_rad_per_s(1.2345e7, u), u), 1.2345e7);
  }
}

TEST(Validate, LabParametersPass) {
  const auto r = validate(testing_params::lab(InteractionKind::BeamSplitter));
  EXPECT_TRUE(r.ok());
  EXPECT_NE(r.status(), Severity::Fail);
  EXPECT_NEAR(r.coupling_ratio, 2.0 / 7.75, 1e-9);
  EXPECT_FALSE(r.degenerate_branch);
}

TEST(Validate, FailuresAndWarnings) {
  auto p = testing_params::lab(InteractionKind::BeamSplitter);
  p.optical.kappa = -1.0;
  EXPECT_TRUE(has_finding(validate(p), "optical.kappa", Severity::Fail));

  p = testing_params::lab(InteractionKind::BeamSplitter);
  p.eff.eta_spad = 1.5;
  EXPECT_TRUE(has_finding(validate(p), "efficiencies.eta_spad", Severity::Fail));

  p = testing_params::lab(InteractionKind::BeamSplitter);
  p.det.omega_het = 2.0 * p.det.omega_co;
  EXPECT_TRUE(has_finding(validate(p), "detector.omega_het", Severity::Fail));

  p = testing_params::scaled(InteractionKind::TwoModeSqueezer);
  p.mechanics[0].g = 2.0;  // G^2 > kappa*gamma
  EXPECT_TRUE(has_finding(validate(p), "mechanics.0.g", Severity::Fail));
  EXPECT_THROW(require_valid(p), Error);

  p = testing_params::scaled(InteractionKind::BeamSplitter);
  p.mechanics[0].gamma = 1.0;
  const auto r = validate(p);
  EXPECT_TRUE(r.ok());
  EXPECT_TRUE(r.degenerate_branch);
  EXPECT_TRUE(has_finding(r, "mechanics.0.gamma", Severity::Warn));

  p = testing_params::scaled(InteractionKind::BeamSplitter);
  p.mechanics[0].g = 0.8;
  EXPECT_TRUE(has_finding(validate(p), "mechanics.0.g", Severity::Warn));
}

TEST(SystemParams, ModeRequiresSingleMode) {
  auto p = testing_params::scaled(InteractionKind::BeamSplitter);
  p.mechanics.push_back(p.mechanics[0]);
  EXPECT_THROW(p.mode(), Error);
}

TEST(Dimensionless, RescalesRatesAndTimes) {
  const auto p = testing_params::lab(InteractionKind::BeamSplitter);
  const auto s = dimensionless(p);
  EXPECT_DOUBLE_EQ(s.rate_scale, p.optical.kappa);
  EXPECT_DOUBLE_EQ(s.params.optical.kappa, 1.0);
  EXPECT_NEAR(s.params.mechanics[0].gamma, 34.0 / 15.5, 1e-12);
  EXPECT_NEAR(s.params.det.t_gate, 8e-9 * p.optical.kappa, 1e-15);
  EXPECT_NEAR(s.params.det.gate_rate * s.params.det.t_gate, p.det.gate_rate * p.det.t_gate, 1e-15);
}

TEST(DarkRate, WallClockConversion) {
  EXPECT_NEAR(open_gate_dark_rate(3.0, 50e3, 8e-9), 7500.0, 1e-9);
}

// ---------------------------------------------------------------------------
// Config files

namespace {

const char* kLabConfig = R"(# comment
interaction = beam_splitter
[optical]
kappa_fwhm_hz = 15.5e6
[mechanics.0]
gamma_hz = 17e6   ; amplitude convention
g_hz = 2e6
n_th = 760
[efficiencies]
eta_out = 0.5
eta_spad = 0.125
[detector]
omega_co_hz = 400e6
omega_het_hz = 150e6
t_gate = 8e-9
gate_rate = 50e3
)";

ErrorKind config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::DegenerateCurve;  // sentinel: no error
}

}  // namespace

TEST(Config, ParsesUnitVariants) {
  const auto doc = parse_config(kLabConfig);
  const auto& p = doc.params;
  EXPECT_EQ(p.interaction, InteractionKind::BeamSplitter);
  EXPECT_NEAR(p.optical.kappa, std::numbers::pi * 15.5e6, 1e-6);
  EXPECT_NEAR(p.mechanics[0].gamma, std::numbers::pi * 34e6, 1e-6);
  EXPECT_NEAR(p.mechanics[0].g, 2.0 * std::numbers::pi * 2e6, 1e-6);
  EXPECT_DOUBLE_EQ(p.mechanics[0].n_th, 760.0);
  EXPECT_DOUBLE_EQ(p.eff.eta_spad, 0.125);
  EXPECT_DOUBLE_EQ(p.eff.eta_filter, 1.0);
  EXPECT_DOUBLE_EQ(p.det.dark_rate, 0.0);
  EXPECT_TRUE(doc.simulation.empty());
}

TEST(Config, RoundTripIsByteIdentical) {
  const auto p = parse_config(kLabConfig).params;
  const KeyValues sim = {{"dt", "0.02"}, {"seed", "7"}};
  const std::string once = serialize_config(p, sim);
  const auto again = parse_config(once);
  EXPECT_EQ(serialize_config(again.params, again.simulation), once);

  auto multi = testing_params::multimode_scaled();
  const std::string m1 = serialize_config(multi);
  EXPECT_EQ(serialize_config(parse_config(m1).params), m1);
}

TEST(Config, Errors) {
  const std::string base = kLabConfig;
  EXPECT_EQ(config_error(base + "bogus = 1\n"), ErrorKind::Config);
  EXPECT_EQ(config_error(base + "[unknown]\n"), ErrorKind::Config);
  EXPECT_EQ(config_error(base + "[mechanics.2]\ngamma=1\ng=1\nn_th=1\n"), ErrorKind::Config);
  EXPECT_EQ(config_error(base + "[optical]\n"), ErrorKind::Config);
  EXPECT_EQ(config_error("interaction = bs\n[optical]\nkappa = 1\nkappa_hz = 1\n"), ErrorKind::Config);
  EXPECT_EQ(config_error("interaction = bs\n[optical]\nkappa = abc\n"), ErrorKind::Config);
  EXPECT_EQ(config_error("[optical]\nkappa = 1\n"), ErrorKind::Config);

  std::string missing = base;
  missing.replace(missing.find("n_th = 760\n"), 11, "");
  EXPECT_EQ(config_error(missing), ErrorKind::Config);

  std::string dup = base;
  dup.insert(dup.find("n_th = 760"), "n_th = 1\n");
  EXPECT_EQ(config_error(dup), ErrorKind::Config);

  EXPECT_THROW(load_config("/nonexistent/clickdyne.ini"), Error);
}
