#pragma once

// Flat key/value configuration files.
//
//   interaction = beam_splitter
//   [optical]        kappa, kappa_ext
//   [mechanics.N]    gamma, delta, g, n_th        (N = 0, 1, ...)
//   [efficiencies]   eta_taper, eta_out, eta_filter, eta_bs, eta_spad, eta_bd, eta_mm
//   [detector]       omega_co, omega_het, t_gate, gate_rate, dark_rate
//   [simulation]     passed through verbatim, checked by the stochastic module
//
// Rates may be given in rad/s (`kappa`), as ordinary frequency of the
// amplitude rate (`kappa_hz` = kappa/2pi) or, for linewidths, as FWHM in Hz
// (`kappa_fwhm_hz` = 2 kappa/2pi). Serialization always writes rad/s.

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "clickdyne/error.hpp"
#include "clickdyne/model.hpp"

namespace clickdyne {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

struct ConfigDocument {
  SystemParams params;
  KeyValues simulation;  // [simulation] entries in file order
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_number(const std::string& text, const std::string& where) {
  if (text.empty()) throw Error(ErrorKind::Config, where + ": empty value");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || errno == ERANGE || !std::isfinite(v)) {
    throw Error(ErrorKind::Config, where + ": '" + text + "' is not a finite number");
  }
  return v;
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// One physical field, possibly reachable through several unit-tagged keys.
struct Field {
  std::string base;
  bool rate = false;       // accepts _hz
  bool linewidth = false;  // accepts _fwhm_hz
  std::function<void(double)> set;
  bool required = false;
};

inline std::optional<std::pair<const Field*, RateUnit>> lookup(const std::vector<Field>& fields,
                                                               const std::string& key) {
  for (const auto& f : fields) {
    if (key == f.base) return std::pair{&f, RateUnit::RadPerSecond};
    if (f.rate && key == f.base + "_hz") return std::pair{&f, RateUnit::AmplitudeHz};
    if (f.linewidth && key == f.base + "_fwhm_hz") return std::pair{&f, RateUnit::FwhmHz};
  }
  return std::nullopt;
}

}  // namespace config_detail

inline ConfigDocument parse_config(std::string_view text) {
  using namespace config_detail;

  // Collect raw entries per section first so field order in the file is free.
  std::map<std::string, KeyValues> sections;
  std::vector<std::string> section_order;
  std::string current;  // "" = top level
  sections[current];

  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    const std::string s = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (s.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (s.front() == '[') {
      if (s.back() != ']') throw Error(ErrorKind::Config, where + ": malformed section header");
      current = trim(std::string_view(s).substr(1, s.size() - 2));
      if (sections.count(current)) throw Error(ErrorKind::Config, where + ": duplicate section [" + current + "]");
      sections[current];
      section_order.push_back(current);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Config, where + ": expected key = value");
    std::string key = trim(std::string_view(s).substr(0, eq));
    std::string value = trim(std::string_view(s).substr(eq + 1));
    if (key.empty()) throw Error(ErrorKind::Config, where + ": empty key");
    for (const auto& [k, v] : sections[current]) {
      if (k == key) throw Error(ErrorKind::Config, where + ": duplicate key '" + key + "'");
    }
    sections[current].emplace_back(std::move(key), std::move(value));
  }

  ConfigDocument doc;
  SystemParams& p = doc.params;

  auto apply = [](const std::string& section, const KeyValues& entries, const std::vector<Field>& fields) {
    std::set<const Field*> seen;
    for (const auto& [key, value] : entries) {
      const auto hit = lookup(fields, key);
      if (!hit) throw Error(ErrorKind::Config, "[" + section + "]: unknown key '" + key + "'");
      const auto [field, unit] = *hit;
      if (!seen.insert(field).second) {
        throw Error(ErrorKind::Config, "[" + section + "]: '" + field->base + "' given more than once");
      }
      field->set(to_rad_per_s(parse_number(value, "[" + section + "] " + key), unit));
    }
    for (const auto& f : fields) {
      if (f.required && !seen.count(&f)) {
        throw Error(ErrorKind::Config, "[" + section + "]: missing required key '" + f.base + "'");
      }
    }
  };

  // Top level: only the interaction kind.
  bool have_interaction = false;
  for (const auto& [key, value] : sections[""]) {
    if (key != "interaction") throw Error(ErrorKind::Config, "unknown top-level key '" + key + "'");
    p.interaction = parse_interaction(value);
    have_interaction = true;
  }
  if (!have_interaction) throw Error(ErrorKind::Config, "missing top-level key 'interaction'");

  if (!sections.count("optical")) throw Error(ErrorKind::Config, "missing section [optical]");
  if (!sections.count("detector")) throw Error(ErrorKind::Config, "missing section [detector]");

  std::map<std::size_t, const KeyValues*> mech;
  for (const auto& name : section_order) {
    if (name == "optical" || name == "efficiencies" || name == "detector" || name == "simulation") continue;
    if (name.rfind("mechanics.", 0) == 0) {
      const std::string idx = name.substr(10);
      if (idx.empty() || idx.find_first_not_of("0123456789") != std::string::npos) {
        throw Error(ErrorKind::Config, "bad mechanics section [" + name + "]");
      }
      mech[std::stoul(idx)] = &sections[name];
      continue;
    }
    throw Error(ErrorKind::Config, "unknown section [" + name + "]");
  }
  if (mech.empty()) throw Error(ErrorKind::Config, "at least one [mechanics.N] section required");
  if (mech.rbegin()->first != mech.size() - 1) {
    throw Error(ErrorKind::Config, "mechanics sections must be numbered 0..N-1 without gaps");
  }

  apply("optical", sections["optical"],
        {{"kappa", true, true, [&](double v) { p.optical.kappa = v; }, true},
         {"kappa_ext", true, true, [&](double v) { p.optical.kappa_ext = v; }}});

  p.mechanics.resize(mech.size());
  for (const auto& [i, entries] : mech) {
    auto& m = p.mechanics[i];
    apply("mechanics." + std::to_string(i), *entries,
          {{"gamma", true, true, [&](double v) { m.gamma = v; }, true},
           {"delta", true, false, [&](double v) { m.delta = v; }},
           {"g", true, false, [&](double v) { m.g = v; }, true},
           {"n_th", false, false, [&](double v) { m.n_th = v; }, true}});
  }

  if (sections.count("efficiencies")) {
    auto& e = p.eff;
    apply("efficiencies", sections["efficiencies"],
          {{"eta_taper", false, false, [&](double v) { e.eta_taper = v; }},
           {"eta_out", false, false, [&](double v) { e.eta_out = v; }},
           {"eta_filter", false, false, [&](double v) { e.eta_filter = v; }},
           {"eta_bs", false, false, [&](double v) { e.eta_bs = v; }},
           {"eta_spad", false, false, [&](double v) { e.eta_spad = v; }},
           {"eta_bd", false, false, [&](double v) { e.eta_bd = v; }},
           {"eta_mm", false, false, [&](double v) { e.eta_mm = v; }}});
  }

  auto& d = p.det;
  apply("detector", sections["detector"],
        {{"omega_co", true, false, [&](double v) { d.omega_co = v; }, true},
         {"omega_het", true, false, [&](double v) { d.omega_het = v; }, true},
         {"t_gate", false, false, [&](double v) { d.t_gate = v; }, true},
         {"gate_rate", false, false, [&](double v) { d.gate_rate = v; }, true},
         {"dark_rate", false, false, [&](double v) { d.dark_rate = v; }}});

  if (sections.count("simulation")) doc.simulation = sections["simulation"];
  return doc;
}

inline ConfigDocument load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Config, "cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

inline std::string serialize_config(const SystemParams& p, const KeyValues& simulation = {}) {
  using config_detail::format_number;
  std::ostringstream out;
  auto kv = [&](const char* k, double v) { out << k << " = " << format_number(v) << "\n"; };

  out << "interaction = " << to_string(p.interaction) << "\n";
  out << "\n[optical]\n";
  kv("kappa", p.optical.kappa);
  kv("kappa_ext", p.optical.kappa_ext);
  for (std::size_t i = 0; i < p.mechanics.size(); ++i) {
    const auto& m = p.mechanics[i];
    out << "\n[mechanics." << i << "]\n";
    kv("gamma", m.gamma);
    kv("delta", m.delta);
    kv("g", m.g);
    kv("n_th", m.n_th);
  }
  out << "\n[efficiencies]\n";
  kv("eta_taper", p.eff.eta_taper);
  kv("eta_out", p.eff.eta_out);
  kv("eta_filter", p.eff.eta_filter);
  kv("eta_bs", p.eff.eta_bs);
  kv("eta_spad", p.eff.eta_spad);
  kv("eta_bd", p.eff.eta_bd);
  kv("eta_mm", p.eff.eta_mm);
  out << "\n[detector]\n";
  kv("omega_co", p.det.omega_co);
  kv("omega_het", p.det.omega_het);
  kv("t_gate", p.det.t_gate);
  kv("gate_rate", p.det.gate_rate);
  kv("dark_rate", p.det.dark_rate);
  if (!simulation.empty()) {
    out << "\n[simulation]\n";
    for (const auto& [k, v] : simulation) out << k << " = " << v << "\n";
  }
  return out.str();
}

}  // namespace clickdyne
