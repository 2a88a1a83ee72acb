#pragma once

#include <stdexcept>
#include <string>

namespace clickdyne {

enum class ErrorKind {
  Config,
  SubtractFromVacuum,
  TruncationOverflow,
  DegenerateRates,
  UnstableAmplifier,
  NonIntegrableFilter,
  QuadratureNonConvergence,
  StabilityViolation,
  GateProbabilityOverflow,
  NonConvergence,
  DegenerateCurve,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::SubtractFromVacuum: return "SubtractFromVacuum";
    case ErrorKind::TruncationOverflow: return "TruncationOverflow";
    case ErrorKind::DegenerateRates: return "DegenerateRates";
    case ErrorKind::UnstableAmplifier: return "UnstableAmplifier";
    case ErrorKind::NonIntegrableFilter: return "NonIntegrableFilter";
    case ErrorKind::QuadratureNonConvergence: return "QuadratureNonConvergence";
    case ErrorKind::StabilityViolation: return "StabilityViolation";
    case ErrorKind::GateProbabilityOverflow: return "GateProbabilityOverflow";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::DegenerateCurve: return "DegenerateCurve";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit codes used by the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitDegenerateFit = 4;

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return kExitConfig;
    case ErrorKind::DegenerateCurve: return kExitDegenerateFit;
    default: return kExitNumerical;
  }
}

}  // namespace clickdyne
