#pragma once

#include "clickdyne/analytic.hpp"
#include "clickdyne/config.hpp"
#include "clickdyne/curve.hpp"
#include "clickdyne/error.hpp"
#include "clickdyne/fit.hpp"
#include "clickdyne/fock.hpp"
#include "clickdyne/linear_sde.hpp"
#include "clickdyne/model.hpp"
#include "clickdyne/multimode.hpp"
#include "clickdyne/stochastic.hpp"

namespace clickdyne {

inline constexpr const char* version() {
#ifdef CLICKDYNE_VERSION
  return CLICKDYNE_VERSION;
#else
  return "0.1.0";
#endif
}

}  // namespace clickdyne
