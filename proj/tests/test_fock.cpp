#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "clickdyne/fock.hpp"

using namespace clickdyne;

namespace {

// Brute-force long-double sums over a thermal ladder long enough that the
// neglected tail is below 1e-30.
struct BruteForce {
  long double sub_mean = 0, add_mean = 0, sub_weight = 0, add_weight = 0;
};

BruteForce brute_force(double n_bar) {
  const long double nb = n_bar;
  const long double q = nb / (nb + 1);
  std::vector<long double> p;
  long double pn = 1 / (nb + 1);
  while (pn > 1e-32L || p.size() < 10) {
    p.push_back(pn);
    pn *= q;
  }
  BruteForce b;
  long double s_n = 0, s_nn1 = 0, s_n1 = 0, s_n1n = 0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    const long double k = static_cast<long double>(n);
    // a rho a^dag: population n-1 with weight n p_n
    s_n += k * p[n];
    s_nn1 += k * (k - 1) * p[n];
    // a^dag rho a: population n+1 with weight (n+1) p_n
    s_n1 += (k + 1) * p[n];
    s_n1n += (k + 1) * (k + 1) * p[n];
  }
  b.sub_weight = s_n;
  b.sub_mean = s_nn1 / s_n;
  b.add_weight = s_n1;
  b.add_mean = s_n1n / s_n1;
  return b;
}

}  // namespace

TEST(Fock, ThermalDistribution) {
  const auto d = thermal(2.0, 200);
  EXPECT_NEAR(d.probs[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(d.probs[1] / d.probs[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(mean_occupation(d), 2.0, 1e-12);
  EXPECT_NEAR(d.total() + d.truncation_mass, 1.0, 1e-14);
}

TEST(Fock, DefaultTruncationMeetsTolerance) {
  for (double n : {0.1, 1.0, 10.0, 760.0}) {
    const auto n_max = default_n_max(n, 1e-12);
    const auto d = thermal(n, n_max, 1.0);
    EXPECT_LT(d.truncation_mass, 1e-12 * 1.01) << n;
  }
  EXPECT_EQ(default_n_max(0.0), 1u);
  EXPECT_EQ(default_n_max(1e9, 1e-12, 1000), 1001u);
}

TEST(Fock, MatchesBruteForceOracle) {
  for (double n : {0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 37.0}) {
    const auto b = brute_force(n);
    const auto th = thermal(n, default_n_max(n));
    const auto s = subtract(th);
    const auto a = add(th);
    EXPECT_NEAR(mean_occupation(s.dist), static_cast<double>(b.sub_mean), 1e-8 * (1 + n)) << n;
    EXPECT_NEAR(mean_occupation(a.dist), static_cast<double>(b.add_mean), 1e-8 * (1 + n)) << n;
    EXPECT_NEAR(s.herald_weight, static_cast<double>(b.sub_weight), 1e-9 * (1 + n)) << n;
    EXPECT_NEAR(a.herald_weight, static_cast<double>(b.add_weight), 1e-9 * (1 + n)) << n;
  }
}

TEST(Fock, DoublingLaws) {
  for (double n : {0.1, 1.0, 2.0, 5.0, 10.0}) {
    const auto s = herald_thermal(n, HeraldOp::Subtract);
    const auto a = herald_thermal(n, HeraldOp::Add);
    EXPECT_FALSE(s.closed_form);
    EXPECT_NEAR(s.n_bar_out, 2.0 * n, 1e-6) << n;
    EXPECT_NEAR(a.n_bar_out, 2.0 * n + 1.0, 1e-6) << n;
    EXPECT_LT(s.truncation_mass, 1e-9);
    EXPECT_LT(a.truncation_mass, 1e-9);
    EXPECT_NEAR(s.herald_weight, n, 1e-9 * (1 + n));
    EXPECT_NEAR(a.herald_weight, n + 1.0, 1e-9 * (1 + n));
  }
}

TEST(Fock, ClosedFormAgreesWithLadder) {
  for (double n : {0.3, 3.0, 30.0, 760.0}) {
    for (auto op : {HeraldOp::Subtract, HeraldOp::Add}) {
      const auto ladder = herald_thermal(n, op);
      ThermalHeraldOptions opt;
      opt.force_closed_form = true;
      const auto cf = herald_thermal(n, op, opt);
      EXPECT_TRUE(cf.closed_form);
      EXPECT_NEAR(ladder.n_bar_out, cf.n_bar_out, 1e-8 * cf.n_bar_out);
      EXPECT_NEAR(ladder.herald_weight, cf.herald_weight, 1e-8 * cf.herald_weight);
    }
  }
  EXPECT_DOUBLE_EQ(herald_thermal_closed_form(760.0, HeraldOp::Subtract).n_bar_out, 1520.0);
  EXPECT_DOUBLE_EQ(herald_thermal_closed_form(760.0, HeraldOp::Add).n_bar_out, 1521.0);
}

TEST(Fock, LargeOccupationFallsBackToClosedForm) {
  ThermalHeraldOptions opt;
  opt.n_max_cap = 1000;
  const auto s = herald_thermal(760.0, HeraldOp::Subtract, opt);
  EXPECT_TRUE(s.closed_form);
  EXPECT_DOUBLE_EQ(s.n_bar_out, 1520.0);
}

TEST(Fock, EdgeCases) {
  EXPECT_NEAR(herald_thermal(0.0, HeraldOp::Add).n_bar_out, 1.0, 1e-15);
  try {
    herald_thermal(0.0, HeraldOp::Subtract);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SubtractFromVacuum);
  }
  try {
    herald_thermal_closed_form(0.0, HeraldOp::Subtract);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SubtractFromVacuum);
  }

  // Fock state |3>: subtraction gives |2>, addition |4>.
  const auto f3 = make_distribution({0, 0, 0, 1, 0});
  EXPECT_DOUBLE_EQ(mean_occupation(subtract(f3).dist), 2.0);
  EXPECT_DOUBLE_EQ(mean_occupation(add(f3).dist), 4.0);
  EXPECT_DOUBLE_EQ(subtract(f3).herald_weight, 3.0);
  EXPECT_DOUBLE_EQ(add(f3).herald_weight, 4.0);
}

TEST(Fock, TruncationErrors) {
  try {
    thermal(10.0, 20);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TruncationOverflow);
  }
  try {
    add(make_distribution({0.5, 0.5}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TruncationOverflow);
  }
  EXPECT_THROW(make_distribution({0.7, 0.7}), Error);
  EXPECT_THROW(make_distribution({-0.1, 0.5}), Error);
  EXPECT_THROW(thermal(-1.0, 10), Error);
  EXPECT_EQ(parse_herald_op("add"), HeraldOp::Add);
  EXPECT_THROW(parse_herald_op("multiply"), Error);
}
