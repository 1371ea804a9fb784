// Copyright 2026 The cyberauction Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include "cyberauction/baselines.hpp"

namespace ca = cyberauction;

namespace {

ca::BundleIndex actions(std::initializer_list<const char*> names) {
  ca::ActionCatalog c;
  c.actions.assign(names.begin(), names.end());
  return ca::enumerate_bundles(c);
}

ca::Matrix random_profile(ca::Rng& rng, std::size_t n, std::size_t m) {
  ca::Matrix v(n, m);
  for (auto& e : v.data()) e = rng.uniform();
  return v;
}

/// Single item, highest bid wins (lowest index on ties), winner pays its bid.
ca::MechanismOutcome first_price(const ca::Matrix& bids) {
  ca::Matrix x(bids.rows(), 1);
  std::size_t winner = 0;
  for (std::size_t i = 1; i < bids.rows(); ++i)
    if (bids(i, 0) > bids(winner, 0)) winner = i;
  x(winner, 0) = 1.0;
  ca::PaymentVector p(bids.rows(), 0.0);
  p[winner] = bids(winner, 0);
  return ca::make_outcome(x, p, bids);
}

}  // namespace

TEST(SolveWd, SingleAgentTakesArgmax) {
  const auto sol = ca::solve_wd(ca::Matrix{{0.2, 0.5, 0.9}}, actions({"a", "b"}));
  ASSERT_TRUE(sol.assignment[0].has_value());
  EXPECT_EQ(*sol.assignment[0], 2u);
  EXPECT_DOUBLE_EQ(sol.welfare, 0.9);
  EXPECT_EQ(sol.used_actions, 3u);
}

TEST(SolveWd, TwoAgentsSplitTheActions) {
  const auto sol = ca::solve_wd(ca::Matrix{{0.9, 0.1, 0.5}, {0.8, 0.7, 0.9}}, actions({"a", "b"}));
  EXPECT_EQ(sol.assignment[0], std::optional<std::size_t>(0));
  EXPECT_EQ(sol.assignment[1], std::optional<std::size_t>(1));
  EXPECT_NEAR(sol.welfare, 1.6, 1e-15);
}

TEST(SolveWd, AllZeroValuationsLeaveEveryoneUnassigned) {
  const auto sol = ca::solve_wd(ca::Matrix(3, 7), actions({"a", "b", "c"}));
  for (const auto& a : sol.assignment) EXPECT_FALSE(a.has_value());
  EXPECT_EQ(sol.welfare, 0.0);
  EXPECT_EQ(sol.used_actions, 0u);
}

TEST(SolveWd, EmptyProfile) {
  const auto sol = ca::solve_wd(ca::Matrix(0, 7), actions({"a", "b", "c"}));
  EXPECT_TRUE(sol.assignment.empty());
  EXPECT_EQ(sol.welfare, 0.0);
}

TEST(SolveWd, ShapeErrors) {
  EXPECT_THROW(ca::solve_wd(ca::Matrix(2, 5), actions({"a", "b", "c"})), ca::InvalidInput);
}

TEST(BruteForceWd, MatchesHandExamples) {
  const auto index = actions({"a", "b"});
  for (const ca::Matrix& v : {ca::Matrix{{0.2, 0.5, 0.9}}, ca::Matrix{{0.9, 0.1, 0.5}, {0.8, 0.7, 0.9}}})
    EXPECT_EQ(ca::brute_force_wd(v, index), ca::solve_wd(v, index));
}

TEST(BruteForceWd, EmptyProfile) {
  const auto sol = ca::brute_force_wd(ca::Matrix(0, 3), actions({"a", "b"}));
  EXPECT_TRUE(sol.assignment.empty());
  EXPECT_EQ(sol.welfare, 0.0);
}

TEST(BruteForceWd, RejectsTooManyAgents) {
  EXPECT_THROW(ca::brute_force_wd(ca::Matrix(7, 3), actions({"a", "b"})), ca::UnsupportedSize);
}

TEST(BruteForceWd, RandomFourBySevenMatchesToZeroUlp) {
  ca::Rng rng(123);
  const auto index = actions({"a", "b", "c"});
  for (int trial = 0; trial < 50; ++trial) {
    const auto v = random_profile(rng, 4, 7);
    const auto dp = ca::solve_wd(v, index);
    const auto bf = ca::brute_force_wd(v, index);
    EXPECT_EQ(dp.welfare, bf.welfare);
    EXPECT_EQ(dp.assignment, bf.assignment);
  }
}

TEST(VcgPayments, SingleAgentPaysNothing) {
  const auto out = ca::vcg_payments(ca::Matrix{{0.3, 0.6, 0.8}}, actions({"a", "b"}));
  EXPECT_EQ(out.payments[0], 0.0);
  EXPECT_DOUBLE_EQ(out.welfare, 0.8);
}

TEST(VcgPayments, OneItemSecondPrice) {
  const auto out = ca::vcg_payments(ca::Matrix{{0.9}, {0.6}}, actions({"a"}));
  EXPECT_EQ(out.allocation(0, 0), 1.0);
  EXPECT_EQ(out.allocation(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(out.payments[0], 0.6);
  EXPECT_EQ(out.payments[1], 0.0);
  EXPECT_DOUBLE_EQ(out.revenue, 0.6);
}

TEST(VcgPayments, DuplicateAgentsWinnerPaysLoserValue) {
  const ca::Matrix v{{0.7}, {0.7}};
  const auto index = actions({"a"});
  const auto out = ca::vcg_payments(v, index);
  EXPECT_EQ(out.allocation(0, 0), 0.0);
  EXPECT_EQ(out.allocation(1, 0), 1.0);
  EXPECT_EQ(out.payments[0], 0.0);
  EXPECT_EQ(out.payments[1], 0.7);
  EXPECT_EQ(ca::utility(1, out.allocation, out.payments, v), 0.0);
  EXPECT_EQ(out.revenue, 0.7);
}

TEST(VcgPayments, ClarkePivotWithOverlappingBundles) {
  const ca::Matrix v{{0.7, 0.2, 0.75}, {0.7, 0.2, 0.75}};
  const auto index = actions({"a", "b"});
  const auto out = ca::vcg_payments(v, index);
  EXPECT_EQ(out.allocation(0, 0), 1.0);
  EXPECT_EQ(out.allocation(1, 1), 1.0);
  EXPECT_NEAR(out.payments[0], 0.75 - 0.2, 1e-15);
  EXPECT_NEAR(out.payments[1], 0.75 - 0.7, 1e-15);
  EXPECT_NEAR(out.revenue, 0.6, 1e-15);
}

TEST(GreedyAllocate, OneHotAtArgmax) {
  const auto x = ca::greedy_allocate(ca::Matrix{{0.2, 0.9, 0.5}}, actions({"a", "b"}));
  EXPECT_EQ(x, (ca::Matrix{{0, 1, 0}}));
}

TEST(GreedyAllocate, IgnoresConflictsBetweenAgents) {
  ca::Matrix v(2, 7, 0.1);
  v(0, 6) = 0.9;
  v(1, 6) = 0.8;
  const auto index = actions({"a", "b", "c"});
  const auto x = ca::greedy_allocate(v, index);
  EXPECT_EQ(x(0, 6), 1.0);
  EXPECT_EQ(x(1, 6), 1.0);
  EXPECT_FALSE(ca::check_feasibility(x, index).ok);
}

TEST(GreedyAllocate, TiesGoToLowestBundle) {
  const auto x = ca::greedy_allocate(ca::Matrix{{0.5, 0.5, 0.5}}, actions({"a", "b"}));
  EXPECT_EQ(x, (ca::Matrix{{1, 0, 0}}));
}

TEST(GreedyAllocate, BatchFrequencyAggregation) {
  const auto index = actions({"a", "b", "c"});
  std::vector<ca::Matrix> batch;
  for (std::size_t pick : {6u, 6u, 6u, 0u}) {
    ca::Matrix v(1, 7, 0.0);
    v(0, pick) = 1.0;
    batch.push_back(ca::greedy_allocate(v, index));
  }
  EXPECT_EQ(ca::mean_allocation(batch), (ca::Matrix{{0.25, 0, 0, 0, 0, 0, 0.75}}));
}

TEST(MeasuredRegret, VcgIsTruthful) {
  ca::Rng rng(5);
  const auto index = actions({"a", "b", "c"});
  const auto mech = ca::vcg_mechanism(index);
  for (int trial = 0; trial < 5; ++trial) {
    const auto v = random_profile(rng, 2, 7);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_LE(ca::measured_regret(mech, v, i), 1e-6);
  }
}

TEST(MeasuredRegret, ConstantMechanismHasNoRegret) {
  const auto index = actions({"a", "b"});
  const ca::OutcomeFn constant = [](const ca::Matrix& reported) {
    ca::Matrix x(reported.rows(), 3);
    x(0, 0) = 0.5;
    return ca::make_outcome(x, ca::PaymentVector(reported.rows(), 0.1), reported);
  };
  EXPECT_EQ(ca::measured_regret(constant, ca::Matrix{{0.4, 0.2, 0.9}, {0.1, 0.1, 0.1}}, 0), 0.0);
}

TEST(MeasuredRegret, FirstPriceShadingIsFound) {
  const ca::Matrix v{{0.9}, {0.6}};
  EXPECT_NEAR(ca::measured_regret(first_price, v, 0), 0.3, 1e-9);
  EXPECT_EQ(ca::measured_regret(first_price, v, 1), 0.0);
}

TEST(MeasuredRegret, AgentOutOfRange) {
  EXPECT_THROW(ca::measured_regret(first_price, ca::Matrix{{0.5}}, 1), ca::InvalidInput);
}

// ---------------------------------------------------------------------------

TEST(BaselineProperties, DpMatchesBruteForceOnSmallInstances) {
  ca::Rng rng(2026);
  const auto index = actions({"a", "b", "c"});
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(4);
    auto v = random_profile(rng, n, 7);
    if (trial % 5 == 0)
      for (auto& e : v.data()) e = std::round(e * 4.0) / 4.0;  // force ties
    const auto dp = ca::solve_wd(v, index);
    const auto bf = ca::brute_force_wd(v, index);
    ASSERT_EQ(dp.welfare, bf.welfare) << "trial " << trial;
    ASSERT_EQ(dp.assignment, bf.assignment) << "trial " << trial;
  }
}

TEST(BaselineProperties, VcgPaymentsAreRationalAndEqualMarginalContribution) {
  ca::Rng rng(77);
  const auto index = actions({"a", "b", "c"});
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(5);
    const auto v = random_profile(rng, n, 7);
    const auto out = ca::vcg_payments(v, index);
    const auto sol = ca::solve_wd(v, index);
    for (std::size_t i = 0; i < n; ++i) {
      const double own = sol.assignment[i] ? v(i, *sol.assignment[i]) : 0.0;
      EXPECT_GE(out.payments[i], 0.0);
      EXPECT_LE(out.payments[i], own + 1e-12);
      const double marginal = sol.welfare - ca::solve_wd(ca::without_agent(v, i), index).welfare;
      EXPECT_NEAR(ca::utility(i, out.allocation, out.payments, v), marginal, 1e-12);
      EXPECT_GE(marginal, -1e-12);
    }
    EXPECT_TRUE(ca::check_feasibility(out.allocation, index).ok);
  }
}

TEST(BaselineProperties, OracleDominatesFeasibleIntegralAssignments) {
  ca::Rng rng(8);
  const auto index = actions({"a", "b", "c"});
  for (int trial = 0; trial < 300; ++trial) {
    const auto v = random_profile(rng, 4, 7);
    ca::Matrix x(4, 7);
    std::uint32_t used = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t m = rng.below(8);
      if (m == 7 || (index[m].mask & used)) continue;
      x(i, m) = 1.0;
      used |= index[m].mask;
    }
    ASSERT_TRUE(ca::check_feasibility(x, index).ok);
    EXPECT_GE(ca::solve_wd(v, index).welfare, ca::welfare(x, v) - 1e-12);
  }
}

TEST(BaselineProperties, FractionalAllocationsCanExceedTheIntegralOptimum) {
  // Three agents each want a different pair of the three actions. Half of
  // every pair respects all capacity constraints yet beats any integral
  // assignment, which can serve only one pair.
  const auto index = actions({"a", "b", "c"});
  ca::Matrix v(3, 7);
  v(0, 2) = 1.0;  // a+b
  v(1, 5) = 1.0;  // b+c
  v(2, 4) = 1.0;  // a+c
  ca::Matrix x(3, 7);
  x(0, 2) = x(1, 5) = x(2, 4) = 0.5;
  ASSERT_TRUE(ca::check_feasibility(x, index).ok);
  EXPECT_DOUBLE_EQ(ca::welfare(x, v), 1.5);
  EXPECT_DOUBLE_EQ(ca::solve_wd(v, index).welfare, 1.0);
}
