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

#pragma once

// Reference mechanisms: exact welfare-maximizing winner determination with
// Clarke-pivot payments, an exhaustive cross-check, and the greedy
// per-agent heuristic. Also the black-box misreport probe used to measure
// regret of any mechanism.

#include <algorithm>
#include <concepts>
#include <functional>
#include <optional>
#include <vector>

#include "cyberauction/core.hpp"
#include "cyberauction/mechanism.hpp"
#include "cyberauction/valuation.hpp"

namespace cyberauction {

struct WdSolution {
  std::vector<std::optional<std::size_t>> assignment;  // bundle position per host
  double welfare = 0.0;
  std::uint32_t used_actions = 0;

  bool operator==(const WdSolution&) const = default;

  AllocationMatrix as_matrix(std::size_t bundle_count) const {
    AllocationMatrix x(assignment.size(), bundle_count);
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i]) x(i, *assignment[i]) = 1.0;
    return x;
  }
};

namespace detail {

inline void check_wd_shape(const Matrix& values, const BundleIndex& index) {
  if (index.action_count > kMaxActions)
    throw UnsupportedSize("winner determination supports at most 16 actions");
  if (index.size() != (std::size_t{1} << index.action_count) - 1)
    throw InvalidInput("winner determination needs the full non-empty bundle index");
  if (values.rows() > 0 && values.cols() != index.size())
    throw InvalidInput("winner determination: profile columns do not match bundle count");
}

}  // namespace detail

/// Exact winner determination by DP over (agent, remaining actions).
///
/// best[k][R] is the optimal welfare of agents k..n-1 restricted to actions
/// in R. Agent k either takes nothing or a bundle S inside R. Ties prefer
/// "nothing", then the lowest bundle position, resolved from agent 0 up, so
/// the result is the lexicographically first optimum.
inline WdSolution solve_wd(const Matrix& values, const BundleIndex& index) {
  detail::check_wd_shape(values, index);
  const std::size_t n = values.rows();
  const std::size_t states = std::size_t{1} << index.action_count;
  const std::uint32_t full = static_cast<std::uint32_t>(states - 1);

  std::vector<std::vector<double>> best(n + 1, std::vector<double>(states, 0.0));
  for (std::size_t k = n; k-- > 0;) {
    for (std::uint32_t r = 0; r < states; ++r) {
      double v = best[k + 1][r];
      for (std::size_t m = 0; m < index.size(); ++m) {
        const std::uint32_t s = index[m].mask;
        if ((s & ~r) != 0) continue;
        v = std::max(v, values(k, m) + best[k + 1][r & ~s]);
      }
      best[k][r] = v;
    }
  }

  WdSolution sol;
  sol.assignment.assign(n, std::nullopt);
  std::uint32_t remaining = full;
  for (std::size_t k = 0; k < n; ++k) {
    const double target = best[k][remaining];
    if (best[k + 1][remaining] == target) continue;
    for (std::size_t m = 0; m < index.size(); ++m) {
      const std::uint32_t s = index[m].mask;
      if ((s & ~remaining) != 0) continue;
      if (values(k, m) + best[k + 1][remaining & ~s] == target) {
        sol.assignment[k] = m;
        remaining &= ~s;
        break;
      }
    }
  }
  sol.welfare = n == 0 ? 0.0 : best[0][full];
  sol.used_actions = full & ~remaining;
  return sol;
}

inline constexpr std::size_t kBruteForceMaxAgents = 6;

/// Exhaustive enumeration of every feasible joint assignment. Welfare is
/// accumulated right-to-left (v0 + (v1 + ...)) to agree bit-for-bit with
/// the DP; candidates are visited in the DP's tie-break order, so keeping
/// the first strict improvement reproduces its choice.
inline WdSolution brute_force_wd(const Matrix& values, const BundleIndex& index) {
  detail::check_wd_shape(values, index);
  const std::size_t n = values.rows();
  if (n > kBruteForceMaxAgents) throw UnsupportedSize("brute_force_wd: more than 6 agents");

  std::vector<std::optional<std::size_t>> current(n), best_assign(n);
  double best_welfare = -1.0;
  bool have_best = false;

  auto evaluate = [&] {
    double w = 0.0;
    for (std::size_t k = n; k-- > 0;)
      if (current[k]) w = values(k, *current[k]) + w;
    if (!have_best || w > best_welfare) {
      best_welfare = w;
      best_assign = current;
      have_best = true;
    }
  };

  std::function<void(std::size_t, std::uint32_t)> recurse = [&](std::size_t k, std::uint32_t used) {
    if (k == n) {
      evaluate();
      return;
    }
    current[k] = std::nullopt;
    recurse(k + 1, used);
    for (std::size_t m = 0; m < index.size(); ++m) {
      if ((index[m].mask & used) != 0) continue;
      current[k] = m;
      recurse(k + 1, used | index[m].mask);
    }
    current[k] = std::nullopt;
  };
  recurse(0, 0);

  WdSolution sol;
  sol.assignment = best_assign;
  sol.welfare = have_best ? best_welfare : 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (sol.assignment[k]) sol.used_actions |= index[*sol.assignment[k]].mask;
  return sol;
}

inline Matrix without_agent(const Matrix& values, std::size_t i) {
  Matrix out(values.rows() - 1, values.cols());
  for (std::size_t r = 0, o = 0; r < values.rows(); ++r) {
    if (r == i) continue;
    for (std::size_t c = 0; c < values.cols(); ++c) out(o, c) = values(r, c);
    ++o;
  }
  return out;
}

/// Welfare-maximizing allocation with Clarke-pivot payments
/// p_i = W(-i) - (W* - v_i(S_i*)), floored at zero.
inline MechanismOutcome vcg_payments(const Matrix& values, const BundleIndex& index) {
  const WdSolution sol = solve_wd(values, index);
  const std::size_t n = values.rows();
  PaymentVector p(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double own = sol.assignment[i] ? values(i, *sol.assignment[i]) : 0.0;
    const double others_with_i = sol.welfare - own;
    const double others_without_i = solve_wd(without_agent(values, i), index).welfare;
    p[i] = std::max(0.0, others_without_i - others_with_i);
  }
  return make_outcome(sol.as_matrix(index.size()), std::move(p), values);
}

/// Each agent gets its own argmax bundle (lowest position on ties) with no
/// regard for conflicts between agents.
inline AllocationMatrix greedy_allocate(const Matrix& values, const BundleIndex& index) {
  if (values.rows() > 0 && values.cols() != index.size())
    throw InvalidInput("greedy_allocate: profile columns do not match bundle count");
  AllocationMatrix x(values.rows(), index.size());
  for (std::size_t i = 0; i < values.rows(); ++i) {
    const auto row = values.row(i);
    const auto it = std::max_element(row.begin(), row.end());
    if (it != row.end()) x(i, static_cast<std::size_t>(it - row.begin())) = 1.0;
  }
  return x;
}

/// A mechanism as seen by the regret probe: reported profile in, outcome out.
using OutcomeFn = std::function<MechanismOutcome(const Matrix& reported)>;

struct RegretSearch {
  double resolution = 0.05;        // grid spacing per coordinate
  std::size_t refine_steps = 50;   // local refinement sweeps
};

/// Black-box misreport probe for agent i: grid candidates (per-coordinate
/// lines through the truthful report, constant reports, scaled truthful
/// reports) followed by coordinate hill-climbing with a halving step.
/// Returns max(0, best utility - truthful utility).
inline double measured_regret(const OutcomeFn& mechanism, const Matrix& true_values,
                              std::size_t i, const RegretSearch& search = {}) {
  if (i >= true_values.rows()) throw InvalidInput("measured_regret: agent out of range");
  const std::size_t m_count = true_values.cols();

  auto utility_of = [&](std::span<const double> report) {
    Matrix reported = true_values;
    std::copy(report.begin(), report.end(), reported.row(i).begin());
    const MechanismOutcome out = mechanism(reported);
    return utility(i, out.allocation, out.payments, true_values);
  };

  const std::vector<double> truthful(true_values.row(i).begin(), true_values.row(i).end());
  const double truthful_utility = utility_of(truthful);

  std::vector<double> best = truthful;
  double best_utility = truthful_utility;
  auto consider = [&](const std::vector<double>& candidate) {
    const double u = utility_of(candidate);
    if (u > best_utility) {
      best_utility = u;
      best = candidate;
    }
  };

  const auto steps = static_cast<std::size_t>(std::llround(1.0 / search.resolution));
  std::vector<double> grid;
  for (std::size_t s = 0; s <= steps; ++s)
    grid.push_back(std::min(1.0, static_cast<double>(s) / static_cast<double>(steps)));

  for (std::size_t k = 0; k < m_count; ++k)
    for (double g : grid) {
      std::vector<double> c = truthful;
      c[k] = g;
      consider(c);
    }
  for (double g : grid) {
    consider(std::vector<double>(m_count, g));
    std::vector<double> scaled = truthful;
    for (double& v : scaled) v = std::clamp(v * g, 0.0, 1.0);
    consider(scaled);
  }

  double step = search.resolution;
  for (std::size_t sweep = 0; sweep < search.refine_steps; ++sweep) {
    bool improved = false;
    for (std::size_t k = 0; k < m_count; ++k)
      for (double dir : {-1.0, 1.0}) {
        std::vector<double> c = best;
        c[k] = std::clamp(c[k] + dir * step, 0.0, 1.0);
        const double before = best_utility;
        consider(c);
        improved = improved || best_utility > before;
      }
    if (!improved) step *= 0.5;
  }
  return std::max(0.0, best_utility - truthful_utility);
}

inline OutcomeFn vcg_mechanism(const BundleIndex& index) {
  return [index](const Matrix& reported) { return vcg_payments(reported, index); };
}

}  // namespace cyberauction
