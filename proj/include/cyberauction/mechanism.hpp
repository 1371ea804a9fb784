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

// Shared auction data model: allocations, payments and the accounting that
// every mechanism (learned, oracle, greedy) is judged by.

#include <algorithm>
#include <numeric>
#include <vector>

#include "cyberauction/core.hpp"
#include "cyberauction/valuation.hpp"

namespace cyberauction {

inline constexpr double kFeasibilityTol = 1e-6;
inline constexpr double kIrTol = 1e-9;

/// x(i, m): probability that host i receives bundle m.
using AllocationMatrix = Matrix;
using PaymentVector = std::vector<double>;

struct MechanismOutcome {
  AllocationMatrix allocation;
  PaymentVector payments;
  double revenue = 0.0;
  double welfare = 0.0;
};

struct FeasibilityReport {
  bool ok = true;
  double max_row_excess = 0.0;     // max_i (sum_S x_iS - 1), floored at 0
  double max_action_excess = 0.0;  // max_a (load_a - 1), floored at 0
  std::vector<double> action_loads;
};

inline FeasibilityReport check_feasibility(const AllocationMatrix& x, const BundleIndex& index) {
  if (x.cols() != index.size())
    throw InvalidInput("check_feasibility: allocation columns do not match bundle count");
  FeasibilityReport report;
  report.action_loads.assign(index.action_count, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double row_sum = 0.0;
    for (std::size_t m = 0; m < x.cols(); ++m) {
      row_sum += x(i, m);
      for (std::size_t a = 0; a < index.action_count; ++a)
        if (index[m].contains(a)) report.action_loads[a] += x(i, m);
    }
    report.max_row_excess = std::max(report.max_row_excess, row_sum - 1.0);
  }
  for (double load : report.action_loads)
    report.max_action_excess = std::max(report.max_action_excess, load - 1.0);
  report.ok = report.max_row_excess <= kFeasibilityTol &&
              report.max_action_excess <= kFeasibilityTol;
  return report;
}

inline double allocated_value(std::size_t i, const AllocationMatrix& x, const Matrix& values) {
  double v = 0.0;
  for (std::size_t m = 0; m < x.cols(); ++m) v += x(i, m) * values(i, m);
  return v;
}

inline double welfare(const AllocationMatrix& x, const Matrix& values) {
  if (x.rows() != values.rows() || x.cols() != values.cols())
    throw InvalidInput("welfare: shape mismatch");
  double w = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) w += allocated_value(i, x, values);
  return w;
}

/// Expected value of i's allocation under its true valuation, minus payment.
inline double utility(std::size_t i, const AllocationMatrix& x, const PaymentVector& p,
                      const Matrix& true_values) {
  if (i >= x.rows() || i >= p.size()) throw InvalidInput("utility: agent out of range");
  return allocated_value(i, x, true_values) - p[i];
}

inline std::vector<bool> ir_check(const MechanismOutcome& outcome, const Matrix& true_values) {
  std::vector<bool> ok(outcome.payments.size());
  for (std::size_t i = 0; i < ok.size(); ++i)
    ok[i] = utility(i, outcome.allocation, outcome.payments, true_values) >= -kIrTol;
  return ok;
}

inline MechanismOutcome make_outcome(AllocationMatrix x, PaymentVector p, const Matrix& reported) {
  MechanismOutcome out;
  out.revenue = std::accumulate(p.begin(), p.end(), 0.0);
  out.welfare = welfare(x, reported);
  out.allocation = std::move(x);
  out.payments = std::move(p);
  return out;
}

/// Element-wise batch mean of allocation matrices (heatmap aggregation).
inline AllocationMatrix mean_allocation(std::span<const AllocationMatrix> batch) {
  if (batch.empty()) throw InvalidInput("mean_allocation: empty batch");
  AllocationMatrix acc(batch[0].rows(), batch[0].cols());
  for (const auto& x : batch) {
    if (x.rows() != acc.rows() || x.cols() != acc.cols())
      throw InvalidInput("mean_allocation: shape mismatch");
    for (std::size_t k = 0; k < x.size(); ++k) acc.data()[k] += x.data()[k];
  }
  for (double& v : acc.data()) v /= static_cast<double>(batch.size());
  return acc;
}

}  // namespace cyberauction
