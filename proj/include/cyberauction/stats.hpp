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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "cyberauction/core.hpp"
#include "cyberauction/mechanism.hpp"

namespace cyberauction::stats {

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Survival function of the Kolmogorov distribution,
/// Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 0.2) return 1.0;  // the series sums to 1 within 1e-16 here
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b| with the
/// asymptotic p-value Q((sqrt(ne) + 0.12 + 0.11/sqrt(ne)) D), ne = nm/(n+m).
inline KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InvalidInput("ks_two_sample: empty sample");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  for (double v : x)
    if (!std::isfinite(v)) throw InvalidInput("ks_two_sample: non-finite value");
  for (double v : y)
    if (!std::isfinite(v)) throw InvalidInput("ks_two_sample: non-finite value");
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double t = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == t) ++i;
    while (j < y.size() && y[j] == t) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  const double ne = n * m / (n + m);
  const double root = std::sqrt(ne);
  return {d, kolmogorov_survival((root + 0.12 + 0.11 / root) * d)};
}

enum class Method { Pearson, Spearman };

inline std::string to_string(Method m) { return m == Method::Pearson ? "pearson" : "spearman"; }

struct CorrelationResult {
  double coefficient = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  Method method = Method::Pearson;
};

namespace detail {

inline void check_pair(std::span<const double> x, std::span<const double> y, const char* who) {
  if (x.size() != y.size()) throw InvalidInput(std::string(who) + ": length mismatch");
  if (x.size() < 3) throw InvalidInput(std::string(who) + ": need at least 3 observations");
  for (std::size_t k = 0; k < x.size(); ++k)
    if (!std::isfinite(x[k]) || !std::isfinite(y[k]))
      throw InvalidInput(std::string(who) + ": non-finite value");
}

inline double product_moment(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double dx = x[k] - mx, dy = y[k] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("correlation: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Two-sided p-value of r under H0 via t = r sqrt((n-2)/(1-r^2)), df = n-2.
inline double t_p_value(double r, std::size_t n) {
  if (n < 3) return 1.0;
  const double rr = r * r;
  if (rr >= 1.0) return 0.0;
  const double df = static_cast<double>(n - 2);
  const double t = std::abs(r) * std::sqrt(df / (1.0 - rr));
  const boost::math::students_t dist(df);
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, t)), 0.0, 1.0);
}

}  // namespace detail

/// 1-based ranks, ties sharing the average of the positions they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y, "pearson");
  const double r = detail::product_moment(x, y);
  return {r, detail::t_p_value(r, x.size()), x.size(), Method::Pearson};
}

inline constexpr std::size_t kExactPermutationLimit = 10;

/// Pearson correlation of average ranks. For n <= 10 the p-value is the
/// exact two-sided permutation probability P(|rho*| >= |rho|) over all n!
/// orderings of y's ranks; above that the t approximation is used.
inline CorrelationResult spearman(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y, "spearman");
  const auto rx = average_ranks(x);
  auto ry = average_ranks(y);
  const double rho = detail::product_moment(rx, ry);
  CorrelationResult out{rho, 1.0, x.size(), Method::Spearman};
  if (x.size() > kExactPermutationLimit) {
    out.p_value = detail::t_p_value(rho, x.size());
    return out;
  }
  // Centered ranks make each permuted coefficient a single dot product.
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  std::vector<double> cx(rx.size()), cy(ry.size());
  double sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < rx.size(); ++k) {
    cx[k] = rx[k] - mean;
    cy[k] = ry[k] - mean;
    sxx += cx[k] * cx[k];
    syy += cy[k] * cy[k];
  }
  const double denom = std::sqrt(sxx * syy);
  const double observed = std::abs(rho) - 1e-12;
  std::sort(cy.begin(), cy.end());
  std::size_t hits = 0, total = 0;
  do {
    double s = 0.0;
    for (std::size_t k = 0; k < cx.size(); ++k) s += cx[k] * cy[k];
    hits += std::abs(s / denom) >= observed;
    ++total;
  } while (std::next_permutation(cy.begin(), cy.end()));
  // next_permutation skips orderings that are equal as sequences; with tied
  // ranks each distinct ordering is equally likely, so the ratio is exact.
  out.p_value = static_cast<double>(hits) / static_cast<double>(total);
  return out;
}

/// score_i = mean over the batch of sum_S x[i][S].
inline std::vector<double> allocation_scores(std::span<const AllocationMatrix> batch) {
  if (batch.empty()) throw InvalidInput("allocation_scores: empty batch");
  const std::size_t n = batch[0].rows(), m = batch[0].cols();
  std::vector<double> scores(n, 0.0);
  for (const auto& x : batch) {
    if (x.rows() != n || x.cols() != m) throw InvalidInput("allocation_scores: shape mismatch");
    for (std::size_t i = 0; i < n; ++i)
      for (double v : x.row(i)) scores[i] += v;
  }
  for (double& s : scores) s /= static_cast<double>(batch.size());
  return scores;
}

struct Summary {
  std::size_t count = 0;
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

inline Summary summarize(std::span<const double> v) {
  if (v.empty()) throw InvalidInput("summarize: empty sample");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  const double median = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
  return {n, s.front(), median, s.back(), std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(n)};
}

}  // namespace cyberauction::stats
