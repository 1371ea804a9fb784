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

// Bundle enumeration and the Q-value -> bundle valuation pipeline.

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cyberauction/core.hpp"

namespace cyberauction {

enum class HostType { User, Enterprise, Operator, Defender };

inline std::string to_string(HostType t) {
  switch (t) {
    case HostType::User: return "User";
    case HostType::Enterprise: return "Enterprise";
    case HostType::Operator: return "Operator";
    case HostType::Defender: return "Defender";
  }
  return "User";
}

inline HostType host_type_from_string(const std::string& s) {
  if (s == "User") return HostType::User;
  if (s == "Enterprise") return HostType::Enterprise;
  if (s == "Operator") return HostType::Operator;
  if (s == "Defender") return HostType::Defender;
  throw InvalidInput("unknown host type '" + s + "'");
}

struct ActionCatalog {
  std::vector<std::string> actions{"Analyze", "Remove", "Restore"};

  std::size_t size() const { return actions.size(); }

  void validate() const {
    if (actions.empty()) throw InvalidInput("action catalog is empty");
    std::set<std::string> seen(actions.begin(), actions.end());
    if (seen.size() != actions.size())
      throw InvalidInput("action catalog has duplicate identifiers");
  }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t k = 0; k < actions.size(); ++k)
      if (actions[k] == name) return k;
    return std::nullopt;
  }
};

/// Non-empty action subset, bit k set <=> action k is a member.
struct Bundle {
  std::uint32_t mask = 0;

  int size() const { return std::popcount(mask); }
  bool contains(std::size_t action) const { return (mask >> action) & 1U; }
  bool overlaps(Bundle other) const { return (mask & other.mask) != 0; }
  bool operator==(const Bundle&) const = default;
};

struct BundleIndex {
  std::vector<Bundle> bundles;
  std::size_t action_count = 0;

  std::size_t size() const { return bundles.size(); }
  const Bundle& operator[](std::size_t m) const { return bundles[m]; }

  // Position of a bundle given its mask; masks are dense so this is mask - 1.
  std::size_t position(std::uint32_t mask) const { return static_cast<std::size_t>(mask) - 1; }

  std::vector<std::size_t> members(std::size_t m) const {
    std::vector<std::size_t> out;
    for (std::size_t a = 0; a < action_count; ++a)
      if (bundles[m].contains(a)) out.push_back(a);
    return out;
  }

  // "Analyze+Remove" style column label.
  std::string label(std::size_t m, const ActionCatalog& catalog) const {
    std::string out;
    for (std::size_t a : members(m)) {
      if (!out.empty()) out += '+';
      out += catalog.actions[a];
    }
    return out;
  }
};

// Bundles are stored as 32-bit masks; the winner-determination DP caps the
// catalog far lower than that.
inline constexpr std::size_t kMaxActions = 16;

inline BundleIndex enumerate_bundles(const ActionCatalog& catalog) {
  catalog.validate();
  if (catalog.size() > kMaxActions)
    throw UnsupportedSize("enumerate_bundles: more than 16 actions");
  BundleIndex index;
  index.action_count = catalog.size();
  const std::uint32_t count = (1U << catalog.size()) - 1U;
  index.bundles.reserve(count);
  for (std::uint32_t mask = 1; mask <= count; ++mask) index.bundles.push_back({mask});
  return index;
}

struct QMatrix {
  Matrix values;  // hosts x actions
  std::vector<std::string> host_ids;
  std::vector<HostType> host_types;

  std::size_t hosts() const { return values.rows(); }
  std::size_t actions() const { return values.cols(); }

  void validate() const {
    if (values.rows() == 0) throw InvalidInput("QMatrix: no hosts");
    if (host_ids.size() != values.rows() || host_types.size() != values.rows())
      throw InvalidInput("QMatrix: host labels do not match row count");
    for (double q : values.data())
      if (!std::isfinite(q)) throw InvalidInput("QMatrix: non-finite entry");
  }
};

/// Q(s,a) = V(s) + A(s,a), one row per host.
inline Matrix q_from_value_advantage(std::span<const double> state_values,
                                     const Matrix& advantages) {
  if (state_values.size() != advantages.rows())
    throw InvalidInput("q_from_value_advantage: host count mismatch");
  Matrix q = advantages;
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t k = 0; k < q.cols(); ++k) q(i, k) = state_values[i] + advantages(i, k);
  return q;
}

enum class Curvature { Additive, Submodular, Supermodular };

inline std::string to_string(Curvature c) {
  switch (c) {
    case Curvature::Additive: return "additive";
    case Curvature::Submodular: return "submodular";
    case Curvature::Supermodular: return "supermodular";
  }
  return "additive";
}

inline Curvature curvature_from_string(const std::string& s) {
  if (s == "additive") return Curvature::Additive;
  if (s == "submodular") return Curvature::Submodular;
  if (s == "supermodular") return Curvature::Supermodular;
  throw InvalidInput("unknown curvature kind '" + s + "'");
}

struct CurvatureSpec {
  Curvature kind = Curvature::Additive;
  double theta = 0.1;  // lambda for submodular, mu for supermodular
  std::uint64_t noise_seed = 0;
};

/// Value of one bundle: sum of member Q entries, minus (submodular) or plus
/// (supermodular) theta * (|S|-1)^2 * eps_draw.
inline double bundle_value(std::span<const double> q_row, Bundle bundle,
                           const CurvatureSpec& spec, double eps_draw) {
  double sum = 0.0;
  for (std::size_t a = 0; a < q_row.size(); ++a)
    if (bundle.contains(a)) sum += q_row[a];
  if (spec.kind == Curvature::Additive) return sum;
  const double extra = static_cast<double>(bundle.size() - 1);
  const double term = spec.theta * extra * extra * eps_draw;
  return spec.kind == Curvature::Submodular ? sum - term : sum + term;
}

/// Noise draw for (sample, host, bundle). Keyed rather than streamed so
/// regenerating any subset yields the same numbers.
inline double curvature_noise(std::uint64_t noise_seed, std::uint64_t sample,
                              std::uint64_t host, std::uint32_t mask) {
  return unit_from_bits(hash_key(noise_seed, sample, host, mask));
}

inline Matrix build_profile(const Matrix& q, const CurvatureSpec& spec,
                            const BundleIndex& index, std::uint64_t sample = 0) {
  if (q.cols() != index.action_count)
    throw InvalidInput("build_profile: Q column count does not match catalog");
  Matrix raw(q.rows(), index.size());
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t m = 0; m < index.size(); ++m) {
      const double eps = curvature_noise(spec.noise_seed, sample, i, index[m].mask);
      raw(i, m) = bundle_value(q.row(i), index[m], spec, eps);
    }
  return raw;
}

inline constexpr double kNormalizeEps = 1e-8;

struct ValueRange {
  double min = 0.0;
  double max = 0.0;
};

inline ValueRange value_range(std::span<const Matrix> raws) {
  ValueRange r{std::numeric_limits<double>::infinity(),
               -std::numeric_limits<double>::infinity()};
  for (const auto& m : raws)
    for (double x : m.data()) {
      if (!std::isfinite(x)) throw InvalidInput("normalize: non-finite input");
      r.min = std::min(r.min, x);
      r.max = std::max(r.max, x);
    }
  return r;
}

inline Matrix apply_min_max(const Matrix& raw, ValueRange range, double eps) {
  Matrix out = raw;
  const double denom = range.max - range.min + eps;
  for (double& x : out.data()) x = (x - range.min) / denom;
  return out;
}

struct ValuationProfile {
  Matrix values;  // hosts x bundles, entries in [0,1]
  BundleIndex bundle_index;
  std::vector<std::string> host_ids;
};

/// Global min-max scaling (x - min) / (max - min + eps).
inline Matrix normalize_matrix(const Matrix& raw, double eps = kNormalizeEps) {
  if (!(eps > 0.0)) throw InvalidInput("normalize: eps must be positive");
  const Matrix* one = &raw;
  return apply_min_max(raw, value_range(std::span<const Matrix>(one, 1)), eps);
}

inline ValuationProfile normalize_profile(const Matrix& raw, const BundleIndex& index,
                                          std::vector<std::string> host_ids,
                                          double eps = kNormalizeEps) {
  return {normalize_matrix(raw, eps), index, std::move(host_ids)};
}

/// Pooled normalization: one min/max over every matrix in the set.
inline std::vector<Matrix> normalize_pooled(std::span<const Matrix> raws,
                                            double eps = kNormalizeEps) {
  if (!(eps > 0.0)) throw InvalidInput("normalize: eps must be positive");
  const ValueRange range = value_range(raws);
  std::vector<Matrix> out;
  out.reserve(raws.size());
  for (const auto& m : raws) out.push_back(apply_min_max(m, range, eps));
  return out;
}

}  // namespace cyberauction
