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

// End-to-end steps shared by the command-line tool and the tests: dataset
// generation from the environment or a Q-matrix file, and evaluation of the
// learned, oracle and greedy mechanisms on a dataset.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cyberauction/baselines.hpp"
#include "cyberauction/core.hpp"
#include "cyberauction/io.hpp"
#include "cyberauction/mechanism.hpp"
#include "cyberauction/neural.hpp"
#include "cyberauction/simgym.hpp"
#include "cyberauction/stats.hpp"
#include "cyberauction/valuation.hpp"

namespace cyberauction {

enum class QSource { Simgym, File };
enum class Normalization { Global, PerInstance };

struct GenConfig {
  QSource source = QSource::Simgym;
  std::string q_file;
  std::size_t samples = 1000;
  Normalization normalization = Normalization::Global;
  double eps = kNormalizeEps;
  gym::GymConfig gym = gym::default_config();
  gym::QLearningConfig qlearning;
  CurvatureSpec curvature;
  std::uint64_t seed = 0;
};

struct GenResult {
  io::Dataset dataset;
  QMatrix mean_q;  // per-host Q the samples were drawn around
  std::vector<std::string> warnings;
};

/// Draws `samples` valuation profiles. With the environment source each
/// sample takes the per-host Q of one visited state, drawn in proportion to
/// visit counts (unvisited keys fall back to the host's mean Q); with a file
/// source every sample shares the same Q and differs only through curvature
/// noise. Sample s always uses the same random stream, whatever the worker
/// count.
inline GenResult generate_dataset(const GenConfig& cfg, std::size_t workers = 1) {
  if (cfg.samples == 0) throw InvalidInput("gen: samples must be >= 1");
  GenResult out;
  ActionCatalog catalog;
  std::vector<Matrix> qs(cfg.samples);

  if (cfg.source == QSource::Simgym) {
    gym::GymConfig g = cfg.gym;
    g.seed = hash_key(cfg.seed, 0x6e11);
    const gym::QTable table = gym::q_learning(g, cfg.qlearning);
    auto exported = gym::export_host_q(table, g);
    out.warnings = exported.warnings;
    out.mean_q = exported.q;
    const auto states = table.states();
    const auto weights = gym::state_weights(table);
    std::vector<double> cumulative(weights.size());
    double total = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) cumulative[k] = (total += weights[k]);
    parallel_for(cfg.samples, workers, [&](std::size_t s) {
      Rng rng(hash_key(cfg.seed, 0xda7a, s));
      const double u = rng.uniform() * total;
      const auto k = static_cast<std::size_t>(
          std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
      qs[s] = gym::state_q(table, states[std::min(k, states.size() - 1)], exported.q.values);
    });
  } else {
    const io::QFile file = io::load_qmatrix(cfg.q_file);
    catalog = file.catalog;
    out.mean_q = file.q;
    for (auto& q : qs) q = file.q.values;
  }
  catalog.validate();
  const BundleIndex index = enumerate_bundles(catalog);

  std::vector<Matrix> raws(cfg.samples);
  parallel_for(cfg.samples, workers, [&](std::size_t s) {
    raws[s] = build_profile(qs[s], cfg.curvature, index, s);
  });

  io::Dataset& d = out.dataset;
  const ValueRange range = value_range(raws);
  d.raw_min = range.min;
  d.raw_max = range.max;
  if (cfg.normalization == Normalization::Global) {
    d.samples = normalize_pooled(raws, cfg.eps);
  } else {
    for (const auto& r : raws) d.samples.push_back(normalize_matrix(r, cfg.eps));
  }
  d.catalog = catalog;
  d.index = index;
  d.host_ids = out.mean_q.host_ids;
  d.host_types = out.mean_q.host_types;
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation.

enum class EvalMode { Neural, Oracle, Greedy };

inline std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::Neural: return "neural";
    case EvalMode::Oracle: return "oracle";
    case EvalMode::Greedy: return "greedy";
  }
  return "?";
}

inline EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "neural") return EvalMode::Neural;
  if (s == "oracle") return EvalMode::Oracle;
  if (s == "greedy") return EvalMode::Greedy;
  throw InvalidInput("unknown eval mode '" + s + "'");
}

struct EvalConfig {
  std::size_t samples = 0;         // 0 = the whole dataset
  std::size_t regret_agents = 2;   // agents probed per sample
  RegretSearch search;
  bool misreport = false;          // evaluate under misreported profiles
  MisreportConfig misreport_cfg;
  std::uint64_t seed = 0;
};

struct SampleEval {
  double revenue = 0.0;
  double welfare = 0.0;
  double oracle_welfare = 0.0;
  bool feasible = true;
  bool ir = true;
  std::vector<std::size_t> probed;
  std::vector<double> regrets;
};

struct EvalReport {
  EvalMode mode = EvalMode::Neural;
  std::vector<SampleEval> per_sample;
  AllocationMatrix mean_allocation;
  std::vector<AllocationMatrix> allocations;

  std::size_t feasibility_violations() const {
    std::size_t k = 0;
    for (const auto& s : per_sample) k += !s.feasible;
    return k;
  }
  std::size_t ir_violations() const {
    std::size_t k = 0;
    for (const auto& s : per_sample) k += !s.ir;
    return k;
  }
  /// Samples whose revenue exceeds the oracle welfare on the same profile.
  std::size_t dominance_violations() const {
    std::size_t k = 0;
    for (const auto& s : per_sample) k += s.revenue > s.oracle_welfare + kFeasibilityTol;
    return k;
  }
};

/// Agents whose regret is probed on sample s: a fixed-seed draw without
/// replacement, reported in ascending order.
inline std::vector<std::size_t> probe_agents(std::size_t n, std::size_t count, std::uint64_t seed,
                                             std::size_t s) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (count >= n) return all;
  Rng rng(hash_key(seed, 0x9a0b, s));
  for (std::size_t k = 0; k < count; ++k) std::swap(all[k], all[k + rng.below(n - k)]);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

/// Runs one mechanism over the first `samples` profiles. Revenue and
/// regret are computed for the learned and oracle mechanisms; the greedy
/// heuristic has no payment rule, so only its allocation and welfare are
/// meaningful. With `misreport`, every agent's report is first replaced by
/// its best misreport against the learned model (params required), and all
/// accounting uses true valuations.
inline EvalReport evaluate(const io::Dataset& data, EvalMode mode, const ModelParams* params,
                           const EvalConfig& cfg, std::size_t workers = 1) {
  if ((mode == EvalMode::Neural || cfg.misreport) && params == nullptr)
    throw InvalidInput("eval: a checkpoint is required for this mode");
  if (params != nullptr && params->bundles != data.index.size())
    throw InvalidInput("eval: checkpoint bundle count does not match dataset");
  const BundleIndex& index = data.index;
  const std::size_t total =
      cfg.samples == 0 ? data.samples.size() : std::min(cfg.samples, data.samples.size());
  EvalReport report;
  report.mode = mode;
  report.per_sample.resize(total);
  report.allocations.resize(total);

  const OutcomeFn mechanism = [&](const Matrix& reported) -> MechanismOutcome {
    switch (mode) {
      case EvalMode::Neural: return forward(reported, *params, index);
      case EvalMode::Oracle: return vcg_payments(reported, index);
      case EvalMode::Greedy: break;
    }
    return make_outcome(greedy_allocate(reported, index), PaymentVector(reported.rows(), 0.0), reported);
  };

  parallel_for(total, workers, [&](std::size_t s) {
    const Matrix& truth = data.samples[s];
    Matrix reported = truth;
    if (cfg.misreport) {
      const auto found = neural_misreport_all(*params, index, truth, cfg.misreport_cfg,
                                              hash_key(cfg.seed, 0x3b1d, s));
      for (std::size_t i = 0; i < truth.rows(); ++i)
        std::copy(found[i].report.begin(), found[i].report.end(), reported.row(i).begin());
    }
    const MechanismOutcome out = mechanism(reported);
    SampleEval& e = report.per_sample[s];
    e.revenue = out.revenue;
    e.welfare = welfare(out.allocation, truth);
    e.oracle_welfare = solve_wd(reported, index).welfare;
    e.feasible = check_feasibility(out.allocation, index).ok;
    if (mode != EvalMode::Greedy) {
      const auto ir = ir_check(out, truth);
      e.ir = std::all_of(ir.begin(), ir.end(), [](bool b) { return b; });
      if (cfg.regret_agents > 0) {
        e.probed = probe_agents(truth.rows(), cfg.regret_agents, cfg.seed, s);
        for (std::size_t i : e.probed) e.regrets.push_back(measured_regret(mechanism, truth, i, cfg.search));
      }
    }
    report.allocations[s] = out.allocation;
  });
  if (total > 0) report.mean_allocation = mean_allocation(report.allocations);
  return report;
}

inline nlohmann::json eval_report_json(const EvalReport& r) {
  using nlohmann::json;
  const bool priced = r.mode != EvalMode::Greedy;
  double revenue = 0.0, welfare_sum = 0.0, oracle = 0.0, regret_sum = 0.0, regret_max = 0.0;
  std::size_t probes = 0;
  json samples = json::array();
  for (const auto& s : r.per_sample) {
    revenue += s.revenue;
    welfare_sum += s.welfare;
    oracle += s.oracle_welfare;
    for (double g : s.regrets) {
      regret_sum += g;
      regret_max = std::max(regret_max, g);
      ++probes;
    }
    json e = {{"welfare", s.welfare}, {"oracle_welfare", s.oracle_welfare}, {"feasible", s.feasible}};
    e["revenue"] = priced ? json(s.revenue) : json(nullptr);
    if (priced) {
      e["ir"] = s.ir;
      e["probed_agents"] = s.probed;
      e["regrets"] = s.regrets;
    }
    samples.push_back(e);
  }
  const double n = r.per_sample.empty() ? 1.0 : static_cast<double>(r.per_sample.size());
  json out = {{"mode", to_string(r.mode)},
              {"samples", r.per_sample.size()},
              {"welfare_mean", welfare_sum / n},
              {"oracle_welfare_mean", oracle / n},
              {"feasibility_violations", r.feasibility_violations()},
              {"per_sample", samples}};
  if (priced) {
    out["revenue_mean"] = revenue / n;
    out["regret"] = {{"mean", probes ? regret_sum / static_cast<double>(probes) : 0.0},
                     {"max", regret_max},
                     {"probes", probes}};
    out["ir_violations"] = r.ir_violations();
    out["revenue_dominance_violations"] = r.dominance_violations();
  } else {
    out["revenue_mean"] = nullptr;
    out["regret"] = nullptr;
  }
  return out;
}

}  // namespace cyberauction
