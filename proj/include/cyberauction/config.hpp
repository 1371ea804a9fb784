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

// Run configuration: one JSON document with gym, curvature, gen, train and
// eval sections. Keys that are absent keep their defaults; unknown keys are
// rejected before any work starts.

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "cyberauction/io.hpp"
#include "cyberauction/neural.hpp"
#include "cyberauction/pipeline.hpp"

namespace cyberauction {

struct RunConfig {
  std::uint64_t seed = 0;
  GenConfig gen;
  TrainConfig train;
  std::optional<double> stop_regret;  // end training once regret_mean drops below
  EvalMode eval_mode = EvalMode::Neural;
  EvalConfig eval;

  void validate() const {
    gen.gym.validate();
    gen.qlearning.validate();
    if (gen.samples == 0) throw InvalidInput("gen.samples must be >= 1");
    if (!(gen.eps > 0.0)) throw InvalidInput("gen.eps must be positive");
    if (!(gen.curvature.theta >= 0.0)) throw InvalidInput("curvature.theta must be >= 0");
    if (gen.source == QSource::File && gen.q_file.empty())
      throw InvalidInput("gen.q_file is required when gen.source is 'file'");
    train.validate();
    if (!(eval.search.resolution > 0.0 && eval.search.resolution <= 1.0))
      throw InvalidInput("eval.resolution must lie in (0,1]");
  }
};

namespace detail {

using nlohmann::json;

inline std::string source_name(QSource s) { return s == QSource::Simgym ? "simgym" : "file"; }

inline QSource source_from_string(const std::string& s) {
  if (s == "simgym") return QSource::Simgym;
  if (s == "file") return QSource::File;
  throw InvalidInput("gen.source must be 'simgym' or 'file'");
}

inline std::string normalization_name(Normalization n) {
  return n == Normalization::Global ? "global" : "per-instance";
}

inline Normalization normalization_from_string(const std::string& s) {
  if (s == "global") return Normalization::Global;
  if (s == "per-instance") return Normalization::PerInstance;
  throw InvalidInput("gen.normalization must be 'global' or 'per-instance'");
}

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  using nlohmann::json;
  json gym = io::gym_config_to_json(c.gen.gym);
  gym.erase("seed");
  gym["q_learning"] = {{"episodes", c.gen.qlearning.episodes},
                       {"alpha", c.gen.qlearning.alpha},
                       {"discount", c.gen.qlearning.discount},
                       {"explore", c.gen.qlearning.explore}};
  json curvature = {{"kind", to_string(c.gen.curvature.kind)},
                    {"noise_seed", c.gen.curvature.noise_seed}};
  if (c.gen.curvature.kind != Curvature::Additive) curvature["theta"] = c.gen.curvature.theta;
  json gen = {{"source", detail::source_name(c.gen.source)},
              {"samples", c.gen.samples},
              {"normalization", detail::normalization_name(c.gen.normalization)},
              {"eps", c.gen.eps}};
  if (c.gen.source == QSource::File) gen["q_file"] = c.gen.q_file;
  const TrainConfig& t = c.train;
  json train = {{"gamma", t.gamma},
                {"misreport_steps", t.misreport.steps},
                {"misreport_lr", t.misreport.lr},
                {"restarts", t.misreport.restarts},
                {"batch_size", t.batch_size},
                {"iterations", t.iterations},
                {"lr", t.lr},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_eps", t.adam_eps},
                {"stop_regret", c.stop_regret ? json(*c.stop_regret) : json(nullptr)},
                {"model",
                 {{"d_model", t.hyper.d_model},
                  {"layers", t.hyper.layers},
                  {"heads", t.hyper.heads},
                  {"d_ff", t.hyper.d_ff}}}};
  json eval = {{"mode", to_string(c.eval_mode)},
               {"samples", c.eval.samples},
               {"regret_agents", c.eval.regret_agents},
               {"resolution", c.eval.search.resolution},
               {"refine_steps", c.eval.search.refine_steps},
               {"misreport", c.eval.misreport}};
  return {{"seed", c.seed}, {"gym", gym}, {"curvature", curvature}, {"gen", gen},
          {"train", train}, {"eval", eval}};
}

/// Overlays a JSON document onto the defaults (or onto `base`).
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {}) {
  using io::detail::reject_unknown;
  using io::detail::take;
  reject_unknown(j, {"seed", "gym", "curvature", "gen", "train", "eval"}, "config");
  try {
    take(j, "seed", base.seed);
    if (j.contains("gym")) {
      nlohmann::json g = j.at("gym");
      if (g.is_object() && g.contains("q_learning")) {
        const auto& q = g.at("q_learning");
        reject_unknown(q, {"episodes", "alpha", "discount", "explore"}, "gym.q_learning");
        take(q, "episodes", base.gen.qlearning.episodes);
        take(q, "alpha", base.gen.qlearning.alpha);
        take(q, "discount", base.gen.qlearning.discount);
        take(q, "explore", base.gen.qlearning.explore);
        g.erase("q_learning");
      }
      if (g.is_object() && g.contains("seed")) throw InvalidInput("gym: use the top-level seed");
      base.gen.gym = io::gym_config_from_json(g, base.gen.gym);
    }
    if (j.contains("curvature")) {
      const auto& c = j.at("curvature");
      reject_unknown(c, {"kind", "theta", "noise_seed"}, "curvature");
      if (c.contains("kind")) base.gen.curvature.kind = curvature_from_string(c.at("kind").get<std::string>());
      take(c, "theta", base.gen.curvature.theta);
      take(c, "noise_seed", base.gen.curvature.noise_seed);
    }
    if (j.contains("gen")) {
      const auto& g = j.at("gen");
      reject_unknown(g, {"source", "q_file", "samples", "normalization", "eps"}, "gen");
      if (g.contains("source")) base.gen.source = detail::source_from_string(g.at("source").get<std::string>());
      take(g, "q_file", base.gen.q_file);
      take(g, "samples", base.gen.samples);
      if (g.contains("normalization"))
        base.gen.normalization = detail::normalization_from_string(g.at("normalization").get<std::string>());
      take(g, "eps", base.gen.eps);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      reject_unknown(t,
                     {"gamma", "misreport_steps", "misreport_lr", "restarts", "batch_size", "iterations",
                      "lr", "beta1", "beta2", "adam_eps", "stop_regret", "model"},
                     "train");
      take(t, "gamma", base.train.gamma);
      take(t, "misreport_steps", base.train.misreport.steps);
      take(t, "misreport_lr", base.train.misreport.lr);
      take(t, "restarts", base.train.misreport.restarts);
      take(t, "batch_size", base.train.batch_size);
      take(t, "iterations", base.train.iterations);
      take(t, "lr", base.train.lr);
      take(t, "beta1", base.train.beta1);
      take(t, "beta2", base.train.beta2);
      take(t, "adam_eps", base.train.adam_eps);
      if (t.contains("stop_regret")) {
        const auto& v = t.at("stop_regret");
        base.stop_regret = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      }
      if (t.contains("model")) {
        const auto& m = t.at("model");
        reject_unknown(m, {"d_model", "layers", "heads", "d_ff"}, "train.model");
        take(m, "d_model", base.train.hyper.d_model);
        take(m, "layers", base.train.hyper.layers);
        take(m, "heads", base.train.hyper.heads);
        take(m, "d_ff", base.train.hyper.d_ff);
      }
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      reject_unknown(e, {"mode", "samples", "regret_agents", "resolution", "refine_steps", "misreport"}, "eval");
      if (e.contains("mode")) base.eval_mode = eval_mode_from_string(e.at("mode").get<std::string>());
      take(e, "samples", base.eval.samples);
      take(e, "regret_agents", base.eval.regret_agents);
      take(e, "resolution", base.eval.search.resolution);
      take(e, "refine_steps", base.eval.search.refine_steps);
      take(e, "misreport", base.eval.misreport);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("config: ") + e.what());
  }
  return base;
}

/// Seeds every stage from the top-level seed.
inline void derive_seeds(RunConfig& c) {
  c.gen.seed = c.seed;
  c.train.seed = c.seed;
  c.eval.seed = c.seed;
  c.eval.misreport_cfg = c.train.misreport;
}

}  // namespace cyberauction
