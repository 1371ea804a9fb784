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

// The `cyberauction` command-line tool: gen, train, eval, correlate and
// ksdist. Exit codes: 0 success, 2 input error, 3 runtime error or
// training divergence.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cyberauction/config.hpp"
#include "cyberauction/io.hpp"
#include "cyberauction/neural.hpp"
#include "cyberauction/pipeline.hpp"
#include "cyberauction/simgym.hpp"
#include "cyberauction/stats.hpp"

namespace cyberauction::cli {

using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitRuntime = 3;

struct SharedFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::size_t workers = 1;
};

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline std::string out_path(const SharedFlags& f, const std::string& name) {
  return (std::filesystem::path(f.out_dir) / name).string();
}

inline RunConfig load_run_config(const SharedFlags& f) {
  RunConfig c;
  if (!f.config_path.empty()) c = run_config_from_json(io::parse_json(io::read_text(f.config_path), f.config_path));
  if (f.seed) c.seed = *f.seed;
  return c;
}

inline void prepare_out_dir(const SharedFlags& f) {
  std::error_code ec;
  std::filesystem::create_directories(f.out_dir, ec);
  if (ec) throw InvalidInput("cannot create output directory " + f.out_dir);
}

inline void write_json(const std::string& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------

struct GenFlags {
  std::optional<std::string> source, q_file, curvature, normalization;
  std::optional<std::size_t> samples;
  std::optional<double> theta;
};

inline int cmd_gen(const SharedFlags& f, const GenFlags& g, Streams io_) {
  RunConfig c = load_run_config(f);
  if (g.source) c.gen.source = detail::source_from_string(*g.source);
  if (g.q_file) {
    c.gen.q_file = *g.q_file;
    if (!g.source) c.gen.source = QSource::File;
  }
  if (g.curvature) c.gen.curvature.kind = curvature_from_string(*g.curvature);
  if (g.normalization) c.gen.normalization = detail::normalization_from_string(*g.normalization);
  if (g.samples) c.gen.samples = *g.samples;
  if (g.theta) c.gen.curvature.theta = *g.theta;
  derive_seeds(c);
  c.validate();
  prepare_out_dir(f);

  GenResult r = generate_dataset(c.gen, f.workers);
  for (const auto& w : r.warnings) io_.err << "warning: " << w << "\n";
  r.dataset.config = run_config_to_json(c);
  const std::string path = out_path(f, "dataset.json");
  io::write_text(path, io::dataset_to_json(r.dataset).dump() + "\n");
  io::write_text(out_path(f, "q_mean.csv"), io::qmatrix_to_csv(r.mean_q, r.dataset.catalog));

  const auto& d = r.dataset;
  io_.out << "wrote " << path << "\n"
          << "hosts " << d.hosts() << ", bundles " << d.index.size() << ", samples " << d.samples.size()
          << "\nraw value range [" << io::format_double(d.raw_min) << ", " << io::format_double(d.raw_max)
          << "]\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
  std::string dataset;
  std::optional<std::size_t> iterations, batch_size;
  std::optional<double> gamma, stop_regret;
  std::string init;
};

inline int cmd_train(const SharedFlags& f, const TrainFlags& t, Streams io_) {
  RunConfig c = load_run_config(f);
  if (t.iterations) c.train.iterations = *t.iterations;
  if (t.batch_size) c.train.batch_size = *t.batch_size;
  if (t.gamma) c.train.gamma = *t.gamma;
  if (t.stop_regret) c.stop_regret = *t.stop_regret;
  derive_seeds(c);
  c.validate();
  const io::Dataset data = io::load_dataset(t.dataset);
  std::optional<ModelParams> initial;
  if (!t.init.empty()) {
    initial = load_checkpoint(t.init);
    c.train.hyper = initial->hyper;
  }
  prepare_out_dir(f);

  const std::string metrics_path = out_path(f, "metrics.jsonl");
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw InvalidInput("cannot write " + metrics_path);
  const json provenance = run_config_to_json(c);
  const MetricsObserver observer = [&](const MetricsRecord& r) {
    metrics << to_json(r).dump() << "\n" << std::flush;
    return !(c.stop_regret && r.regret_mean < *c.stop_regret);
  };
  TrainResult result;
  try {
    result = train(data.samples, data.index, c.train, observer, f.workers, initial);
  } catch (const TrainingDiverged& e) {
    io_.err << "error: " << e.what() << " (loss " << e.record.loss << ")\n";
    return kExitRuntime;
  }
  const std::string ckpt = out_path(f, "checkpoint.json");
  save_checkpoint(result.params, ckpt, provenance);
  const auto& last = result.metrics.back();
  io_.out << "wrote " << ckpt << " and " << metrics_path << "\n"
          << "iterations " << result.metrics.size() << ", final revenue_mean " << last.revenue_mean
          << ", regret_mean " << last.regret_mean << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalFlags {
  std::string dataset, checkpoint;
  std::optional<std::string> mode;
  std::optional<std::size_t> samples, regret_agents;
  bool misreport = false;
};

inline int cmd_eval(const SharedFlags& f, const EvalFlags& e, Streams io_) {
  RunConfig c = load_run_config(f);
  if (e.mode) c.eval_mode = eval_mode_from_string(*e.mode);
  if (e.samples) c.eval.samples = *e.samples;
  if (e.regret_agents) c.eval.regret_agents = *e.regret_agents;
  if (e.misreport) c.eval.misreport = true;
  derive_seeds(c);
  c.validate();
  const io::Dataset data = io::load_dataset(e.dataset);
  std::optional<ModelParams> params;
  if (!e.checkpoint.empty()) params = load_checkpoint(e.checkpoint);
  if (params && params->bundles != data.index.size())
    throw InvalidInput("eval: checkpoint and dataset disagree on bundle count");
  prepare_out_dir(f);

  const EvalReport report = evaluate(data, c.eval_mode, params ? &*params : nullptr, c.eval, f.workers);
  json j = eval_report_json(report);
  j["config"] = run_config_to_json(c);
  const std::string mode = to_string(c.eval_mode) + (c.eval.misreport ? "_misreport" : "");
  write_json(out_path(f, "eval_" + mode + ".json"), j);

  io::AllocationTable table;
  table.host_ids = data.host_ids;
  table.host_types = data.host_types;
  for (std::size_t m = 0; m < data.index.size(); ++m) table.labels.push_back(data.index.label(m, data.catalog));
  table.values = report.mean_allocation;
  io::write_text(out_path(f, "allocation_" + mode + ".csv"), io::allocation_to_csv(table));

  if (c.eval_mode == EvalMode::Oracle && !c.eval.misreport) {
    json payments = json::array();
    const std::size_t total = report.per_sample.size();
    for (std::size_t s = 0; s < total; ++s) payments.push_back(vcg_payments(data.samples[s], data.index).payments);
    write_json(out_path(f, "vcg_payments.json"), payments);
  }
  io_.out << "mode " << mode << ", samples " << report.per_sample.size() << ", welfare_mean "
          << j["welfare_mean"].get<double>();
  if (!j["revenue_mean"].is_null()) io_.out << ", revenue_mean " << j["revenue_mean"].get<double>();
  io_.out << "\n";
  if (c.eval_mode == EvalMode::Neural && report.dominance_violations() > 0)
    io_.err << "warning: " << report.dominance_violations() << " samples with revenue above oracle welfare\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct CorrelateFlags {
  std::string allocation, activity;
};

inline json correlation_json(const std::vector<double>& x, const std::vector<double>& y,
                             stats::Method method, std::vector<std::string>& warnings,
                             const std::string& label) {
  try {
    const auto r = method == stats::Method::Pearson ? stats::pearson(x, y) : stats::spearman(x, y);
    return {{"coefficient", r.coefficient}, {"p_value", r.p_value}, {"n", r.n}};
  } catch (const UndefinedCorrelation& e) {
    warnings.push_back(label + " " + stats::to_string(method) + ": " + e.what());
  } catch (const InvalidInput& e) {
    warnings.push_back(label + " " + stats::to_string(method) + ": " + e.what());
  }
  return nullptr;
}

/// Six rows, Red/Blue activity x {all, enterprises, users}, each with the
/// Pearson and Spearman correlation against allocation scores.
inline json correlation_table(const io::AllocationTable& alloc, const std::vector<io::ActivityRow>& activity,
                              std::vector<std::string>& warnings) {
  std::map<std::string, const io::ActivityRow*> by_id;
  for (const auto& a : activity)
    if (!by_id.emplace(a.host_id, &a).second) throw InvalidInput("activity CSV: duplicate host " + a.host_id);
  if (by_id.size() != alloc.host_ids.size()) throw InvalidInput("correlate: host ids differ between files");
  for (const auto& id : alloc.host_ids)
    if (!by_id.count(id)) throw InvalidInput("correlate: host " + id + " missing from activity CSV");

  json rows = json::array();
  for (const char* team : {"Red", "Blue"}) {
    for (const char* subset : {"all", "enterprises", "users"}) {
      std::vector<double> scores, counts;
      for (std::size_t i = 0; i < alloc.host_ids.size(); ++i) {
        const HostType t = alloc.host_types[i];
        if (std::string(subset) == "enterprises" && t != HostType::Enterprise) continue;
        if (std::string(subset) == "users" && t != HostType::User) continue;
        double score = 0.0;
        for (double v : alloc.values.row(i)) score += v;
        const auto* a = by_id.at(alloc.host_ids[i]);
        scores.push_back(score);
        counts.push_back(std::string(team) == "Red" ? a->red : a->blue);
      }
      const std::string label = std::string(team) + "/" + subset;
      rows.push_back({{"actions", team},
                      {"hosts", subset},
                      {"n", scores.size()},
                      {"pearson", correlation_json(scores, counts, stats::Method::Pearson, warnings, label)},
                      {"spearman", correlation_json(scores, counts, stats::Method::Spearman, warnings, label)}});
    }
  }
  return rows;
}

inline int cmd_correlate(const SharedFlags& f, const CorrelateFlags& c, Streams io_) {
  const auto alloc = io::allocation_from_csv(io::read_text(c.allocation));
  const auto activity = io::activity_from_csv(io::read_text(c.activity));
  std::vector<std::string> warnings;
  const json rows = correlation_table(alloc, activity, warnings);
  for (const auto& w : warnings) io_.err << "warning: " << w << "\n";
  prepare_out_dir(f);
  const std::string path = out_path(f, "correlation.json");
  write_json(path, {{"rows", rows}, {"warnings", warnings},
                    {"inputs", {{"allocation", c.allocation}, {"activity", c.activity}}}});
  io_.out << "wrote " << path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct KsFlags {
  std::string source = "simgym";  // simgym | dataset | qfile
  std::vector<std::string> inputs;
};

/// Values grouped as all / User / Enterprise. The environment source uses
/// every visited state-level Q(s, h, a); Q files use their entries; a
/// dataset uses its normalized bundle valuations.
inline std::map<std::string, std::vector<double>> ks_groups(const RunConfig& c, const KsFlags& k) {
  std::map<std::string, std::vector<double>> groups{{"all", {}}, {"user", {}}, {"enterprise", {}}};
  auto add = [&](HostType t, double v) {
    groups["all"].push_back(v);
    if (t == HostType::User) groups["user"].push_back(v);
    if (t == HostType::Enterprise) groups["enterprise"].push_back(v);
  };
  if (k.source == "simgym") {
    gym::GymConfig g = c.gen.gym;
    g.seed = hash_key(c.seed, 0x6e11);
    const auto table = gym::q_learning(g, c.gen.qlearning);
    for (auto s : table.states())
      for (std::size_t h = 0; h < g.n_hosts; ++h)
        for (std::size_t a = 0; a < gym::kActionCount; ++a)
          if (const auto v = table.get(s, h, static_cast<gym::Action>(a))) add(g.host_types[h], *v);
  } else if (k.source == "qfile") {
    if (k.inputs.empty()) throw InvalidInput("ksdist: --input is required for qfile");
    for (const auto& path : k.inputs) {
      const auto f = io::load_qmatrix(path);
      for (std::size_t i = 0; i < f.q.hosts(); ++i)
        for (double v : f.q.values.row(i)) add(f.q.host_types[i], v);
    }
  } else if (k.source == "dataset") {
    if (k.inputs.empty()) throw InvalidInput("ksdist: --input is required for dataset");
    for (const auto& path : k.inputs) {
      const auto d = io::load_dataset(path);
      for (const auto& s : d.samples)
        for (std::size_t i = 0; i < s.rows(); ++i)
          for (double v : s.row(i)) add(d.host_types[i], v);
    }
  } else {
    throw InvalidInput("ksdist: --source must be simgym, dataset or qfile");
  }
  for (const auto& [name, values] : groups)
    if (values.empty()) throw InvalidInput("ksdist: group '" + name + "' is empty");
  return groups;
}

inline int cmd_ksdist(const SharedFlags& f, const KsFlags& k, Streams io_) {
  RunConfig c = load_run_config(f);
  derive_seeds(c);
  c.validate();
  const auto groups = ks_groups(c, k);
  json summary = json::object();
  for (const auto& [name, values] : groups) {
    const auto s = stats::summarize(values);
    summary[name] = {{"count", s.count}, {"min", s.min}, {"median", s.median}, {"max", s.max}, {"mean", s.mean}};
  }
  json pairs = json::array();
  const std::vector<std::string> order{"all", "user", "enterprise"};
  for (std::size_t a = 0; a < order.size(); ++a)
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const auto r = stats::ks_two_sample(groups.at(order[a]), groups.at(order[b]));
      pairs.push_back({{"a", order[a]}, {"b", order[b]}, {"statistic", r.statistic}, {"p_value", r.p_value}});
    }
  prepare_out_dir(f);
  const std::string path = out_path(f, "ks.json");
  json out = {{"source", k.source}, {"groups", summary}, {"pairs", pairs}};
  if (k.source == "simgym") out["config"] = run_config_to_json(c);
  else out["inputs"] = k.inputs;
  write_json(path, out);
  io_.out << "wrote " << path << "\n";
  for (const auto& p : pairs)
    io_.out << p["a"].get<std::string>() << " vs " << p["b"].get<std::string>() << ": D = "
            << p["statistic"].get<double>() << ", p = " << p["p_value"].get<double>() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Auction-based planning of cyber-defense actions"};
  app.require_subcommand(1);
  SharedFlags shared;
  std::optional<std::uint64_t> seed;
  auto add_shared = [&](CLI::App* sub) {
    sub->add_option("--config", shared.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Seed for every random stream");
    sub->add_option("--out-dir", shared.out_dir, "Directory for output files");
    sub->add_option("--workers", shared.workers, "Parallel workers over samples")->check(CLI::PositiveNumber);
  };

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a valuation dataset");
  add_shared(gen_cmd);
  gen_cmd->add_option("--source", gen.source, "simgym or file");
  gen_cmd->add_option("--q-file", gen.q_file, "Q-matrix CSV or JSON");
  gen_cmd->add_option("--samples", gen.samples, "Number of profiles");
  gen_cmd->add_option("--curvature", gen.curvature, "additive, submodular or supermodular");
  gen_cmd->add_option("--theta", gen.theta, "Curvature strength");
  gen_cmd->add_option("--normalization", gen.normalization, "global or per-instance");

  TrainFlags tr;
  auto* train_cmd = app.add_subcommand("train", "Train the learned mechanism");
  add_shared(train_cmd);
  train_cmd->add_option("--dataset", tr.dataset, "Dataset JSON")->required();
  train_cmd->add_option("--iterations", tr.iterations, "Outer iterations");
  train_cmd->add_option("--batch-size", tr.batch_size, "Profiles per iteration");
  train_cmd->add_option("--gamma", tr.gamma, "Revenue/regret trade-off");
  train_cmd->add_option("--stop-regret", tr.stop_regret, "Stop once regret_mean falls below this");
  train_cmd->add_option("--init", tr.init, "Resume from a checkpoint");

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a mechanism on a dataset");
  add_shared(eval_cmd);
  eval_cmd->add_option("--dataset", ev.dataset, "Dataset JSON")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Trained checkpoint");
  eval_cmd->add_option("--mode", ev.mode, "neural, oracle or greedy");
  eval_cmd->add_option("--samples", ev.samples, "Profiles to evaluate (0 = all)");
  eval_cmd->add_option("--regret-agents", ev.regret_agents, "Agents probed for regret per profile");
  eval_cmd->add_flag("--misreport", ev.misreport, "Evaluate under misreported valuations");

  CorrelateFlags co;
  auto* corr_cmd = app.add_subcommand("correlate", "Correlate allocation scores with activity");
  add_shared(corr_cmd);
  corr_cmd->add_option("--allocation", co.allocation, "Allocation CSV")->required();
  corr_cmd->add_option("--activity", co.activity, "Activity CSV host_id,red_actions,blue_actions")->required();

  KsFlags ks;
  auto* ks_cmd = app.add_subcommand("ksdist", "KS tests across host-type groups");
  add_shared(ks_cmd);
  ks_cmd->add_option("--source", ks.source, "simgym, dataset or qfile");
  ks_cmd->add_option("--input", ks.inputs, "Dataset or Q-matrix files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  shared.seed = seed;
  const Streams streams{out, err};
  try {
    if (*gen_cmd) return cmd_gen(shared, gen, streams);
    if (*train_cmd) return cmd_train(shared, tr, streams);
    if (*eval_cmd) return cmd_eval(shared, ev, streams);
    if (*corr_cmd) return cmd_correlate(shared, co, streams);
    if (*ks_cmd) return cmd_ksdist(shared, ks, streams);
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const UnsupportedSize& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const UndefinedCorrelation& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitInput;
}

}  // namespace cyberauction::cli
