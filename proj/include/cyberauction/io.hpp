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

// File formats: Q-matrices (CSV/JSON), valuation datasets, allocation
// tables, activity logs and environment configs.

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "cyberauction/core.hpp"
#include "cyberauction/simgym.hpp"
#include "cyberauction/valuation.hpp"

namespace cyberauction::io {

using nlohmann::json;

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  if (first < last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last || !std::isfinite(v))
    throw InvalidInput(where + ": not a finite number: '" + s + "'");
  return v;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot write " + path);
  out << text;
  if (!out) throw InvalidInput("failed writing " + path);
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInput(what + ": malformed JSON: " + e.what());
  }
}

/// Rows of comma-separated fields; blank lines are skipped.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.emplace_back();
    rows.push_back(std::move(fields));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Q-matrix files.

struct QFile {
  ActionCatalog catalog;
  QMatrix q;
};

inline std::string qmatrix_to_csv(const QMatrix& q, const ActionCatalog& catalog) {
  std::string out = "host_id,host_type";
  for (const auto& a : catalog.actions) out += "," + a;
  out += "\n";
  for (std::size_t i = 0; i < q.hosts(); ++i) {
    out += q.host_ids[i] + "," + to_string(q.host_types[i]);
    for (double v : q.values.row(i)) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

inline QFile qmatrix_from_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  if (rows.empty()) throw InvalidInput("Q-matrix CSV: empty file");
  const auto& header = rows[0];
  if (header.size() < 3 || header[0] != "host_id" || header[1] != "host_type")
    throw InvalidInput("Q-matrix CSV: header must be host_id,host_type,<actions...>");
  QFile f;
  f.catalog.actions.assign(header.begin() + 2, header.end());
  f.catalog.validate();
  const std::size_t k = f.catalog.size();
  f.q.values = Matrix(rows.size() - 1, k);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != k + 2)
      throw InvalidInput("Q-matrix CSV: row " + std::to_string(r) + " has wrong field count");
    f.q.host_ids.push_back(rows[r][0]);
    f.q.host_types.push_back(host_type_from_string(rows[r][1]));
    for (std::size_t a = 0; a < k; ++a)
      f.q.values(r - 1, a) = parse_double(rows[r][a + 2], "Q-matrix CSV row " + std::to_string(r));
  }
  f.q.validate();
  return f;
}

inline json qmatrix_to_json(const QMatrix& q, const ActionCatalog& catalog) {
  json hosts = json::array();
  for (std::size_t i = 0; i < q.hosts(); ++i)
    hosts.push_back({{"id", q.host_ids[i]},
                     {"type", to_string(q.host_types[i])},
                     {"q", std::vector<double>(q.values.row(i).begin(), q.values.row(i).end())}});
  return {{"actions", catalog.actions}, {"hosts", hosts}};
}

inline QFile qmatrix_from_json(const json& j) {
  try {
    QFile f;
    f.catalog.actions = j.at("actions").get<std::vector<std::string>>();
    f.catalog.validate();
    const auto& hosts = j.at("hosts");
    f.q.values = Matrix(hosts.size(), f.catalog.size());
    for (std::size_t i = 0; i < hosts.size(); ++i) {
      f.q.host_ids.push_back(hosts[i].at("id").get<std::string>());
      f.q.host_types.push_back(host_type_from_string(hosts[i].at("type").get<std::string>()));
      const auto q = hosts[i].at("q").get<std::vector<double>>();
      if (q.size() != f.catalog.size()) throw InvalidInput("Q-matrix JSON: q length != action count");
      for (std::size_t a = 0; a < q.size(); ++a) f.q.values(i, a) = q[a];
    }
    f.q.validate();
    return f;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("Q-matrix JSON: ") + e.what());
  }
}

/// JSON if the file starts with '{' (after whitespace), CSV otherwise.
inline QFile load_qmatrix(const std::string& path) {
  const std::string text = read_text(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{')
    return qmatrix_from_json(parse_json(text, path));
  return qmatrix_from_csv(text);
}

// ---------------------------------------------------------------------------
// Valuation datasets.

inline constexpr int kDatasetVersion = 1;

struct Dataset {
  ActionCatalog catalog;
  BundleIndex index;
  std::vector<std::string> host_ids;
  std::vector<HostType> host_types;
  std::vector<Matrix> samples;  // each hosts x bundles, normalized
  double raw_min = 0.0;
  double raw_max = 0.0;
  json config;  // provenance echo

  std::size_t hosts() const { return host_ids.size(); }
};

inline json dataset_to_json(const Dataset& d) {
  json bundles = json::array();
  for (std::size_t m = 0; m < d.index.size(); ++m) bundles.push_back(d.index.members(m));
  json hosts = json::array();
  for (std::size_t i = 0; i < d.hosts(); ++i)
    hosts.push_back({{"id", d.host_ids[i]}, {"type", to_string(d.host_types[i])}});
  json samples = json::array();
  for (const auto& s : d.samples) samples.push_back(s.data());
  return {{"version", kDatasetVersion}, {"actions", d.catalog.actions},
          {"bundles", bundles},         {"hosts", hosts},
          {"samples", samples},         {"raw_min", d.raw_min},
          {"raw_max", d.raw_max},       {"config", d.config}};
}

inline Dataset dataset_from_json(const json& j) {
  try {
    if (j.at("version").get<int>() != kDatasetVersion)
      throw InvalidInput("dataset: unsupported version");
    Dataset d;
    d.catalog.actions = j.at("actions").get<std::vector<std::string>>();
    d.catalog.validate();
    d.index = enumerate_bundles(d.catalog);
    const auto bundles = j.at("bundles").get<std::vector<std::vector<std::size_t>>>();
    if (bundles.size() != d.index.size()) throw InvalidInput("dataset: bundle count mismatch");
    for (std::size_t m = 0; m < bundles.size(); ++m)
      if (bundles[m] != d.index.members(m))
        throw InvalidInput("dataset: bundles not in ascending-bitmask order");
    if (j.contains("hosts")) {
      for (const auto& h : j.at("hosts")) {
        d.host_ids.push_back(h.at("id").get<std::string>());
        d.host_types.push_back(host_type_from_string(h.at("type").get<std::string>()));
      }
    }
    const std::size_t m_count = d.index.size();
    for (const auto& s : j.at("samples")) {
      auto flat = s.get<std::vector<double>>();
      if (flat.empty() || flat.size() % m_count != 0)
        throw InvalidInput("dataset: sample length is not a multiple of bundle count");
      for (double v : flat)
        if (!std::isfinite(v)) throw InvalidInput("dataset: non-finite valuation");
      const std::size_t n = flat.size() / m_count;
      if (!d.samples.empty() && d.samples[0].rows() != n)
        throw InvalidInput("dataset: samples have different host counts");
      d.samples.emplace_back(n, m_count, std::move(flat));
    }
    if (d.samples.empty()) throw InvalidInput("dataset: no samples");
    const std::size_t n = d.samples[0].rows();
    if (d.host_ids.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        d.host_ids.push_back("host" + std::to_string(i));
        d.host_types.push_back(HostType::User);
      }
    }
    if (d.host_ids.size() != n) throw InvalidInput("dataset: host list does not match sample rows");
    d.raw_min = j.value("raw_min", 0.0);
    d.raw_max = j.value("raw_max", 0.0);
    d.config = j.value("config", json::object());
    return d;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("dataset: ") + e.what());
  }
}

inline Dataset load_dataset(const std::string& path) {
  return dataset_from_json(parse_json(read_text(path), path));
}

// ---------------------------------------------------------------------------
// Allocation tables: one row per host, one column per bundle.

struct AllocationTable {
  std::vector<std::string> host_ids;
  std::vector<HostType> host_types;
  std::vector<std::string> labels;
  Matrix values;
};

inline std::string allocation_to_csv(const AllocationTable& t) {
  std::string out = "host_id,host_type";
  for (const auto& l : t.labels) out += "," + l;
  out += "\n";
  for (std::size_t i = 0; i < t.values.rows(); ++i) {
    out += t.host_ids[i] + "," + to_string(t.host_types[i]);
    for (double v : t.values.row(i)) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

inline AllocationTable allocation_from_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  if (rows.empty()) throw InvalidInput("allocation CSV: empty file");
  const auto& header = rows[0];
  if (header.size() < 3 || header[0] != "host_id" || header[1] != "host_type")
    throw InvalidInput("allocation CSV: header must be host_id,host_type,<bundles...>");
  AllocationTable t;
  t.labels.assign(header.begin() + 2, header.end());
  t.values = Matrix(rows.size() - 1, t.labels.size());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != header.size())
      throw InvalidInput("allocation CSV: row " + std::to_string(r) + " has wrong field count");
    t.host_ids.push_back(rows[r][0]);
    t.host_types.push_back(host_type_from_string(rows[r][1]));
    for (std::size_t m = 0; m < t.labels.size(); ++m)
      t.values(r - 1, m) = parse_double(rows[r][m + 2], "allocation CSV row " + std::to_string(r));
  }
  return t;
}

inline json allocation_to_json(const AllocationTable& t) {
  json rows = json::array();
  for (std::size_t i = 0; i < t.values.rows(); ++i)
    rows.push_back({{"host_id", t.host_ids[i]},
                    {"host_type", to_string(t.host_types[i])},
                    {"x", std::vector<double>(t.values.row(i).begin(), t.values.row(i).end())}});
  return {{"bundles", t.labels}, {"hosts", rows}};
}

// ---------------------------------------------------------------------------
// Activity logs: host_id,red_actions,blue_actions.

struct ActivityRow {
  std::string host_id;
  double red = 0.0;
  double blue = 0.0;
};

inline std::vector<ActivityRow> activity_from_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  if (rows.empty() || rows[0].size() != 3 || rows[0][0] != "host_id" ||
      rows[0][1] != "red_actions" || rows[0][2] != "blue_actions")
    throw InvalidInput("activity CSV: header must be host_id,red_actions,blue_actions");
  std::vector<ActivityRow> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 3)
      throw InvalidInput("activity CSV: row " + std::to_string(r) + " has wrong field count");
    const std::string where = "activity CSV row " + std::to_string(r);
    out.push_back({rows[r][0], parse_double(rows[r][1], where), parse_double(rows[r][2], where)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Environment config.

namespace detail {

template <typename T>
void take(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys,
                           const std::string& section) {
  if (!j.is_object()) throw InvalidInput(section + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw InvalidInput(section + ": unknown key '" + k + "'");
  }
}

}  // namespace detail

inline json gym_config_to_json(const gym::GymConfig& c) {
  std::vector<std::string> types;
  for (auto t : c.host_types) types.push_back(to_string(t));
  json penalties = json::object();
  for (const auto& [type, value] : c.compromise_penalty) penalties[to_string(type)] = value;
  return {{"n_hosts", c.n_hosts},
          {"host_types", types},
          {"host_ids", c.host_ids},
          {"adjacency", c.adjacency},
          {"restore_penalty", c.restore_penalty},
          {"remove_reward", c.remove_reward},
          {"q_remove", c.q_remove},
          {"compromise_penalty", penalties},
          {"horizon", c.horizon},
          {"attacker", gym::to_string(c.attacker)},
          {"chain", c.chain},
          {"entry_host", c.entry_host},
          {"attack_probability", c.attack_probability},
          {"seed", c.seed}};
}

/// Overlays the keys present in j onto base; unknown keys are rejected.
inline gym::GymConfig gym_config_from_json(const json& j, gym::GymConfig base = gym::default_config()) {
  detail::reject_unknown(j,
                         {"n_hosts", "host_types", "host_ids", "adjacency", "restore_penalty",
                          "remove_reward", "q_remove", "compromise_penalty", "horizon", "attacker",
                          "chain", "entry_host", "attack_probability", "seed"},
                         "gym");
  try {
    detail::take(j, "n_hosts", base.n_hosts);
    if (j.contains("host_types")) {
      base.host_types.clear();
      for (const auto& t : j.at("host_types")) base.host_types.push_back(host_type_from_string(t.get<std::string>()));
    }
    detail::take(j, "host_ids", base.host_ids);
    detail::take(j, "adjacency", base.adjacency);
    detail::take(j, "restore_penalty", base.restore_penalty);
    detail::take(j, "remove_reward", base.remove_reward);
    detail::take(j, "q_remove", base.q_remove);
    if (j.contains("compromise_penalty")) {
      for (const auto& [k, v] : j.at("compromise_penalty").items())
        base.compromise_penalty[host_type_from_string(k)] = v.get<double>();
    }
    detail::take(j, "horizon", base.horizon);
    if (j.contains("attacker")) base.attacker = gym::attacker_from_string(j.at("attacker").get<std::string>());
    detail::take(j, "chain", base.chain);
    detail::take(j, "entry_host", base.entry_host);
    detail::take(j, "attack_probability", base.attack_probability);
    detail::take(j, "seed", base.seed);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("gym: ") + e.what());
  }
  base.validate();
  return base;
}

}  // namespace cyberauction::io
