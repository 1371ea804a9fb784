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
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "cyberauction/core.hpp"
#include "cyberauction/valuation.hpp"

namespace cyberauction::gym {

// A small discounted network-defense MDP. Each host carries two flags,
// (compromised, observed); the joint state packs them at bits 2h and 2h+1.
// One step: the defender acts on one host, every host still compromised
// costs its type's penalty, then the attacker advances.

enum class Attacker { Chain, RandomWalk };

inline std::string to_string(Attacker a) { return a == Attacker::Chain ? "chain" : "random-walk"; }

inline Attacker attacker_from_string(const std::string& s) {
  if (s == "chain") return Attacker::Chain;
  if (s == "random-walk") return Attacker::RandomWalk;
  throw InvalidInput("unknown attacker kind: " + s);
}

enum class Action : std::size_t { Analyze = 0, Remove = 1, Restore = 2 };
inline constexpr std::size_t kActionCount = 3;
inline constexpr std::size_t kMaxHosts = 32;

struct BlueAction {
  std::size_t host = 0;
  Action action = Action::Analyze;
};

using State = std::uint64_t;

constexpr bool compromised(State s, std::size_t h) { return (s >> (2 * h)) & 1U; }
constexpr bool observed(State s, std::size_t h) { return (s >> (2 * h + 1)) & 1U; }
constexpr State set_flags(State s, std::size_t h, bool comp, bool obs) {
  s &= ~(State{3} << (2 * h));
  return s | (State{comp} << (2 * h)) | (State{obs} << (2 * h + 1));
}

struct GymConfig {
  std::size_t n_hosts = 0;
  std::vector<HostType> host_types;
  std::vector<std::string> host_ids;
  std::vector<std::vector<std::size_t>> adjacency;
  double restore_penalty = -1.0;
  double remove_reward = 0.1;
  double q_remove = 0.9;
  std::map<HostType, double> compromise_penalty{{HostType::User, -0.1},
                                                {HostType::Enterprise, -0.5},
                                                {HostType::Operator, -1.0},
                                                {HostType::Defender, -0.5}};
  std::size_t horizon = 30;
  Attacker attacker = Attacker::RandomWalk;
  std::vector<std::size_t> chain;  // chain attacker visiting order; empty = 0..n-1
  std::size_t entry_host = 0;      // random-walk foothold
  double attack_probability = 0.3;
  std::uint64_t seed = 0;

  double penalty(std::size_t h) const {
    const auto it = compromise_penalty.find(host_types[h]);
    return it == compromise_penalty.end() ? 0.0 : it->second;
  }

  std::vector<std::size_t> chain_order() const {
    if (!chain.empty()) return chain;
    std::vector<std::size_t> order(n_hosts);
    for (std::size_t h = 0; h < n_hosts; ++h) order[h] = h;
    return order;
  }

  void validate() const {
    if (n_hosts == 0) throw InvalidInput("gym: n_hosts must be >= 1");
    if (n_hosts > kMaxHosts) throw UnsupportedSize("gym: at most 32 hosts");
    if (host_types.size() != n_hosts) throw InvalidInput("gym: host_types length != n_hosts");
    if (!host_ids.empty() && host_ids.size() != n_hosts)
      throw InvalidInput("gym: host_ids length != n_hosts");
    if (adjacency.size() != n_hosts) throw InvalidInput("gym: adjacency length != n_hosts");
    for (std::size_t h = 0; h < n_hosts; ++h)
      for (std::size_t g : adjacency[h]) {
        if (g >= n_hosts || g == h) throw InvalidInput("gym: bad adjacency entry");
        const auto& back = adjacency[g];
        if (std::find(back.begin(), back.end(), h) == back.end())
          throw InvalidInput("gym: adjacency must be symmetric");
      }
    std::vector<bool> seen(n_hosts, false);
    std::queue<std::size_t> frontier;
    frontier.push(0);
    seen[0] = true;
    std::size_t reached = 1;
    while (!frontier.empty()) {
      const std::size_t h = frontier.front();
      frontier.pop();
      for (std::size_t g : adjacency[h])
        if (!seen[g]) {
          seen[g] = true;
          ++reached;
          frontier.push(g);
        }
    }
    if (reached != n_hosts) throw InvalidInput("gym: host graph is not connected");
    if (horizon < 1) throw InvalidInput("gym: horizon must be >= 1");
    if (!(q_remove >= 0.0 && q_remove <= 1.0)) throw InvalidInput("gym: q_remove outside [0,1]");
    if (!(attack_probability >= 0.0 && attack_probability <= 1.0))
      throw InvalidInput("gym: attack_probability outside [0,1]");
    if (entry_host >= n_hosts) throw InvalidInput("gym: entry_host out of range");
    if (!chain.empty()) {
      std::set<std::size_t> uniq(chain.begin(), chain.end());
      if (uniq.size() != chain.size() || *uniq.rbegin() >= n_hosts)
        throw InvalidInput("gym: chain must list distinct valid hosts");
    }
    for (const auto& [type, value] : compromise_penalty)
      if (!(value <= 0.0)) throw InvalidInput("gym: compromise penalties must be <= 0");
    if (!(restore_penalty <= 0.0)) throw InvalidInput("gym: restore_penalty must be <= 0");
  }

  std::string host_id(std::size_t h) const {
    return host_ids.empty() ? "host" + std::to_string(h) : host_ids[h];
  }
};

/// Thirteen hosts in the layout of a small enterprise network: one defender,
/// three enterprise servers, four operational hosts and five user machines.
/// User machines form the entry subnet; the operational subnet sits behind
/// the enterprise servers.
inline GymConfig default_config() {
  GymConfig c;
  c.n_hosts = 13;
  c.host_ids = {"Defender",   "Enterprise0", "Enterprise1", "Enterprise2", "Op_Host0",
                "Op_Host1",   "Op_Host2",    "Op_Server0",  "User0",       "User1",
                "User2",      "User3",       "User4"};
  c.host_types = {HostType::Defender, HostType::Enterprise, HostType::Enterprise,
                  HostType::Enterprise, HostType::Operator, HostType::Operator,
                  HostType::Operator, HostType::Operator, HostType::User,
                  HostType::User, HostType::User, HostType::User,
                  HostType::User};
  c.adjacency.assign(13, {});
  auto link = [&](std::size_t a, std::size_t b) {
    c.adjacency[a].push_back(b);
    c.adjacency[b].push_back(a);
  };
  for (std::size_t u = 8; u <= 12; ++u) link(u, u == 8 || u == 9 ? 1 : 2);
  link(8, 9);
  link(10, 11);
  link(11, 12);
  link(1, 2);
  link(2, 3);
  link(1, 3);
  link(0, 1);
  link(0, 3);
  link(3, 7);
  for (std::size_t o = 4; o <= 6; ++o) link(o, 7);
  for (auto& row : c.adjacency) std::sort(row.begin(), row.end());
  c.chain = {8, 1, 3, 7, 4, 5, 6, 0, 2, 9, 10, 11, 12};
  c.entry_host = 8;
  return c;
}

struct Outcome {
  double probability = 1.0;
  State next = 0;
  double reward = 0.0;
};

/// Every possible (probability, next state, reward) for one step, in a fixed
/// order. Both step() and value_iteration() are built on this.
inline std::vector<Outcome> transitions(const GymConfig& c, State s,
                                        const std::optional<BlueAction>& blue) {
  struct Partial {
    double probability;
    State state;
    double reward;
  };
  std::vector<Partial> after_blue;
  if (!blue) {
    after_blue.push_back({1.0, s, 0.0});
  } else {
    const std::size_t h = blue->host;
    if (h >= c.n_hosts) throw InvalidInput("gym: host index out of range");
    switch (blue->action) {
      case Action::Analyze:
        after_blue.push_back({1.0, set_flags(s, h, compromised(s, h), compromised(s, h)), 0.0});
        break;
      case Action::Remove:
        if (!compromised(s, h)) {
          after_blue.push_back({1.0, s, 0.0});
        } else {
          if (c.q_remove > 0.0)
            after_blue.push_back({c.q_remove, set_flags(s, h, false, false), c.remove_reward});
          if (c.q_remove < 1.0) after_blue.push_back({1.0 - c.q_remove, s, 0.0});
        }
        break;
      case Action::Restore:
        after_blue.push_back({1.0, set_flags(s, h, false, false), c.restore_penalty});
        break;
      default:
        throw InvalidInput("gym: unknown action");
    }
  }

  std::vector<Outcome> out;
  const auto order = c.attacker == Attacker::Chain ? c.chain_order() : std::vector<std::size_t>{};
  for (const auto& p : after_blue) {
    double reward = p.reward;
    for (std::size_t h = 0; h < c.n_hosts; ++h)
      if (compromised(p.state, h)) reward += c.penalty(h);

    if (c.attacker == Attacker::Chain) {
      State next = p.state;
      for (std::size_t h : order)
        if (!compromised(next, h)) {
          next = set_flags(next, h, true, observed(next, h));
          break;
        }
      out.push_back({p.probability, next, reward});
      continue;
    }

    std::vector<std::size_t> targets;
    bool any = false;
    for (std::size_t h = 0; h < c.n_hosts; ++h) any = any || compromised(p.state, h);
    if (!any) {
      targets.push_back(c.entry_host);
    } else {
      for (std::size_t h = 0; h < c.n_hosts; ++h) {
        if (compromised(p.state, h)) continue;
        for (std::size_t g : c.adjacency[h])
          if (compromised(p.state, g)) {
            targets.push_back(h);
            break;
          }
      }
    }
    const double hit = targets.empty() ? 0.0 : c.attack_probability;
    if (hit < 1.0) out.push_back({p.probability * (1.0 - hit), p.state, reward});
    for (std::size_t h : targets)
      out.push_back({p.probability * hit / static_cast<double>(targets.size()),
                     set_flags(p.state, h, true, observed(p.state, h)), reward});
  }
  return out;
}

struct StepResult {
  State next = 0;
  double reward = 0.0;
};

inline StepResult step(const GymConfig& c, State s, const std::optional<BlueAction>& blue,
                       Rng& rng) {
  const auto outcomes = transitions(c, s, blue);
  if (outcomes.size() == 1) return {outcomes[0].next, outcomes[0].reward};
  const double u = rng.uniform();
  double acc = 0.0;
  for (const auto& o : outcomes) {
    acc += o.probability;
    if (u < acc) return {o.next, o.reward};
  }
  return {outcomes.back().next, outcomes.back().reward};
}

inline constexpr State kInitialState = 0;

inline std::size_t action_slot(std::size_t host, Action a) {
  return host * kActionCount + static_cast<std::size_t>(a);
}

inline BlueAction slot_action(std::size_t slot) {
  return {slot / kActionCount, static_cast<Action>(slot % kActionCount)};
}

/// Tabular Q over (state, host, action). Keys that were never updated are
/// absent: a zero visit count means "no estimate", not "zero".
class QTable {
 public:
  explicit QTable(std::size_t n_hosts = 0) : n_hosts_(n_hosts) {}

  std::size_t hosts() const { return n_hosts_; }
  std::size_t slots() const { return n_hosts_ * kActionCount; }

  std::optional<double> get(State s, std::size_t host, Action a) const {
    const auto it = rows_.find(s);
    if (it == rows_.end()) return std::nullopt;
    const std::size_t k = action_slot(host, a);
    if (it->second.visits[k] == 0) return std::nullopt;
    return it->second.q[k];
  }

  std::uint64_t visits(State s, std::size_t host, Action a) const {
    const auto it = rows_.find(s);
    return it == rows_.end() ? 0 : it->second.visits[action_slot(host, a)];
  }

  /// Current estimate with unvisited keys read as 0 (the initial value).
  double value_or_zero(State s, std::size_t slot) const {
    const auto it = rows_.find(s);
    return it == rows_.end() ? 0.0 : it->second.q[slot];
  }

  void set(State s, std::size_t slot, double value, std::uint64_t add_visits = 1) {
    auto& row = row_for(s);
    row.q[slot] = value;
    row.visits[slot] += add_visits;
  }

  double max_value(State s) const {
    const auto it = rows_.find(s);
    if (it == rows_.end()) return 0.0;
    return *std::max_element(it->second.q.begin(), it->second.q.end());
  }

  std::size_t greedy_slot(State s) const {
    const auto it = rows_.find(s);
    if (it == rows_.end()) return 0;
    const auto& q = it->second.q;
    return static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
  }

  std::size_t key_count() const {
    std::size_t k = 0;
    for (const auto& [s, row] : rows_)
      for (auto v : row.visits) k += v > 0;
    return k;
  }

  bool empty() const { return key_count() == 0; }

  /// Visited states in ascending order.
  std::vector<State> states() const {
    std::vector<State> out;
    for (const auto& [s, row] : rows_) out.push_back(s);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Row {
    std::vector<double> q;
    std::vector<std::uint64_t> visits;
  };

  Row& row_for(State s) {
    auto it = rows_.find(s);
    if (it == rows_.end())
      it = rows_.emplace(s, Row{std::vector<double>(slots(), 0.0),
                              std::vector<std::uint64_t>(slots(), 0)})
               .first;
    return it->second;
  }

  std::size_t n_hosts_ = 0;
  std::unordered_map<State, Row> rows_;
};

struct QLearningConfig {
  std::size_t episodes = 5000;
  double alpha = 0.2;
  double discount = 0.9;
  double explore = 0.1;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidInput("q_learning: alpha must lie in (0,1]");
    if (!(discount >= 0.0 && discount < 1.0))
      throw InvalidInput("q_learning: discount must lie in [0,1)");
    if (!(explore >= 0.0 && explore <= 1.0))
      throw InvalidInput("q_learning: explore must lie in [0,1]");
  }
};

/// One-step Q-learning with epsilon-greedy exploration. Episodes start from
/// the all-clean state and are truncated (not terminated) at the horizon, so
/// every update bootstraps. Episode e draws from Rng(hash_key(seed, e)).
inline QTable q_learning(const GymConfig& c, const QLearningConfig& q) {
  c.validate();
  q.validate();
  QTable table(c.n_hosts);
  const std::size_t slots = table.slots();
  for (std::size_t e = 0; e < q.episodes; ++e) {
    Rng rng(hash_key(c.seed, 0x91ea, e));
    State s = kInitialState;
    for (std::size_t t = 0; t < c.horizon; ++t) {
      std::size_t slot;
      if (q.explore > 0.0 && rng.uniform() < q.explore)
        slot = rng.below(slots);
      else
        slot = table.greedy_slot(s);
      const auto [next, reward] = step(c, s, slot_action(slot), rng);
      const double target = reward + q.discount * table.max_value(next);
      const double old = table.value_or_zero(s, slot);
      table.set(s, slot, old + q.alpha * (target - old));
      s = next;
    }
  }
  return table;
}

inline constexpr std::size_t kMaxExactStates = 10000;

/// Exact Q by Bellman iteration over every state reachable from the
/// all-clean start. Converges to a sup-norm change below tol.
inline QTable value_iteration(const GymConfig& c, double discount, double tol = 1e-10,
                              std::size_t max_sweeps = 1000000) {
  c.validate();
  if (!(discount >= 0.0 && discount < 1.0))
    throw InvalidInput("value_iteration: discount must lie in [0,1)");
  const std::size_t slots = c.n_hosts * kActionCount;

  std::vector<State> states{kInitialState};
  std::unordered_map<State, std::size_t> id{{kInitialState, 0}};
  std::vector<std::vector<std::vector<std::pair<std::size_t, Outcome>>>> model;
  for (std::size_t k = 0; k < states.size(); ++k) {
    model.emplace_back(slots);
    for (std::size_t a = 0; a < slots; ++a)
      for (const auto& o : transitions(c, states[k], slot_action(a))) {
        auto it = id.find(o.next);
        if (it == id.end()) {
          if (states.size() >= kMaxExactStates)
            throw UnsupportedSize("value_iteration: more than 10^4 reachable states");
          it = id.emplace(o.next, states.size()).first;
          states.push_back(o.next);
        }
        model[k][a].emplace_back(it->second, o);
      }
  }

  std::vector<std::vector<double>> q(states.size(), std::vector<double>(slots, 0.0));
  std::vector<double> v(states.size(), 0.0);
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double change = 0.0;
    for (std::size_t k = 0; k < states.size(); ++k)
      for (std::size_t a = 0; a < slots; ++a) {
        double total = 0.0;
        for (const auto& [next, o] : model[k][a]) total += o.probability * (o.reward + discount * v[next]);
        change = std::max(change, std::abs(total - q[k][a]));
        q[k][a] = total;
      }
    for (std::size_t k = 0; k < states.size(); ++k) v[k] = *std::max_element(q[k].begin(), q[k].end());
    if (change < tol) break;
  }

  QTable table(c.n_hosts);
  for (std::size_t k = 0; k < states.size(); ++k)
    for (std::size_t a = 0; a < slots; ++a) table.set(states[k], a, q[k][a]);
  return table;
}

struct HostQExport {
  QMatrix q;
  std::vector<std::string> warnings;
};

/// Per (host, action): visit-weighted mean of Q over all states.
inline HostQExport export_host_q(const QTable& table, const GymConfig& c) {
  if (table.empty()) throw InvalidInput("export_host_q: empty table");
  if (table.hosts() != c.n_hosts) throw InvalidInput("export_host_q: host count mismatch");
  HostQExport out;
  out.q.values = Matrix(c.n_hosts, kActionCount);
  std::vector<double> weight(c.n_hosts * kActionCount, 0.0);
  for (State s : table.states())
    for (std::size_t h = 0; h < c.n_hosts; ++h)
      for (std::size_t a = 0; a < kActionCount; ++a) {
        const auto act = static_cast<Action>(a);
        const auto n = table.visits(s, h, act);
        if (n == 0) continue;
        out.q.values(h, a) += static_cast<double>(n) * *table.get(s, h, act);
        weight[h * kActionCount + a] += static_cast<double>(n);
      }
  for (std::size_t h = 0; h < c.n_hosts; ++h) {
    bool visited = false;
    for (std::size_t a = 0; a < kActionCount; ++a) {
      const double w = weight[h * kActionCount + a];
      if (w > 0.0) {
        out.q.values(h, a) /= w;
        visited = true;
      }
    }
    if (!visited) out.warnings.push_back("host " + c.host_id(h) + " was never visited; exported as 0");
    out.q.host_ids.push_back(c.host_id(h));
    out.q.host_types.push_back(c.host_types[h]);
  }
  return out;
}

/// Q(s, h, .) for one state, falling back to a per-host default for keys the
/// table never visited.
inline Matrix state_q(const QTable& table, State s, const Matrix& fallback) {
  Matrix out(table.hosts(), kActionCount);
  for (std::size_t h = 0; h < table.hosts(); ++h)
    for (std::size_t a = 0; a < kActionCount; ++a) {
      const auto v = table.get(s, h, static_cast<Action>(a));
      out(h, a) = v ? *v : fallback(h, a);
    }
  return out;
}

/// Visit counts summed over all (host, action) keys for each visited state,
/// aligned with table.states().
inline std::vector<double> state_weights(const QTable& table) {
  std::vector<double> w;
  for (State s : table.states()) {
    double total = 0.0;
    for (std::size_t h = 0; h < table.hosts(); ++h)
      for (std::size_t a = 0; a < kActionCount; ++a)
        total += static_cast<double>(table.visits(s, h, static_cast<Action>(a)));
    w.push_back(total);
  }
  return w;
}

}  // namespace cyberauction::gym
