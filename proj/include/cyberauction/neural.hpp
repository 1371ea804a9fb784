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

// The learned auction mechanism.
//
// Agents are tokens (one bid row each) fed through a Transformer encoder
// without positional encodings, so the network is permutation-equivariant
// in the agents. Two heads read the embeddings:
//
//   allocation: per-agent logits over M bundles plus a null outcome. A row
//     softmax gives r[i][S]; for each action a, a softmax over every (i, S)
//     with a in S plus a dummy "unallocated" logit gives caps c_a[i][S].
//     x[i][S] = min(r[i][S], min_{a in S} c_a[i][S]), so row sums and
//     per-action loads never exceed 1.
//
//   payment: p~_i = sigmoid(w . h_i + b) and p_i = p~_i * sum_S x[i][S] v[i][S],
//     so truthful utility (1 - p~_i) * value is never negative.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cyberauction/autodiff.hpp"
#include "cyberauction/core.hpp"
#include "cyberauction/mechanism.hpp"
#include "cyberauction/valuation.hpp"

namespace cyberauction {

struct Hyper {
  std::size_t d_model = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_ff = 64;

  bool operator==(const Hyper&) const = default;

  void validate() const {
    if (d_model == 0 || layers == 0 || heads == 0 || d_ff == 0)
      throw InvalidInput("model hyperparameters must be positive");
    if (d_model % heads != 0) throw InvalidInput("d_model must be divisible by heads");
  }
};

struct EncoderBlock {
  ad::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Tensor ln1_gain, ln1_shift;
  ad::Tensor ff1_w, ff1_b, ff2_w, ff2_b;
  ad::Tensor ln2_gain, ln2_shift;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "wq", self.wq);
    f(prefix + "bq", self.bq);
    f(prefix + "wk", self.wk);
    f(prefix + "bk", self.bk);
    f(prefix + "wv", self.wv);
    f(prefix + "bv", self.bv);
    f(prefix + "wo", self.wo);
    f(prefix + "bo", self.bo);
    f(prefix + "ln1_gain", self.ln1_gain);
    f(prefix + "ln1_shift", self.ln1_shift);
    f(prefix + "ff1_w", self.ff1_w);
    f(prefix + "ff1_b", self.ff1_b);
    f(prefix + "ff2_w", self.ff2_w);
    f(prefix + "ff2_b", self.ff2_b);
    f(prefix + "ln2_gain", self.ln2_gain);
    f(prefix + "ln2_shift", self.ln2_shift);
  }
};

struct ModelParams {
  Hyper hyper;
  std::size_t bundles = 0;  // M
  ad::Tensor embed_w, embed_b;
  std::vector<EncoderBlock> blocks;
  ad::Tensor alloc_w, alloc_b;  // d_model -> M + 1 (last column: null outcome)
  ad::Tensor pay_w, pay_b;      // d_model -> 1

  // Visits every weight tensor in a fixed order with a stable name.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const ad::Tensor& t) { n += t.size(); });
    return n;
  }

  /// Copy whose tensors are leaves on `tape`.
  ModelParams tracked_on(ad::Tape& tape) const {
    ModelParams out = *this;
    out.visit([&](const std::string&, ad::Tensor& t) { t = tape.track(t); });
    return out;
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F&& f) {
    f("embed_w", self.embed_w);
    f("embed_b", self.embed_b);
    for (std::size_t l = 0; l < self.blocks.size(); ++l)
      EncoderBlock::visit(self.blocks[l], "block" + std::to_string(l) + ".", f);
    f("alloc_w", self.alloc_w);
    f("alloc_b", self.alloc_b);
    f("pay_w", self.pay_w);
    f("pay_b", self.pay_b);
  }
};

namespace detail {

inline ad::Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (double& x : w) x = rng.uniform(-limit, limit);
  return ad::Tensor(fan_in, fan_out, std::move(w));
}

}  // namespace detail

inline ModelParams init_params(const Hyper& hyper, std::size_t bundles, std::uint64_t seed) {
  hyper.validate();
  if (bundles == 0) throw InvalidInput("init_params: no bundles");
  Rng rng(hash_key(seed, 0x1417));
  const std::size_t d = hyper.d_model;
  ModelParams p;
  p.hyper = hyper;
  p.bundles = bundles;
  p.embed_w = detail::xavier(bundles, d, rng);
  p.embed_b = ad::Tensor(1, d);
  for (std::size_t l = 0; l < hyper.layers; ++l) {
    EncoderBlock b;
    b.wq = detail::xavier(d, d, rng);
    b.bq = ad::Tensor(1, d);
    b.wk = detail::xavier(d, d, rng);
    b.bk = ad::Tensor(1, d);
    b.wv = detail::xavier(d, d, rng);
    b.bv = ad::Tensor(1, d);
    b.wo = detail::xavier(d, d, rng);
    b.bo = ad::Tensor(1, d);
    b.ln1_gain = ad::Tensor(1, d, 1.0);
    b.ln1_shift = ad::Tensor(1, d);
    b.ff1_w = detail::xavier(d, hyper.d_ff, rng);
    b.ff1_b = ad::Tensor(1, hyper.d_ff);
    b.ff2_w = detail::xavier(hyper.d_ff, d, rng);
    b.ff2_b = ad::Tensor(1, d);
    b.ln2_gain = ad::Tensor(1, d, 1.0);
    b.ln2_shift = ad::Tensor(1, d);
    p.blocks.push_back(std::move(b));
  }
  p.alloc_w = detail::xavier(d, bundles + 1, rng);
  p.alloc_b = ad::Tensor(1, bundles + 1);
  p.pay_w = detail::xavier(d, 1, rng);
  p.pay_b = ad::Tensor(1, 1);
  return p;
}

/// Zeroes every weight, including layer-norm gains.
inline ModelParams zero_params(const Hyper& hyper, std::size_t bundles) {
  ModelParams p = init_params(hyper, bundles, 0);
  p.visit([](const std::string&, ad::Tensor& t) { t = ad::Tensor(t.rows(), t.cols()); });
  return p;
}

namespace detail {

inline ad::Tensor linear(const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b) {
  return ad::add(ad::matmul(x, w), b);
}

inline ad::Tensor self_attention(const ad::Tensor& h, const EncoderBlock& blk, std::size_t heads,
                                 std::size_t groups) {
  const std::size_t d = h.cols();
  const std::size_t dk = d / heads;
  const ad::Tensor q = linear(h, blk.wq, blk.bq);
  const ad::Tensor k = linear(h, blk.wk, blk.bk);
  const ad::Tensor v = linear(h, blk.wv, blk.bv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<ad::Tensor> outs;
  outs.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const ad::Tensor qh = ad::slice(q, 1, hd * dk, (hd + 1) * dk);
    const ad::Tensor kh = ad::slice(k, 1, hd * dk, (hd + 1) * dk);
    const ad::Tensor vh = ad::slice(v, 1, hd * dk, (hd + 1) * dk);
    const ad::Tensor scores = ad::scale(ad::block_matmul(qh, kh, groups, true), scale);
    outs.push_back(ad::block_matmul(ad::softmax(scores, 1), vh, groups, false));
  }
  return linear(heads == 1 ? outs[0] : ad::concat(outs, 1), blk.wo, blk.bo);
}

inline void require_finite(const ad::Tensor& t, const char* what) {
  for (double v : t.values())
    if (!std::isfinite(v)) throw InvalidInput(what);
}

}  // namespace detail

/// Agent embeddings, n x d_model. `groups` independent profiles may be
/// stacked along the rows; attention never mixes tokens across groups.
inline ad::Tensor encode(const ad::Tensor& bids, const ModelParams& p, std::size_t groups = 1) {
  if (bids.cols() != p.bundles) throw InvalidInput("encode: bid width does not match model");
  if (groups == 0 || bids.rows() % groups != 0)
    throw InvalidInput("encode: rows not divisible by group count");
  detail::require_finite(bids, "encode: non-finite bid");
  ad::Tensor h = detail::linear(bids, p.embed_w, p.embed_b);
  for (const auto& blk : p.blocks) {
    h = ad::layer_norm(ad::add(h, detail::self_attention(h, blk, p.hyper.heads, groups)),
                       blk.ln1_gain, blk.ln1_shift);
    const ad::Tensor ff = detail::linear(
        ad::relu(detail::linear(h, blk.ff1_w, blk.ff1_b)), blk.ff2_w, blk.ff2_b);
    h = ad::layer_norm(ad::add(h, ff), blk.ln2_gain, blk.ln2_shift);
  }
  return h;
}

/// Feasible allocation from n x (M+1) logits (last column = null).
inline ad::Tensor allocate_from_logits(const ad::Tensor& logits, const BundleIndex& index) {
  const std::size_t n = logits.rows();
  const std::size_t m_count = index.size();
  if (logits.cols() != m_count + 1) throw InvalidInput("allocation logits must have M + 1 columns");
  const ad::Tensor row_probs = ad::slice(ad::softmax(logits, 1), 1, 0, m_count);

  // caps[m] collects, for each action in bundle m, that action's n x 1 cap column.
  std::vector<std::vector<ad::Tensor>> caps(m_count);
  const ad::Tensor unallocated(1, 1, 0.0);
  for (std::size_t a = 0; a < index.action_count; ++a) {
    std::vector<std::size_t> with_a;
    std::vector<ad::Tensor> columns;
    for (std::size_t m = 0; m < m_count; ++m)
      if (index[m].contains(a)) {
        with_a.push_back(m);
        columns.push_back(ad::slice(logits, 1, m, m + 1));
      }
    columns.push_back(unallocated);
    const ad::Tensor probs = ad::softmax(ad::concat(columns, 0), 0);
    for (std::size_t j = 0; j < with_a.size(); ++j)
      caps[with_a[j]].push_back(ad::slice(probs, 0, j * n, (j + 1) * n));
  }
  std::vector<ad::Tensor> cap_columns;
  cap_columns.reserve(m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    ad::Tensor c = caps[m][0];
    for (std::size_t j = 1; j < caps[m].size(); ++j) c = ad::elementwise_min(c, caps[m][j]);
    cap_columns.push_back(c);
  }
  return ad::elementwise_min(row_probs, ad::concat(cap_columns, 1));
}

/// Fused per-action caps: for each group and action a, a softmax over the
/// logits (i, S) with a in S plus a zero "unallocated" logit, then
/// cap[i][S] = min over a in S (ties to the lowest action). Produces the same
/// values and gradients as the slice/concat/softmax/min composition in
/// allocate_from_logits, in one tape node.
inline ad::Tensor bundle_caps(const ad::Tensor& logits, const BundleIndex& index, std::size_t groups) {
  const std::size_t m_count = index.size();
  const std::size_t width = m_count + 1;
  const std::size_t rows = logits.rows();
  const std::size_t n = rows / groups;
  const std::size_t actions = index.action_count;
  // probs[a] is rows x M; entries for bundles without a stay 0.
  auto probs = std::make_shared<std::vector<std::vector<double>>>(
      actions, std::vector<double>(rows * m_count, 0.0));
  auto argmin = std::make_shared<std::vector<std::uint8_t>>(rows * m_count, 0);
  std::vector<double> caps(rows * m_count, 0.0);
  const double* L = logits.data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const std::size_t r0 = gi * n;
    for (std::size_t a = 0; a < actions; ++a) {
      auto& P = (*probs)[a];
      double mx = 0.0;  // the unallocated logit
      for (std::size_t i = r0; i < r0 + n; ++i)
        for (std::size_t m = 0; m < m_count; ++m)
          if (index[m].contains(a)) mx = std::max(mx, L[i * width + m]);
      for (std::size_t m = 0; m < m_count; ++m) {
        if (!index[m].contains(a)) continue;
        for (std::size_t i = r0; i < r0 + n; ++i) P[i * m_count + m] = std::exp(L[i * width + m] - mx);
      }
      // Summation order matches concat(columns, 0): bundle-major, then rows.
      double z = 0.0;
      for (std::size_t m = 0; m < m_count; ++m) {
        if (!index[m].contains(a)) continue;
        for (std::size_t i = r0; i < r0 + n; ++i) z += P[i * m_count + m];
      }
      z += std::exp(0.0 - mx);
      for (std::size_t m = 0; m < m_count; ++m) {
        if (!index[m].contains(a)) continue;
        for (std::size_t i = r0; i < r0 + n; ++i) P[i * m_count + m] /= z;
      }
    }
  }
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t m = 0; m < m_count; ++m) {
      bool first = true;
      double c = 0.0;
      for (std::size_t a = 0; a < actions; ++a) {
        if (!index[m].contains(a)) continue;
        const double v = (*probs)[a][i * m_count + m];
        if (first || v < c) {
          c = v;
          (*argmin)[i * m_count + m] = static_cast<std::uint8_t>(a);
        }
        first = false;
      }
      caps[i * m_count + m] = c;
    }
  ad::Tensor result(rows, m_count, std::move(caps));
  if (!logits.tracked()) return result;
  return logits.tape()->record(
      std::move(result),
      [logits, index, groups, n, m_count, width, actions, probs, argmin](const double* g,
                                                                         ad::GradBuffer& grads) {
        double* dl = grads.at(logits.node(), logits.size());
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const std::size_t r0 = gi * n;
          for (std::size_t a = 0; a < actions; ++a) {
            const auto& P = (*probs)[a];
            double dot = 0.0;
            for (std::size_t m = 0; m < m_count; ++m) {
              if (!index[m].contains(a)) continue;
              for (std::size_t i = r0; i < r0 + n; ++i)
                if ((*argmin)[i * m_count + m] == a) dot += g[i * m_count + m] * P[i * m_count + m];
            }
            for (std::size_t m = 0; m < m_count; ++m) {
              if (!index[m].contains(a)) continue;
              for (std::size_t i = r0; i < r0 + n; ++i) {
                const double ga = (*argmin)[i * m_count + m] == a ? g[i * m_count + m] : 0.0;
                dl[i * width + m] += P[i * m_count + m] * (ga - dot);
              }
            }
          }
        }
      });
}

/// Same allocation as allocate_from_logits, via the fused cap op; handles
/// stacked groups.
inline ad::Tensor allocate_fused(const ad::Tensor& logits, const BundleIndex& index,
                                 std::size_t groups = 1) {
  if (logits.cols() != index.size() + 1)
    throw InvalidInput("allocation logits must have M + 1 columns");
  if (groups == 0 || logits.rows() % groups != 0)
    throw InvalidInput("allocation: rows not divisible by group count");
  const ad::Tensor row_probs = ad::slice(ad::softmax(logits, 1), 1, 0, index.size());
  return ad::elementwise_min(row_probs, bundle_caps(logits, index, groups));
}

inline ad::Tensor allocation_head(const ad::Tensor& embeddings, const BundleIndex& index,
                                  const ModelParams& p, std::size_t groups = 1) {
  return allocate_fused(detail::linear(embeddings, p.alloc_w, p.alloc_b), index, groups);
}

struct PaymentHeadOutput {
  ad::Tensor fractions;  // p~, n x 1
  ad::Tensor payments;   // n x 1
};

inline PaymentHeadOutput payment_head(const ad::Tensor& embeddings, const ad::Tensor& allocation,
                                      const ad::Tensor& bids, const ModelParams& p) {
  const ad::Tensor fractions = ad::sigmoid(detail::linear(embeddings, p.pay_w, p.pay_b));
  const ad::Tensor value = ad::sum(ad::mul(allocation, bids), 1);
  return {fractions, ad::mul(fractions, value)};
}

struct NeuralOutput {
  ad::Tensor allocation;  // n x M
  ad::Tensor fractions;   // n x 1
  ad::Tensor payments;    // n x 1

  ad::Tensor revenue() const { return ad::sum(payments); }

  /// Per-agent utility vector (n x 1) under `true_values`.
  ad::Tensor utilities(const ad::Tensor& true_values) const {
    return ad::sub(ad::sum(ad::mul(allocation, true_values), 1), payments);
  }

  MechanismOutcome outcome(const Matrix& reported) const {
    return make_outcome(allocation.to_matrix(), payments.values(), reported);
  }
};

inline NeuralOutput forward_tensors(const ad::Tensor& bids, const ModelParams& p,
                                    const BundleIndex& index, std::size_t groups = 1) {
  const ad::Tensor h = encode(bids, p, groups);
  ad::Tensor x = allocation_head(h, index, p, groups);
  auto pay = payment_head(h, x, bids, p);
  return {std::move(x), std::move(pay.fractions), std::move(pay.payments)};
}

inline MechanismOutcome forward(const Matrix& bids, const ModelParams& p, const BundleIndex& index) {
  return forward_tensors(ad::Tensor::from_matrix(bids), p, index).outcome(bids);
}

namespace detail {

// Stacks copies of `truth`, copy c having row rows[c] replaced by reports[c]
// (no replacement when rows[c] is npos).
inline Matrix stack_copies(const Matrix& truth, const std::vector<std::size_t>& rows,
                           const std::vector<std::vector<double>>& reports) {
  const std::size_t n = truth.rows(), m = truth.cols();
  Matrix out(rows.size() * n, m);
  for (std::size_t c = 0; c < rows.size(); ++c) {
    std::copy(truth.data().begin(), truth.data().end(), out.data().begin() + c * n * m);
    if (rows[c] != static_cast<std::size_t>(-1))
      std::copy(reports[c].begin(), reports[c].end(), out.row(c * n + rows[c]).begin());
  }
  return out;
}

inline Matrix tile(const Matrix& m, std::size_t copies) {
  Matrix out(copies * m.rows(), m.cols());
  for (std::size_t c = 0; c < copies; ++c)
    std::copy(m.data().begin(), m.data().end(), out.data().begin() + c * m.size());
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Misreports and regret.

struct UtilityGradient {
  double utility = 0.0;
  std::vector<double> gradient;  // d utility / d (reported row i)
};

/// A mechanism the misreport ascent can probe: utility of agent i under
/// `true_values` when the reports are `reported`, plus its gradient with
/// respect to agent i's reported row.
template <typename M>
concept ProbeableMechanism = requires(const M& m, const Matrix& reported, const Matrix& truth,
                                      std::size_t i) {
  { m.utility(reported, truth, i) } -> std::convertible_to<double>;
  { m.utility_and_gradient(reported, truth, i) } -> std::same_as<UtilityGradient>;
};

class NeuralMechanism {
 public:
  NeuralMechanism(const ModelParams& params, const BundleIndex& index)
      : params_(&params), index_(&index) {}

  double utility(const Matrix& reported, const Matrix& truth, std::size_t i) const {
    const auto out = forward_tensors(ad::Tensor::from_matrix(reported), *params_, *index_);
    return out.utilities(ad::Tensor::from_matrix(truth)).values()[i];
  }

  UtilityGradient utility_and_gradient(const Matrix& reported, const Matrix& truth,
                                       std::size_t i) const {
    ad::Tape tape;
    const ad::Tensor bids = tape.track(ad::Tensor::from_matrix(reported));
    const auto out = forward_tensors(bids, *params_, *index_);
    const ad::Tensor u = ad::slice(out.utilities(ad::Tensor::from_matrix(truth)), 0, i, i + 1);
    const auto grads = tape.backward(u);
    UtilityGradient res;
    res.utility = u.item();
    res.gradient.assign(reported.cols(), 0.0);
    if (const auto g = grads.of(bids))
      for (std::size_t m = 0; m < reported.cols(); ++m) res.gradient[m] = (*g)(i, m);
    return res;
  }

  MechanismOutcome operator()(const Matrix& reported) const {
    return forward(reported, *params_, *index_);
  }

 private:
  const ModelParams* params_;
  const BundleIndex* index_;
};

struct MisreportConfig {
  std::size_t steps = 25;  // K
  double lr = 0.1;
  std::size_t restarts = 2;  // R, restart 0 is the truthful report
};

struct MisreportResult {
  std::vector<double> report;
  double utility = 0.0;
  double truthful_utility = 0.0;
};

/// Projected gradient ascent on agent i's report, others held truthful.
/// Restart 0 starts from the truthful report, the rest from uniform random
/// points; every iterate is clamped to [0,1]^M and the best one (ties keep
/// the earlier point) is returned. With zero steps nothing is searched.
template <ProbeableMechanism Mech>
MisreportResult misreport_ascent(const Mech& mech, const Matrix& truth, std::size_t i,
                                 const MisreportConfig& cfg, std::uint64_t seed) {
  if (i >= truth.rows()) throw InvalidInput("misreport_ascent: agent out of range");
  const std::size_t m_count = truth.cols();
  const std::vector<double> truthful(truth.row(i).begin(), truth.row(i).end());

  MisreportResult best;
  best.report = truthful;
  best.truthful_utility = mech.utility(truth, truth, i);
  best.utility = best.truthful_utility;
  if (cfg.steps == 0) return best;

  Rng rng(seed);
  Matrix reported = truth;
  for (std::size_t r = 0; r < std::max<std::size_t>(cfg.restarts, 1); ++r) {
    auto row = reported.row(i);
    if (r == 0) {
      std::copy(truthful.begin(), truthful.end(), row.begin());
    } else {
      for (double& v : row) v = rng.uniform();
    }
    for (std::size_t step = 0; step <= cfg.steps; ++step) {
      const bool last = step == cfg.steps;
      UtilityGradient ug;
      if (last) {
        ug.utility = mech.utility(reported, truth, i);
      } else {
        ug = mech.utility_and_gradient(reported, truth, i);
      }
      if (ug.utility > best.utility) {
        best.utility = ug.utility;
        best.report.assign(row.begin(), row.end());
      }
      if (last) break;
      for (std::size_t m = 0; m < m_count; ++m)
        if (std::isfinite(ug.gradient[m])) row[m] = std::clamp(row[m] + cfg.lr * ug.gradient[m], 0.0, 1.0);
    }
  }
  return best;
}

/// Regret of every agent on one profile: max(0, best misreport utility -
/// truthful utility). Agent i's search is seeded by hash_key(seed, i).
template <ProbeableMechanism Mech>
std::vector<MisreportResult> misreport_all(const Mech& mech, const Matrix& truth,
                                           const MisreportConfig& cfg, std::uint64_t seed) {
  std::vector<MisreportResult> out;
  out.reserve(truth.rows());
  for (std::size_t i = 0; i < truth.rows(); ++i)
    out.push_back(misreport_ascent(mech, truth, i, cfg, hash_key(seed, i)));
  return out;
}

inline double regret_of(const MisreportResult& r) {
  return std::max(0.0, r.utility - r.truthful_utility);
}

/// misreport_all for the learned mechanism, with every (agent, restart)
/// search advanced in lockstep as one stacked forward/backward pass per
/// step. Same seeds, iterates and tie-breaking as the generic version.
inline std::vector<MisreportResult> neural_misreport_all(const ModelParams& params,
                                                         const BundleIndex& index,
                                                         const Matrix& truth,
                                                         const MisreportConfig& cfg,
                                                         std::uint64_t seed) {
  const std::size_t n = truth.rows(), m_count = truth.cols();
  const ad::Tensor truth_t = ad::Tensor::from_matrix(truth);
  const auto honest = forward_tensors(truth_t, params, index).utilities(truth_t);

  std::vector<MisreportResult> results(n);
  for (std::size_t i = 0; i < n; ++i) {
    results[i].report.assign(truth.row(i).begin(), truth.row(i).end());
    results[i].truthful_utility = honest.values()[i];
    results[i].utility = results[i].truthful_utility;
  }
  if (cfg.steps == 0 || n == 0) return results;

  const std::size_t restarts = std::max<std::size_t>(cfg.restarts, 1);
  const std::size_t copies = n * restarts;  // copy c = i * restarts + r
  std::vector<std::size_t> rows(copies);
  std::vector<std::vector<double>> reports(copies);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(hash_key(seed, i));
    for (std::size_t r = 0; r < restarts; ++r) {
      const std::size_t c = i * restarts + r;
      rows[c] = i;
      reports[c].assign(truth.row(i).begin(), truth.row(i).end());
      if (r > 0)
        for (double& v : reports[c]) v = rng.uniform();
    }
  }
  std::vector<double> best_u(copies, -std::numeric_limits<double>::infinity());
  std::vector<std::vector<double>> best_report(copies);
  const Matrix truth_tiled = detail::tile(truth, copies);
  const ad::Tensor truth_tiled_t = ad::Tensor::from_matrix(truth_tiled);
  Matrix selector(copies * n, 1);
  for (std::size_t c = 0; c < copies; ++c) selector(c * n + rows[c], 0) = 1.0;
  const ad::Tensor selector_t = ad::Tensor::from_matrix(selector);

  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    const bool last = step == cfg.steps;
    const Matrix stacked = detail::stack_copies(truth, rows, reports);
    ad::Tape tape;
    const ad::Tensor bids =
        last ? ad::Tensor::from_matrix(stacked) : tape.track(ad::Tensor::from_matrix(stacked));
    const auto out = forward_tensors(bids, params, index, copies);
    const ad::Tensor u = out.utilities(truth_tiled_t);
    for (std::size_t c = 0; c < copies; ++c) {
      const double uc = u.values()[c * n + rows[c]];
      if (uc > best_u[c]) {
        best_u[c] = uc;
        best_report[c] = reports[c];
      }
    }
    if (last) break;
    const auto grads = tape.backward(ad::sum(ad::mul(u, selector_t)));
    const auto g = grads.of(bids);
    for (std::size_t c = 0; c < copies; ++c)
      for (std::size_t m = 0; m < m_count; ++m) {
        const double gm = g ? (*g)(c * n + rows[c], m) : 0.0;
        if (std::isfinite(gm)) reports[c][m] = std::clamp(reports[c][m] + cfg.lr * gm, 0.0, 1.0);
      }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < restarts; ++r) {
      const std::size_t c = i * restarts + r;
      if (best_u[c] > results[i].utility) {
        results[i].utility = best_u[c];
        results[i].report = best_report[c];
      }
    }
  return results;
}

/// regrets[s][i] for each profile in the batch.
template <ProbeableMechanism Mech>
std::vector<std::vector<double>> regret_estimate(const Mech& mech, std::span<const Matrix> batch,
                                                 const MisreportConfig& cfg, std::uint64_t seed,
                                                 std::size_t workers = 1) {
  std::vector<std::vector<double>> regrets(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t s) {
    const auto results = misreport_all(mech, batch[s], cfg, hash_key(seed, s));
    for (const auto& r : results) regrets[s].push_back(regret_of(r));
  });
  return regrets;
}

/// -(1 - gamma) log(1 + revenue) + gamma * regret_sum.
inline double combined_loss(double revenue, double regret_sum, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidInput("loss: gamma outside [0,1]");
  if (revenue < 0.0) throw InvariantViolation("loss: negative revenue");
  return -(1.0 - gamma) * std::log1p(revenue) + gamma * regret_sum;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  double gamma = 0.5;
  MisreportConfig misreport;
  std::size_t batch_size = 128;
  std::size_t iterations = 10000;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  Hyper hyper;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidInput("train: gamma must lie in [0,1]");
    if (misreport.steps < 1 || misreport.restarts < 1 || batch_size < 1 || iterations < 1)
      throw InvalidInput("train: steps, restarts, batch_size and iterations must be >= 1");
    if (!(lr > 0.0) || !(misreport.lr > 0.0)) throw InvalidInput("train: step sizes must be positive");
    hyper.validate();
  }
};

struct MetricsRecord {
  std::size_t iteration = 0;
  double revenue_mean = 0.0;
  double regret_mean = 0.0;  // mean over samples and agents
  double regret_max = 0.0;
  double loss = 0.0;
  std::int64_t wallclock_ms = 0;
};

inline nlohmann::json to_json(const MetricsRecord& r) {
  return {{"iteration", r.iteration},       {"revenue_mean", r.revenue_mean},
          {"regret_mean", r.regret_mean},   {"regret_max", r.regret_max},
          {"loss", r.loss},                 {"wallclock_ms", r.wallclock_ms}};
}

struct TrainingDiverged : DivergenceError {
  MetricsRecord record;
  TrainingDiverged(const std::string& what, MetricsRecord r)
      : DivergenceError(what), record(r) {}
};

class Adam {
 public:
  Adam(const ModelParams& p, const TrainConfig& cfg) : cfg_(cfg) {
    p.visit([&](const std::string&, const ad::Tensor& t) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    });
  }

  void step(ModelParams& p, const std::vector<std::vector<double>>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t k = 0;
    p.visit([&](const std::string&, ad::Tensor& t) {
      auto& w = t.mutable_values();
      auto& m = m_[k];
      auto& v = v_[k];
      const auto& g = grads[k];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        w[j] -= cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.adam_eps);
      }
      ++k;
    });
  }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct StepResult {
  MetricsRecord record;
  std::vector<std::vector<double>> gradient;  // per parameter tensor, visit order
};

/// Misreport searches for every agent of every profile in a batch, with
/// the parameters frozen. Profile s uses seed hash_key(step_seed, s).
inline std::vector<std::vector<MisreportResult>> search_misreports(const ModelParams& params,
                                                                  const BundleIndex& index,
                                                                  std::span<const Matrix> batch,
                                                                  const MisreportConfig& cfg,
                                                                  std::uint64_t step_seed,
                                                                  std::size_t workers = 1) {
  std::vector<std::vector<MisreportResult>> searches(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t s) {
    searches[s] = neural_misreport_all(params, index, batch[s], cfg, hash_key(step_seed, s));
  });
  return searches;
}

namespace detail {

/// Profile s as one stacked input: copy 0 truthful, then one copy per agent
/// whose search found a positive gain, carrying that agent's misreport.
struct StackedProfile {
  std::vector<std::size_t> rows;
  std::vector<std::vector<double>> reports;
};

inline StackedProfile stack_gainers(const std::vector<MisreportResult>& search) {
  StackedProfile sp{{static_cast<std::size_t>(-1)}, {{}}};
  for (std::size_t i = 0; i < search.size(); ++i)
    if (regret_of(search[i]) > 0.0) {
      sp.rows.push_back(i);
      sp.reports.push_back(search[i].report);
    }
  return sp;
}

}  // namespace detail

/// The training objective with the misreports held fixed:
/// -(1-gamma) log(1 + mean revenue) + gamma * mean_s sum_i [u_i(v'_i) - u_i(v_i)]
/// over the agents whose search found a positive gain. Its value at the
/// search point equals the loss reported by loss_and_gradient, and its
/// derivative is the gradient that function returns.
inline double fixed_misreport_loss(const ModelParams& params, const BundleIndex& index,
                                   std::span<const Matrix> batch,
                                   const std::vector<std::vector<MisreportResult>>& searches,
                                   double gamma) {
  const std::size_t bsz = batch.size();
  if (bsz == 0) throw InvalidInput("fixed_misreport_loss: empty batch");
  double revenue = 0.0, gain = 0.0;
  for (std::size_t s = 0; s < bsz; ++s) {
    const Matrix& truth = batch[s];
    const std::size_t n = truth.rows();
    const auto sp = detail::stack_gainers(searches[s]);
    const auto out = forward_tensors(ad::Tensor::from_matrix(detail::stack_copies(truth, sp.rows, sp.reports)),
                                     params, index, sp.rows.size());
    const ad::Tensor u = out.utilities(ad::Tensor::from_matrix(detail::tile(truth, sp.rows.size())));
    for (std::size_t i = 0; i < n; ++i) revenue += out.payments.values()[i];
    for (std::size_t c = 1; c < sp.rows.size(); ++c)
      gain += u.values()[c * n + sp.rows[c]] - u.values()[sp.rows[c]];
  }
  return combined_loss(revenue / static_cast<double>(bsz), gain / static_cast<double>(bsz), gamma);
}

/// Loss and parameter gradient for a batch whose misreports are given.
///
/// Because the revenue term is log(1 + mean revenue), its per-sample weight
/// -(1-gamma)/(1+R)/B is known once an untracked pass has produced R, and
/// each sample's tape can be reduced independently; per-sample gradients
/// are then summed in sample order.
inline StepResult gradient_with_misreports(const ModelParams& params, const BundleIndex& index,
                                           std::span<const Matrix> batch,
                                           const std::vector<std::vector<MisreportResult>>& searches,
                                           double gamma, std::size_t workers = 1) {
  const std::size_t bsz = batch.size();
  if (bsz == 0) throw InvalidInput("loss_and_gradient: empty batch");
  if (searches.size() != bsz) throw InvalidInput("loss_and_gradient: one search per profile required");

  std::vector<double> revenues(bsz);
  parallel_for(bsz, workers, [&](std::size_t s) {
    revenues[s] = forward_tensors(ad::Tensor::from_matrix(batch[s]), params, index).revenue().item();
  });

  double revenue_mean = 0.0, regret_total = 0.0, regret_max = 0.0;
  std::size_t agent_count = 0;
  for (std::size_t s = 0; s < bsz; ++s) {
    revenue_mean += revenues[s];
    for (const auto& r : searches[s]) {
      const double reg = regret_of(r);
      regret_total += reg;
      regret_max = std::max(regret_max, reg);
      ++agent_count;
    }
  }
  revenue_mean /= static_cast<double>(bsz);
  const double regret_sum_mean = regret_total / static_cast<double>(bsz);

  StepResult res;
  res.record.revenue_mean = revenue_mean;
  res.record.regret_mean = agent_count ? regret_total / static_cast<double>(agent_count) : 0.0;
  res.record.regret_max = regret_max;
  res.record.loss = combined_loss(revenue_mean, regret_sum_mean, gamma);
  if (!std::isfinite(res.record.loss)) return res;

  const double revenue_weight = -(1.0 - gamma) / (1.0 + revenue_mean) / static_cast<double>(bsz);
  const double regret_weight = gamma / static_cast<double>(bsz);

  std::vector<std::vector<std::vector<double>>> per_sample(bsz);
  parallel_for(bsz, workers, [&](std::size_t s) {
    const Matrix& truth = batch[s];
    const std::size_t n = truth.rows();
    const auto sp = detail::stack_gainers(searches[s]);
    const std::size_t copies = sp.rows.size();
    Matrix revenue_sel(copies * n, 1), gain_sel(copies * n, 1);
    for (std::size_t i = 0; i < n; ++i) revenue_sel(i, 0) = revenue_weight;
    for (std::size_t c = 1; c < copies; ++c) {
      gain_sel(c * n + sp.rows[c], 0) = regret_weight;
      gain_sel(sp.rows[c], 0) -= regret_weight;
    }
    ad::Tape tape;
    const ModelParams tp = params.tracked_on(tape);
    const auto out = forward_tensors(ad::Tensor::from_matrix(detail::stack_copies(truth, sp.rows, sp.reports)),
                                     tp, index, copies);
    const ad::Tensor u = out.utilities(ad::Tensor::from_matrix(detail::tile(truth, copies)));
    const ad::Tensor objective =
        ad::add(ad::sum(ad::mul(out.payments, ad::Tensor::from_matrix(revenue_sel))),
                ad::sum(ad::mul(u, ad::Tensor::from_matrix(gain_sel))));
    const auto grads = tape.backward(objective);
    tp.visit([&](const std::string&, const ad::Tensor& t) {
      const auto g = grads.of(t);
      per_sample[s].push_back(g ? g->values() : std::vector<double>(t.size(), 0.0));
    });
  });

  res.gradient = per_sample[0];
  for (std::size_t s = 1; s < bsz; ++s)
    for (std::size_t k = 0; k < res.gradient.size(); ++k)
      for (std::size_t j = 0; j < res.gradient[k].size(); ++j)
        res.gradient[k][j] += per_sample[s][k][j];
  return res;
}

/// One outer step's loss and parameter gradient: misreports are searched
/// with the parameters frozen, then treated as constants.
inline StepResult loss_and_gradient(const ModelParams& params, const BundleIndex& index,
                                    std::span<const Matrix> batch, const TrainConfig& cfg,
                                    std::uint64_t step_seed, std::size_t workers = 1) {
  if (batch.empty()) throw InvalidInput("loss_and_gradient: empty batch");
  const auto searches = search_misreports(params, index, batch, cfg.misreport, step_seed, workers);
  return gradient_with_misreports(params, index, batch, searches, cfg.gamma, workers);
}

/// Gets each metrics record as it is produced; return false to stop early.
using MetricsObserver = std::function<bool(const MetricsRecord&)>;

struct TrainResult {
  ModelParams params;
  std::vector<MetricsRecord> metrics;
};

/// Batch indices for an iteration, drawn with replacement.
inline std::vector<std::size_t> sample_batch(std::size_t dataset_size, std::size_t batch_size,
                                             std::uint64_t seed, std::size_t iteration) {
  Rng rng(hash_key(seed, 0xba7c, iteration));
  std::vector<std::size_t> idx(batch_size);
  for (auto& k : idx) k = rng.below(dataset_size);
  return idx;
}

inline TrainResult train(std::span<const Matrix> dataset, const BundleIndex& index,
                         const TrainConfig& cfg, const MetricsObserver& observer = {},
                         std::size_t workers = 1, std::optional<ModelParams> initial = {}) {
  cfg.validate();
  if (dataset.empty()) throw InvalidInput("train: empty dataset");
  for (const auto& m : dataset)
    if (m.cols() != index.size() || m.rows() != dataset[0].rows())
      throw InvalidInput("train: dataset samples have inconsistent shapes");

  TrainResult result{initial ? *initial : init_params(cfg.hyper, index.size(), cfg.seed), {}};
  Adam adam(result.params, cfg);
  const auto start = std::chrono::steady_clock::now();
  std::vector<Matrix> batch(cfg.batch_size);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto idx = sample_batch(dataset.size(), cfg.batch_size, cfg.seed, it);
    for (std::size_t b = 0; b < idx.size(); ++b) batch[b] = dataset[idx[b]];
    StepResult step = loss_and_gradient(result.params, index, batch, cfg,
                                        hash_key(cfg.seed, 0x5eed, it), workers);
    step.record.iteration = it;
    step.record.wallclock_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now() - start)
                                   .count();
    result.metrics.push_back(step.record);
    if (!std::isfinite(step.record.loss)) {
      if (observer) observer(step.record);
      throw TrainingDiverged("training diverged at iteration " + std::to_string(it), step.record);
    }
    adam.step(result.params, step.gradient);
    if (observer && !observer(step.record)) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON {version, hyper, tensors: [{name, shape, data_base16}]}.
// Each double is written as the 16 hex digits of its IEEE-754 bit pattern,
// most significant nibble first, so a round trip is bit-exact.

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::string to_base16(const std::vector<double>& values) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(values.size() * 16);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int shift = 60; shift >= 0; shift -= 4) out.push_back(kDigits[(bits >> shift) & 0xF]);
  }
  return out;
}

inline std::vector<double> from_base16(const std::string& s, std::size_t count) {
  if (s.size() != count * 16) throw CheckpointError("checkpoint: tensor data has wrong length");
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t bits = 0;
    for (std::size_t c = 0; c < 16; ++c) {
      const char ch = s[k * 16 + c];
      int nib;
      if (ch >= '0' && ch <= '9') nib = ch - '0';
      else if (ch >= 'a' && ch <= 'f') nib = ch - 'a' + 10;
      else throw CheckpointError("checkpoint: invalid hex digit");
      bits = (bits << 4) | static_cast<std::uint64_t>(nib);
    }
    out[k] = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace detail

inline nlohmann::json checkpoint_json(const ModelParams& p) {
  nlohmann::json tensors = nlohmann::json::array();
  p.visit([&](const std::string& name, const ad::Tensor& t) {
    tensors.push_back({{"name", name},
                       {"shape", {t.rows(), t.cols()}},
                       {"data_base16", detail::to_base16(t.values())}});
  });
  return {{"version", kCheckpointVersion},
          {"hyper",
           {{"d_model", p.hyper.d_model},
            {"layers", p.hyper.layers},
            {"heads", p.hyper.heads},
            {"d_ff", p.hyper.d_ff},
            {"bundles", p.bundles}}},
          {"tensors", tensors}};
}

inline ModelParams params_from_checkpoint(const nlohmann::json& j) {
  try {
    if (!j.is_object() || !j.contains("version")) throw CheckpointError("checkpoint: missing version");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw CheckpointVersionError("checkpoint: unsupported version " + j.at("version").dump());
    const auto& h = j.at("hyper");
    Hyper hyper{h.at("d_model").get<std::size_t>(), h.at("layers").get<std::size_t>(),
                h.at("heads").get<std::size_t>(), h.at("d_ff").get<std::size_t>()};
    ModelParams p = init_params(hyper, h.at("bundles").get<std::size_t>(), 0);
    const auto& tensors = j.at("tensors");
    if (!tensors.is_array()) throw CheckpointError("checkpoint: tensors is not an array");
    std::size_t k = 0;
    p.visit([&](const std::string& name, ad::Tensor& t) {
      if (k >= tensors.size()) throw CheckpointError("checkpoint: missing tensor " + name);
      const auto& e = tensors[k++];
      if (e.at("name").get<std::string>() != name)
        throw CheckpointError("checkpoint: expected tensor " + name);
      const auto shape = e.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols())
        throw CheckpointError("checkpoint: wrong shape for " + name);
      t = ad::Tensor(t.rows(), t.cols(),
                     detail::from_base16(e.at("data_base16").get<std::string>(), t.size()));
    });
    if (k != tensors.size()) throw CheckpointError("checkpoint: unexpected extra tensors");
    return p;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed (") + e.what() + ")");
  }
}

/// Writes the checkpoint; a non-null `provenance` is stored under "config".
inline void save_checkpoint(const ModelParams& p, const std::string& path,
                            const nlohmann::json& provenance = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  nlohmann::json j = checkpoint_json(p);
  if (!provenance.is_null()) j["config"] = provenance;
  out << j.dump() << '\n';
  if (!out) throw CheckpointError("failed writing checkpoint " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: corrupt file (") + e.what() + ")");
  }
  return params_from_checkpoint(j);
}

}  // namespace cyberauction
