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

// Minimal reverse-mode automatic differentiation over dense 2-D arrays.
//
// A Tensor is an immutable rows x cols block of doubles, optionally linked
// to a node on a Tape. Every op whose inputs include a tracked tensor
// appends a node holding a backward closure; Tape::backward walks nodes in
// strict reverse append order. Untracked evaluation runs the same forward
// code, so values are bitwise identical with or without a tape.
//
// Broadcasting is limited to the bias pattern: an (r x c) tensor combined
// with a (1 x c) row.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cyberauction/core.hpp"

namespace cyberauction::ad {

class Tape;
using NodeId = std::int64_t;
inline constexpr NodeId kUntracked = -1;

class Tensor {
 public:
  Tensor() : Tensor(0, 0) {}
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols),
        data_(std::make_shared<std::vector<double>>(rows * cols, fill)) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::make_shared<std::vector<double>>(std::move(data))) {
    if (data_->size() != rows_ * cols_) throw InvalidInput("Tensor: data length does not match shape");
  }
  static Tensor scalar(double v) { return Tensor(1, 1, std::vector<double>{v}); }
  static Tensor from_matrix(const Matrix& m) { return Tensor(m.rows(), m.cols(), m.data()); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return rows_ * cols_; }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }

  const std::vector<double>& values() const { return *data_; }
  const double* data() const { return data_->data(); }
  double operator()(std::size_t r, std::size_t c) const { return (*data_)[r * cols_ + c]; }
  double item() const {
    if (size() != 1) throw InvalidInput("Tensor::item on non-scalar");
    return (*data_)[0];
  }

  // Copy-on-write access for parameter updates. Detaches from any tape.
  std::vector<double>& mutable_values() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
    tape_ = nullptr;
    node_ = kUntracked;
    return *data_;
  }

  Matrix to_matrix() const { return Matrix(rows_, cols_, *data_); }

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  NodeId node() const { return node_; }

  // Same values with no tape link.
  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = kUntracked;
    return t;
  }

 private:
  friend class Tape;
  std::size_t rows_, cols_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = kUntracked;
};

/// Gradient buffers indexed by node, allocated on first use.
class GradBuffer {
 public:
  explicit GradBuffer(std::size_t nodes) : grads_(nodes) {}

  double* at(NodeId id, std::size_t size) {
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) g.assign(size, 0.0);
    return g.data();
  }
  const std::vector<double>& get(NodeId id) const { return grads_[static_cast<std::size_t>(id)]; }
  std::vector<double>& take(NodeId id) { return grads_[static_cast<std::size_t>(id)]; }

 private:
  std::vector<std::vector<double>> grads_;
};

using BackwardFn = std::function<void(const double* grad_out, GradBuffer& grads)>;

class Gradients {
 public:
  /// Gradient with respect to a tracked leaf, or nullopt if it got none.
  std::optional<Tensor> of(const Tensor& t) const {
    const auto it = grads_.find(t.node());
    if (it == grads_.end()) return std::nullopt;
    return it->second;
  }
  const std::unordered_map<NodeId, Tensor>& all() const { return grads_; }

 private:
  friend class Tape;
  std::unordered_map<NodeId, Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers t as a differentiable leaf and returns the tracked handle.
  Tensor track(const Tensor& t) {
    Tensor out = t;
    out.tape_ = this;
    out.node_ = append(t.rows(), t.cols(), nullptr, true);
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

  Gradients backward(const Tensor& loss) {
    if (loss.size() != 1) throw InvalidInput("backward: loss must be a scalar");
    if (loss.tape() != this) throw InvalidInput("backward: loss is not on this tape");
    GradBuffer grads(nodes_.size());
    grads.at(loss.node(), 1)[0] = 1.0;
    for (NodeId id = loss.node(); id >= 0; --id) {
      const Node& node = nodes_[static_cast<std::size_t>(id)];
      const auto& g = grads.get(id);
      if (g.empty() || !node.backward) continue;
      node.backward(g.data(), grads);
    }
    Gradients out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      if (!nodes_[id].leaf) continue;
      auto& g = grads.take(static_cast<NodeId>(id));
      if (g.empty()) continue;
      out.grads_.emplace(static_cast<NodeId>(id),
                         Tensor(nodes_[id].rows, nodes_[id].cols, std::move(g)));
    }
    return out;
  }

  // Attaches a result to the tape. Used by the op implementations.
  Tensor record(Tensor result, BackwardFn backward) {
    result.tape_ = this;
    result.node_ = append(result.rows(), result.cols(), std::move(backward), false);
    return result;
  }

 private:
  struct Node {
    std::size_t rows, cols;
    BackwardFn backward;
    bool leaf;
  };

  NodeId append(std::size_t rows, std::size_t cols, BackwardFn fn, bool leaf) {
    nodes_.push_back({rows, cols, std::move(fn), leaf});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

namespace detail {

inline Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape()) throw InvalidInput("op mixes tensors from different tapes");
    tape = t->tape();
  }
  return tape;
}

inline void require(bool cond, const char* what) {
  if (!cond) throw InvalidInput(what);
}

// Bias pattern: b is either a's shape or a single row with a's width.
inline bool row_broadcast(const Tensor& a, const Tensor& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return false;
  require(b.rows() == 1 && b.cols() == a.cols(), "shape mismatch (expected equal shapes or 1 x cols row)");
  return true;
}

inline void accumulate_rows(double* dst, const double* g, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c] += g[r * cols + c];
}

}  // namespace detail

namespace kernel {

// C (n x m) += A (n x k) * B (k x m)
inline void gemm_nn(const double* __restrict A, const double* __restrict B, double* __restrict C,
                    std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* __restrict c = C + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* __restrict b = B + p * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += av * b[j];
    }
  }
}

// C (n x k) += A (n x m) * B^T, with B stored k x m
inline void gemm_nt(const double* __restrict A, const double* __restrict B, double* __restrict C,
                    std::size_t n, std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* __restrict a = A + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double* __restrict b = B + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += a[j] * b[j];
      C[i * k + p] += s;
    }
  }
}

// C (k x m) += A^T * B, with A stored n x k and B stored n x m
inline void gemm_tn(const double* __restrict A, const double* __restrict B, double* __restrict C,
                    std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* __restrict b = B + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      double* __restrict c = C + p * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace kernel

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m, 0.0);
  kernel::gemm_nn(a.data(), b.data(), out.data(), n, k, m);
  Tensor result(n, m, std::move(out));
  Tape* tape = detail::common_tape({&a, &b});
  if (!tape) return result;
  return tape->record(std::move(result), [a, b, n, k, m](const double* g, GradBuffer& grads) {
    if (a.tracked()) kernel::gemm_nt(g, b.data(), grads.at(a.node(), n * k), n, m, k);
    if (b.tracked()) kernel::gemm_tn(a.data(), g, grads.at(b.node(), k * m), n, k, m);
  });
}

/// Block-diagonal product over `groups` stacked operands. a holds groups of
/// (a.rows/groups) rows, b likewise; each output block is a_g * b_g, or
/// a_g * b_g^T when transpose_b is set. groups == 1 is a plain product.
inline Tensor block_matmul(const Tensor& a, const Tensor& b, std::size_t groups, bool transpose_b) {
  detail::require(groups > 0 && a.rows() % groups == 0 && b.rows() % groups == 0,
                  "block_matmul: rows not divisible by groups");
  const std::size_t ar = a.rows() / groups, ac = a.cols();
  const std::size_t br = b.rows() / groups, bc = b.cols();
  const std::size_t inner = transpose_b ? bc : br;
  const std::size_t oc = transpose_b ? br : bc;
  detail::require(ac == inner, "block_matmul: inner dimensions differ");
  std::vector<double> out(groups * ar * oc, 0.0);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double* A = a.data() + gi * ar * ac;
    const double* B = b.data() + gi * br * bc;
    double* O = out.data() + gi * ar * oc;
    if (transpose_b) kernel::gemm_nt(A, B, O, ar, ac, br);
    else kernel::gemm_nn(A, B, O, ar, ac, bc);
  }
  Tensor result(groups * ar, oc, std::move(out));
  Tape* tape = detail::common_tape({&a, &b});
  if (!tape) return result;
  return tape->record(std::move(result), [a, b, groups, ar, ac, br, bc, oc, transpose_b](
                                             const double* g, GradBuffer& grads) {
    double* da = a.tracked() ? grads.at(a.node(), a.size()) : nullptr;
    double* db = b.tracked() ? grads.at(b.node(), b.size()) : nullptr;
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const double* A = a.data() + gi * ar * ac;
      const double* B = b.data() + gi * br * bc;
      const double* G = g + gi * ar * oc;
      if (transpose_b) {
        // O = A B^T: dA = G B, dB = G^T A
        if (da) kernel::gemm_nn(G, B, da + gi * ar * ac, ar, br, bc);
        if (db) kernel::gemm_tn(G, A, db + gi * br * bc, ar, br, ac);
      } else {
        // O = A B: dA = G B^T, dB = A^T G
        if (da) kernel::gemm_nt(G, B, da + gi * ar * ac, ar, bc, br);
        if (db) kernel::gemm_tn(A, G, db + gi * br * bc, ar, ac, bc);
      }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a(i, j);
  Tensor result(c, r, std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(std::move(result), [a, r, c](const double* g, GradBuffer& grads) {
    double* da = grads.at(a.node(), r * c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) da[i * c + j] += g[j * r + i];
  });
}

namespace detail {

template <typename Fwd>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, Fwd fwd, double b_sign, bool product) {
  const bool bcast = row_broadcast(a, b);
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  const double* A = a.data();
  const double* B = b.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = fwd(A[i * c + j], B[bcast ? j : i * c + j]);
  Tensor result(r, c, std::move(out));
  Tape* tape = common_tape({&a, &b});
  if (!tape) return result;
  return tape->record(std::move(result), [a, b, bcast, r, c, b_sign, product](const double* g,
                                                                              GradBuffer& grads) {
    const double* A = a.data();
    const double* B = b.data();
    if (a.tracked()) {
      double* da = grads.at(a.node(), r * c);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          da[i * c + j] += product ? g[i * c + j] * B[bcast ? j : i * c + j] : g[i * c + j];
    }
    if (b.tracked()) {
      double* db = grads.at(b.node(), b.size());
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const double contrib = product ? g[i * c + j] * A[i * c + j] : b_sign * g[i * c + j];
          db[bcast ? j : i * c + j] += contrib;
        }
    }
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(a, b, [](double x, double y) { return x + y; }, 1.0, false);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(a, b, [](double x, double y) { return x - y; }, -1.0, false);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(a, b, [](double x, double y) { return x * y; }, 1.0, true);
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values());
  for (double& v : out) v *= s;
  Tensor result(a.rows(), a.cols(), std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(std::move(result), [a, s](const double* g, GradBuffer& grads) {
    double* da = grads.at(a.node(), a.size());
    for (std::size_t k = 0; k < a.size(); ++k) da[k] += s * g[k];
  });
}

/// Sum of all entries as a 1 x 1 tensor.
inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor result = Tensor::scalar(s);
  if (!a.tracked()) return result;
  return a.tape()->record(std::move(result), [a](const double* g, GradBuffer& grads) {
    double* da = grads.at(a.node(), a.size());
    for (std::size_t k = 0; k < a.size(); ++k) da[k] += g[0];
  });
}

/// Sum along an axis: 0 collapses rows (-> 1 x cols), 1 collapses columns (-> rows x 1).
inline Tensor sum(const Tensor& a, int axis) {
  detail::require(axis == 0 || axis == 1, "sum: axis must be 0 or 1");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor result = axis == 0 ? Tensor(1, c) : Tensor(r, 1);
  {
    std::vector<double>& out = result.mutable_values();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += a(i, j);
  }
  if (!a.tracked()) return result;
  return a.tape()->record(std::move(result), [a, r, c, axis](const double* g, GradBuffer& grads) {
    double* da = grads.at(a.node(), r * c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) da[i * c + j] += g[axis == 0 ? j : i];
  });
}

inline Tensor mean(const Tensor& a) {
  detail::require(a.size() > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// Softmax along an axis (1 = within each row, 0 = within each column).
/// -inf logits get probability 0; a fully -inf slice is an error. A slice
/// containing NaN or +inf yields NaN throughout.
inline Tensor softmax(const Tensor& a, int axis) {
  detail::require(axis == 0 || axis == 1, "softmax: axis must be 0 or 1");
  const std::size_t r = a.rows(), c = a.cols();
  const std::size_t groups = axis == 1 ? r : c;
  const std::size_t len = axis == 1 ? c : r;
  auto at = [&](std::size_t gidx, std::size_t k) { return axis == 1 ? gidx * c + k : k * c + gidx; };
  std::vector<double> out(r * c);
  const double* A = a.data();
  for (std::size_t gidx = 0; gidx < groups; ++gidx) {
    double mx = -std::numeric_limits<double>::infinity();
    bool poisoned = false;
    for (std::size_t k = 0; k < len; ++k) {
      const double v = A[at(gidx, k)];
      poisoned |= std::isnan(v) || v == std::numeric_limits<double>::infinity();
      mx = std::max(mx, v);
    }
    if (poisoned) {
      for (std::size_t k = 0; k < len; ++k) out[at(gidx, k)] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    detail::require(std::isfinite(mx), "softmax: slice has no finite logit");
    double z = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      const double e = std::exp(A[at(gidx, k)] - mx);
      out[at(gidx, k)] = e;
      z += e;
    }
    for (std::size_t k = 0; k < len; ++k) out[at(gidx, k)] /= z;
  }
  Tensor result(r, c, std::move(out));
  if (!a.tracked()) return result;
  const Tensor y = result;
  return a.tape()->record(std::move(result), [a, y, groups, len, axis, c](const double* g,
                                                                          GradBuffer& grads) {
    auto at = [&](std::size_t gidx, std::size_t k) { return axis == 1 ? gidx * c + k : k * c + gidx; };
    double* da = grads.at(a.node(), a.size());
    const double* Y = y.data();
    for (std::size_t gidx = 0; gidx < groups; ++gidx) {
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k) dot += g[at(gidx, k)] * Y[at(gidx, k)];
      for (std::size_t k = 0; k < len; ++k) da[at(gidx, k)] += Y[at(gidx, k)] * (g[at(gidx, k)] - dot);
    }
  });
}

inline double sigmoid_value(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = sigmoid_value(v);
  Tensor result(a.rows(), a.cols(), std::move(out));
  if (!a.tracked()) return result;
  const Tensor y = result;
  return a.tape()->record(std::move(result), [a, y](const double* g, GradBuffer& grads) {
    double* da = grads.at(a.node(), a.size());
    const double* Y = y.data();
    for (std::size_t k = 0; k < a.size(); ++k) da[k] += g[k] * Y[k] * (1.0 - Y[k]);
  });
}

/// max(x, 0); the derivative at exactly 0 is taken as 0.
inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  Tensor result(a.rows(), a.cols(), std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(std::move(result), [a](const double* g, GradBuffer& grads) {
    double* da = grads.at(a.node(), a.size());
    const double* A = a.data();
    for (std::size_t k = 0; k < a.size(); ++k)
      if (A[k] > 0.0) da[k] += g[k];
  });
}

/// Row-wise layer normalization with affine (1 x cols) gain and shift.
inline Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& shift,
                         double eps = 1e-5) {
  const std::size_t r = a.rows(), c = a.cols();
  detail::require(gain.rows() == 1 && gain.cols() == c && shift.rows() == 1 && shift.cols() == c,
                  "layer_norm: gain/shift must be 1 x cols");
  std::vector<double> xhat(r * c), inv_std(r), out(r * c);
  const double* A = a.data();
  const double* G = gain.data();
  const double* B = shift.data();
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += A[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = A[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (A[i * c + j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * G[j] + B[j];
    }
  }
  Tensor result(r, c, std::move(out));
  Tape* tape = detail::common_tape({&a, &gain, &shift});
  if (!tape) return result;
  auto saved_xhat = std::make_shared<std::vector<double>>(std::move(xhat));
  auto saved_inv = std::make_shared<std::vector<double>>(std::move(inv_std));
  return tape->record(std::move(result), [a, gain, shift, r, c, saved_xhat, saved_inv](
                                             const double* g, GradBuffer& grads) {
    const double* X = saved_xhat->data();
    const double* G = gain.data();
    if (gain.tracked()) {
      double* dg = grads.at(gain.node(), c);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dg[j] += g[i * c + j] * X[i * c + j];
    }
    if (shift.tracked()) detail::accumulate_rows(grads.at(shift.node(), c), g, r, c);
    if (a.tracked()) {
      double* da = grads.at(a.node(), r * c);
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t i = 0; i < r; ++i) {
        double mean_dx = 0.0, mean_dx_x = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double dx = g[i * c + j] * G[j];
          mean_dx += dx;
          mean_dx_x += dx * X[i * c + j];
        }
        mean_dx *= inv_c;
        mean_dx_x *= inv_c;
        for (std::size_t j = 0; j < c; ++j) {
          const double dx = g[i * c + j] * G[j];
          da[i * c + j] += (*saved_inv)[i] * (dx - mean_dx - X[i * c + j] * mean_dx_x);
        }
      }
    }
  });
}

/// Element-wise minimum. The gradient goes to the smaller input; exact ties
/// go to the first argument.
inline Tensor elementwise_min(const Tensor& a, const Tensor& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "elementwise_min: shape mismatch");
  std::vector<double> out(a.size());
  const double* A = a.data();
  const double* B = b.data();
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = B[k] < A[k] ? B[k] : A[k];
  Tensor result(a.rows(), a.cols(), std::move(out));
  Tape* tape = detail::common_tape({&a, &b});
  if (!tape) return result;
  return tape->record(std::move(result), [a, b](const double* g, GradBuffer& grads) {
    const double* A = a.data();
    const double* B = b.data();
    double* da = a.tracked() ? grads.at(a.node(), a.size()) : nullptr;
    double* db = b.tracked() ? grads.at(b.node(), b.size()) : nullptr;
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (B[k] < A[k]) {
        if (db) db[k] += g[k];
      } else if (da) {
        da[k] += g[k];
      }
    }
  });
}

/// Concatenation along rows (axis 0) or columns (axis 1).
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  detail::require(!parts.empty(), "concat: no inputs");
  detail::require(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      detail::require(p.cols() == parts[0].cols(), "concat: column counts differ");
      rows += p.rows();
      cols = p.cols();
    } else {
      detail::require(p.rows() == parts[0].rows(), "concat: row counts differ");
      cols += p.cols();
      rows = p.rows();
    }
  }
  std::vector<double> out(rows * cols);
  std::vector<std::size_t> offsets;
  offsets.reserve(parts.size());
  std::size_t off = 0;
  Tape* tape = nullptr;
  for (const auto& p : parts) {
    offsets.push_back(off);
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) {
        const std::size_t ri = axis == 0 ? off + i : i;
        const std::size_t cj = axis == 0 ? j : off + j;
        out[ri * cols + cj] = p(i, j);
      }
    off += axis == 0 ? p.rows() : p.cols();
    if (p.tracked()) {
      if (tape && tape != p.tape()) throw InvalidInput("concat mixes tapes");
      tape = p.tape();
    }
  }
  Tensor result(rows, cols, std::move(out));
  if (!tape) return result;
  return tape->record(std::move(result), [parts, offsets, cols, axis](const double* g,
                                                                      GradBuffer& grads) {
    for (std::size_t q = 0; q < parts.size(); ++q) {
      const Tensor& p = parts[q];
      if (!p.tracked()) continue;
      double* dp = grads.at(p.node(), p.size());
      for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t j = 0; j < p.cols(); ++j) {
          const std::size_t ri = axis == 0 ? offsets[q] + i : i;
          const std::size_t cj = axis == 0 ? j : offsets[q] + j;
          dp[i * p.cols() + j] += g[ri * cols + cj];
        }
    }
  });
}

/// Rows (axis 0) or columns (axis 1) in [begin, end).
inline Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  detail::require(axis == 0 || axis == 1, "slice: axis must be 0 or 1");
  const std::size_t extent = axis == 0 ? a.rows() : a.cols();
  detail::require(begin <= end && end <= extent, "slice: range out of bounds");
  const std::size_t rows = axis == 0 ? end - begin : a.rows();
  const std::size_t cols = axis == 0 ? a.cols() : end - begin;
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out[i * cols + j] = axis == 0 ? a(begin + i, j) : a(i, begin + j);
  Tensor result(rows, cols, std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(std::move(result), [a, axis, begin, rows, cols](const double* g,
                                                                          GradBuffer& grads) {
    double* da = grads.at(a.node(), a.size());
    const std::size_t ac = a.cols();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t src = axis == 0 ? (begin + i) * ac + j : i * ac + begin + j;
        da[src] += g[i * cols + j];
      }
  });
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> rel_errors;        // per coordinate; 0 for excluded ones
  std::vector<std::size_t> kink_coords;  // one-sided slopes disagree: not checked
  bool pass = true;
};

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // A coordinate is a kink when the one-sided slopes differ by more than
  // this fraction of max(1, |slope|).
  double kink_tol = 1e-2;
};

/// Compares the tape gradient of f at x against central differences.
/// f receives a tensor (tracked on the first call, untracked afterwards)
/// and must return a 1 x 1 tensor.
inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  const GradCheckOptions& opt = {}) {
  Tape tape;
  const Tensor tx = tape.track(x.detached());
  const Tensor y = f(tx);
  const Gradients grads = tape.backward(y);
  const auto analytic = grads.of(tx);
  const double f0 = y.item();

  GradCheckReport report;
  report.rel_errors.assign(x.size(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k) {
    std::vector<double> plus = x.values(), minus = x.values();
    plus[k] += opt.h;
    minus[k] -= opt.h;
    const double fp = f(Tensor(x.rows(), x.cols(), std::move(plus))).item();
    const double fm = f(Tensor(x.rows(), x.cols(), std::move(minus))).item();
    const double fwd = (fp - f0) / opt.h, bwd = (f0 - fm) / opt.h;
    if (std::abs(fwd - bwd) > opt.kink_tol * std::max({1.0, std::abs(fwd), std::abs(bwd)})) {
      report.kink_coords.push_back(k);
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * opt.h);
    const double a = analytic ? analytic->values()[k] : 0.0;
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
    report.rel_errors[k] = err;
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  report.pass = report.max_rel_error <= opt.tol;
  return report;
}

}  // namespace cyberauction::ad
