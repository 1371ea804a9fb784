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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "cyberauction/baselines.hpp"
#include "cyberauction/mechanism.hpp"
#include "cyberauction/neural.hpp"
#include "gradcheck_cases.hpp"

using namespace cyberauction;

namespace {

const BundleIndex& index3() {
  static const BundleIndex idx = enumerate_bundles(ActionCatalog{});
  return idx;
}

Matrix random_profile(Rng& rng, std::size_t n, std::size_t m) {
  Matrix v(n, m);
  for (double& x : v.data()) x = rng.uniform();
  return v;
}

const Hyper kSmall{8, 1, 2, 16};

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cyberauction_neural_" + name);
}

/// VCG as a probeable mechanism, with a forward-difference report gradient.
struct VcgProbe {
  const BundleIndex* index;
  double utility(const Matrix& reported, const Matrix& truth, std::size_t i) const {
    const auto out = vcg_payments(reported, *index);
    return cyberauction::utility(i, out.allocation, out.payments, truth);
  }
  UtilityGradient utility_and_gradient(const Matrix& reported, const Matrix& truth, std::size_t i) const {
    UtilityGradient ug{utility(reported, truth, i), std::vector<double>(reported.cols(), 0.0)};
    for (std::size_t m = 0; m < reported.cols(); ++m) {
      Matrix r = reported;
      r(i, m) += 1e-3;
      ug.gradient[m] = (utility(r, truth, i) - ug.utility) / 1e-3;
    }
    return ug;
  }
};

struct ConstantProbe {
  double utility(const Matrix&, const Matrix&, std::size_t) const { return 0.25; }
  UtilityGradient utility_and_gradient(const Matrix& reported, const Matrix&, std::size_t) const {
    return {0.25, std::vector<double>(reported.cols(), 0.0)};
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Encoder.

TEST(Encode, IdenticalRowsGiveIdenticalEmbeddings) {
  const auto p = init_params({}, 7, 4);
  Rng rng(1);
  Matrix v = random_profile(rng, 4, 7);
  std::copy(v.row(0).begin(), v.row(0).end(), v.row(2).begin());
  const auto h = encode(ad::Tensor::from_matrix(v), p);
  for (std::size_t d = 0; d < h.cols(); ++d) EXPECT_EQ(h(0, d), h(2, d));
}

TEST(Encode, SingleTokenIgnoresQueriesAndKeys) {
  auto p = init_params({}, 7, 5);
  Rng rng(2);
  const Matrix v = random_profile(rng, 1, 7);
  const auto before = encode(ad::Tensor::from_matrix(v), p);
  for (auto& blk : p.blocks) {
    for (double& w : blk.wq.mutable_values()) w = rng.uniform(-3.0, 3.0);
    for (double& w : blk.wk.mutable_values()) w = rng.uniform(-3.0, 3.0);
  }
  const auto after = encode(ad::Tensor::from_matrix(v), p);
  for (std::size_t d = 0; d < before.cols(); ++d) EXPECT_NEAR(before(0, d), after(0, d), 1e-12);
}

TEST(Encode, SingleTokenMatchesHandTrace) {
  const Hyper hyper{4, 1, 1, 4};
  const auto p = init_params(hyper, 7, 6);
  Rng rng(3);
  const Matrix v = random_profile(rng, 1, 7);
  const auto x = ad::Tensor::from_matrix(v);
  const auto& blk = p.blocks[0];
  auto lin = [](const ad::Tensor& a, const ad::Tensor& w, const ad::Tensor& b) {
    return ad::add(ad::matmul(a, w), b);
  };
  const auto h0 = lin(x, p.embed_w, p.embed_b);
  const auto attn = lin(lin(h0, blk.wv, blk.bv), blk.wo, blk.bo);
  const auto h1 = ad::layer_norm(ad::add(h0, attn), blk.ln1_gain, blk.ln1_shift);
  const auto ff = lin(ad::relu(lin(h1, blk.ff1_w, blk.ff1_b)), blk.ff2_w, blk.ff2_b);
  const auto expected = ad::layer_norm(ad::add(h1, ff), blk.ln2_gain, blk.ln2_shift);
  const auto got = encode(x, p);
  for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(got(0, d), expected(0, d), 1e-12);
}

TEST(Encode, RejectsNonFiniteAndMisshapenInput) {
  const auto p = init_params(kSmall, 7, 0);
  Matrix v(2, 7, 0.5);
  v(1, 3) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(encode(ad::Tensor::from_matrix(v), p), InvalidInput);
  EXPECT_THROW(encode(ad::Tensor(2, 6), p), InvalidInput);
  EXPECT_THROW(encode(ad::Tensor(3, 7), p, 2), InvalidInput);
}

TEST(Params, InvalidHyperparametersAreRejected) {
  EXPECT_THROW(init_params(Hyper{30, 2, 4, 64}, 7, 0), InvalidInput);
  EXPECT_THROW(init_params(Hyper{32, 0, 4, 64}, 7, 0), InvalidInput);
  EXPECT_THROW(init_params(Hyper{}, 0, 0), InvalidInput);
}

TEST(Params, InitializationIsSeeded) {
  const auto a = init_params({}, 7, 11), b = init_params({}, 7, 11), c = init_params({}, 7, 12);
  EXPECT_EQ(a.embed_w.values(), b.embed_w.values());
  EXPECT_NE(a.embed_w.values(), c.embed_w.values());
}

// ---------------------------------------------------------------------------
// Allocation head.

TEST(Allocation, EqualLogitsSingleAgentGiveOneEighth) {
  const ad::Tensor logits(1, 8, 0.0);
  for (const auto& x : {allocate_fused(logits, index3()), allocate_from_logits(logits, index3())})
    for (double v : x.values()) EXPECT_NEAR(v, 1.0 / 8.0, 1e-15);
}

TEST(Allocation, TwoAgentsContestingOneActionAreCapped) {
  ad::Tensor logits(2, 8, 0.0);
  auto& l = logits.mutable_values();
  l[0] = 10.0;      // agent 0, bundle {Analyze}
  l[8 + 0] = 10.0;  // agent 1, bundle {Analyze}
  const double e10 = std::exp(10.0);
  const double cap = e10 / (2.0 * e10 + 7.0);
  for (const auto& x : {allocate_fused(logits, index3()), allocate_from_logits(logits, index3())}) {
    EXPECT_NEAR(x(0, 0), cap, 1e-12);
    EXPECT_NEAR(x(1, 0), cap, 1e-12);
    const auto report = check_feasibility(x.to_matrix(), index3());
    EXPECT_TRUE(report.ok);
    EXPECT_LE(report.action_loads[0], 1.0);
    EXPECT_NEAR(report.action_loads[0], (2.0 * e10 + 6.0) / (2.0 * e10 + 7.0), 1e-12);
  }
}

TEST(Allocation, AllMassOnNullGivesZeroAllocation) {
  const double ninf = -std::numeric_limits<double>::infinity();
  ad::Tensor logits(3, 8, ninf);
  for (std::size_t i = 0; i < 3; ++i) logits.mutable_values()[i * 8 + 7] = 0.0;
  for (const auto& x : {allocate_fused(logits, index3()), allocate_from_logits(logits, index3())})
    for (double v : x.values()) EXPECT_EQ(v, 0.0);
}

TEST(Allocation, FusedCapsMatchComposition) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(5), groups = 1 + rng.below(3);
    const auto logits = gradcheck::random_tensor(rng, n * groups, 8, -4.0, 4.0);
    const auto w = gradcheck::random_tensor(rng, n * groups, 7);
    const auto fused = allocate_fused(logits, index3(), groups);
    for (std::size_t g = 0; g < groups; ++g) {
      const auto part = allocate_from_logits(ad::slice(logits, 0, g * n, (g + 1) * n), index3());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t m = 0; m < 7; ++m) EXPECT_NEAR(fused(g * n + i, m), part(i, m), 1e-15);
    }
    auto fused_f = [&](const ad::Tensor& x) { return ad::sum(ad::mul(allocate_fused(x, index3(), groups), w)); };
    auto comp_f = [&](const ad::Tensor& x) {
      std::vector<ad::Tensor> parts;
      for (std::size_t g = 0; g < groups; ++g)
        parts.push_back(allocate_from_logits(ad::slice(x, 0, g * n, (g + 1) * n), index3()));
      return ad::sum(ad::mul(ad::concat(parts, 0), w));
    };
    ad::Tape t1, t2;
    const auto x1 = t1.track(logits), x2 = t2.track(logits);
    const auto g1 = t1.backward(fused_f(x1)).of(x1).value();
    const auto g2 = t2.backward(comp_f(x2)).of(x2).value();
    for (std::size_t k = 0; k < g1.size(); ++k) EXPECT_NEAR(g1.values()[k], g2.values()[k], 1e-12);
    EXPECT_LT(ad::grad_check(fused_f, logits).max_rel_error, 1e-4);
  }
}

TEST(Allocation, WrongWidthThrows) {
  EXPECT_THROW(allocate_fused(ad::Tensor(2, 7), index3()), InvalidInput);
  EXPECT_THROW(allocate_from_logits(ad::Tensor(2, 9), index3()), InvalidInput);
}

// ---------------------------------------------------------------------------
// Payment head and forward pass.

TEST(Payment, HalfFractionOfPointEightIsPointFour) {
  auto p = zero_params(kSmall, 7);
  ad::Tensor alloc(1, 7, 0.0);
  alloc.mutable_values()[2] = 0.5;
  ad::Tensor bids(1, 7, 0.0);
  bids.mutable_values()[2] = 1.6;
  const auto out = payment_head(ad::Tensor(1, kSmall.d_model), alloc, bids, p);
  EXPECT_DOUBLE_EQ(out.fractions.item(), 0.5);
  EXPECT_NEAR(out.payments.item(), 0.4, 1e-15);
}

TEST(Payment, ZeroAllocationRowPaysNothing) {
  auto p = init_params(kSmall, 7, 3);
  p.pay_b = ad::Tensor(1, 1, 5.0);
  Rng rng(4);
  const auto out = payment_head(gradcheck::random_tensor(rng, 2, kSmall.d_model), ad::Tensor(2, 7),
                                gradcheck::random_tensor(rng, 2, 7, 0.0, 1.0), p);
  EXPECT_EQ(out.payments.values()[0], 0.0);
  EXPECT_EQ(out.payments.values()[1], 0.0);
}

TEST(Payment, FractionNearOneLeavesNoUtility) {
  auto p = init_params(kSmall, 7, 3);
  p.pay_w = ad::Tensor(kSmall.d_model, 1);
  p.pay_b = ad::Tensor(1, 1, 40.0);
  Rng rng(5);
  const Matrix v = random_profile(rng, 3, 7);
  const auto out = forward(v, p, index3());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(utility(i, out.allocation, out.payments, v), 0.0, 1e-12);
    EXPECT_NEAR(out.payments[i], allocated_value(i, out.allocation, v), 1e-12);
  }
}

TEST(Forward, ZeroValuationsGiveZeroRevenue) {
  const auto out = forward(Matrix(4, 7, 0.0), init_params({}, 7, 9), index3());
  EXPECT_EQ(out.revenue, 0.0);
}

TEST(Forward, FeasibleAndIndividuallyRational) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = init_params({}, 7, 100 + trial);
    const std::size_t n = 1 + rng.below(13);
    const Matrix v = random_profile(rng, n, 7);
    const auto out = forward(v, p, index3());
    EXPECT_TRUE(check_feasibility(out.allocation, index3()).ok);
    for (bool ok : ir_check(out, v)) EXPECT_TRUE(ok);
    EXPECT_GE(out.revenue, 0.0);
    EXPECT_LE(out.revenue, out.welfare + 1e-12);
  }
}

TEST(Forward, BitwiseReproducible) {
  Rng rng(9);
  const Matrix v = random_profile(rng, 13, 7);
  const auto a = forward(v, init_params({}, 7, 1), index3());
  const auto b = forward(v, init_params({}, 7, 1), index3());
  EXPECT_EQ(a.allocation, b.allocation);
  EXPECT_EQ(a.payments, b.payments);
}

TEST(Forward, PermutationEquivariant) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = init_params({}, 7, 200 + trial);
    const Matrix v = random_profile(rng, 13, 7);
    std::vector<std::size_t> perm(13);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t k = 12; k > 0; --k) std::swap(perm[k], perm[rng.below(k + 1)]);
    Matrix pv(13, 7);
    for (std::size_t i = 0; i < 13; ++i) std::copy(v.row(perm[i]).begin(), v.row(perm[i]).end(), pv.row(i).begin());
    const auto a = forward(v, p, index3());
    const auto b = forward(pv, p, index3());
    for (std::size_t i = 0; i < 13; ++i) {
      EXPECT_NEAR(b.payments[i], a.payments[perm[i]], 1e-9);
      for (std::size_t m = 0; m < 7; ++m) EXPECT_NEAR(b.allocation(i, m), a.allocation(perm[i], m), 1e-9);
    }
  }
}

TEST(Forward, StackedGroupsMatchSeparatePasses) {
  Rng rng(11);
  const auto p = init_params({}, 7, 3);
  const Matrix a = random_profile(rng, 4, 7), b = random_profile(rng, 4, 7);
  Matrix both(8, 7);
  std::copy(a.data().begin(), a.data().end(), both.data().begin());
  std::copy(b.data().begin(), b.data().end(), both.data().begin() + 28);
  const auto stacked = forward_tensors(ad::Tensor::from_matrix(both), p, index3(), 2);
  const auto oa = forward(a, p, index3()), ob = forward(b, p, index3());
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(stacked.payments.values()[i], oa.payments[i], 1e-12);
    EXPECT_NEAR(stacked.payments.values()[4 + i], ob.payments[i], 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Misreports and regret.

TEST(Misreport, ZeroStepsReturnsTruthfulReport) {
  const auto p = init_params(kSmall, 7, 2);
  Rng rng(12);
  const Matrix v = random_profile(rng, 3, 7);
  const NeuralMechanism mech(p, index3());
  MisreportConfig cfg;
  cfg.steps = 0;
  const auto r = misreport_ascent(mech, v, 1, cfg, 5);
  EXPECT_EQ(r.report, std::vector<double>(v.row(1).begin(), v.row(1).end()));
  EXPECT_EQ(r.utility, r.truthful_utility);
  for (const auto& x : neural_misreport_all(p, index3(), v, cfg, 5))
    EXPECT_EQ(regret_of(x), 0.0);
}

TEST(Misreport, FlatLandscapeReturnsTruthfulStart) {
  Rng rng(13);
  const Matrix v = random_profile(rng, 3, 7);
  const auto r = misreport_ascent(ConstantProbe{}, v, 0, MisreportConfig{25, 0.1, 4}, 1);
  EXPECT_EQ(r.report, std::vector<double>(v.row(0).begin(), v.row(0).end()));
  EXPECT_EQ(regret_of(r), 0.0);
  for (const auto& row : regret_estimate(ConstantProbe{}, std::vector<Matrix>{v, v}, MisreportConfig{}, 3))
    for (double reg : row) EXPECT_EQ(reg, 0.0);
}

TEST(Misreport, AllZeroWeightsRewardUnderbidding) {
  // With every weight zero the allocation is constant and the fraction is
  // 1/2, so a report of zero saves exactly half the allocated value.
  const auto p = zero_params(kSmall, 7);
  Rng rng(14);
  const Matrix v = random_profile(rng, 3, 7);
  const auto out = forward(v, p, index3());
  MisreportConfig cfg{60, 1.0, 1};
  const auto results = neural_misreport_all(p, index3(), v, cfg, 1);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const double value = allocated_value(i, out.allocation, v);
    EXPECT_NEAR(regret_of(r), 0.5 * value, 1e-12);
    for (double x : r.report) EXPECT_EQ(x, 0.0);
  }
}

TEST(Misreport, NeverWorseThanTruthful) {
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = init_params(kSmall, 7, 300 + trial);
    const Matrix v = random_profile(rng, 4, 7);
    for (const auto& r : neural_misreport_all(p, index3(), v, MisreportConfig{}, trial)) {
      EXPECT_GE(r.utility, r.truthful_utility - 1e-12);
      EXPECT_GE(regret_of(r), 0.0);
      for (double x : r.report) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
      }
    }
  }
}

TEST(Misreport, BatchedSearchMatchesGenericSearchBitwise) {
  Rng rng(16);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = init_params({}, 7, 400 + trial);
    const Matrix v = random_profile(rng, 1 + rng.below(6), 7);
    const MisreportConfig cfg{10, 0.1, 3};
    const auto generic = misreport_all(NeuralMechanism(p, index3()), v, cfg, 77 + trial);
    const auto batched = neural_misreport_all(p, index3(), v, cfg, 77 + trial);
    ASSERT_EQ(generic.size(), batched.size());
    for (std::size_t i = 0; i < generic.size(); ++i) {
      EXPECT_EQ(generic[i].utility, batched[i].utility);
      EXPECT_EQ(generic[i].truthful_utility, batched[i].truthful_utility);
      EXPECT_EQ(generic[i].report, batched[i].report);
    }
  }
}

TEST(Misreport, VcgRegretIsNegligible) {
  Rng rng(17);
  const VcgProbe vcg{&index3()};
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix v = random_profile(rng, 1 + rng.below(3), 7);
    const auto regrets = regret_estimate(vcg, std::vector<Matrix>{v}, MisreportConfig{25, 0.1, 3}, trial);
    for (std::size_t i = 0; i < v.rows(); ++i) {
      EXPECT_LE(regrets[0][i], 1e-6);
      EXPECT_NEAR(regrets[0][i], 0.0, 1e-6);
      EXPECT_LE(measured_regret(vcg_mechanism(index3()), v, i), 1e-6);
    }
  }
}

TEST(Misreport, AgentOutOfRangeThrows) {
  const auto p = init_params(kSmall, 7, 1);
  EXPECT_THROW(misreport_ascent(NeuralMechanism(p, index3()), Matrix(2, 7), 2, MisreportConfig{}, 0),
               InvalidInput);
}

// ---------------------------------------------------------------------------
// Loss and gradient.

TEST(Loss, Examples) {
  EXPECT_EQ(combined_loss(0.0, 0.0, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(combined_loss(3.0, 0.7, 1.0), 0.7);
  EXPECT_NEAR(combined_loss(std::exp(1.0) - 1.0, 5.0, 0.0), -1.0, 1e-15);
  EXPECT_THROW(combined_loss(-0.1, 0.0, 0.5), InvariantViolation);
  EXPECT_THROW(combined_loss(1.0, 0.0, 1.5), InvalidInput);
}

TEST(Loss, MonotoneDecreasingInRevenue) {
  double prev = combined_loss(0.0, 0.2, 0.3);
  for (double r = 0.1; r < 20.0; r += 0.1) {
    const double l = combined_loss(r, 0.2, 0.3);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(Loss, SurrogateAgreesWithStepAtSearchPoint) {
  Rng rng(18);
  std::vector<Matrix> batch{random_profile(rng, 5, 7), random_profile(rng, 5, 7)};
  const auto p = init_params({}, 7, 8);
  const TrainConfig cfg;
  const auto step = loss_and_gradient(p, index3(), batch, cfg, 99);
  const auto searches = search_misreports(p, index3(), batch, cfg.misreport, 99);
  EXPECT_NEAR(fixed_misreport_loss(p, index3(), batch, searches, cfg.gamma), step.record.loss, 1e-12);
  EXPECT_GE(step.record.regret_mean, 0.0);
  EXPECT_GE(step.record.regret_max, step.record.regret_mean);
}

TEST(Loss, GammaOneLossIsMeanRegretSum) {
  Rng rng(19);
  std::vector<Matrix> batch{random_profile(rng, 4, 7), random_profile(rng, 4, 7)};
  TrainConfig cfg;
  cfg.gamma = 1.0;
  const auto step = loss_and_gradient(init_params(kSmall, 7, 2), index3(), batch, cfg, 5);
  EXPECT_NEAR(step.record.loss, step.record.regret_mean * 4.0, 1e-12);
}

TEST(Loss, EndToEndGradientMatchesFiniteDifferences) {
  std::size_t gainers = 0, checked = 0;
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const auto r = gradcheck::end_to_end_check(seed);
    EXPECT_LT(r.max_rel_error, 1e-3) << "seed " << seed;
    gainers += r.gainers;
    checked += r.checked;
  }
  EXPECT_GT(gainers, 0u);
  EXPECT_GT(checked, 60u);
}

TEST(Loss, GradientIsIndependentOfWorkerCount) {
  Rng rng(20);
  std::vector<Matrix> batch;
  for (int s = 0; s < 6; ++s) batch.push_back(random_profile(rng, 4, 7));
  const auto p = init_params(kSmall, 7, 21);
  const auto a = loss_and_gradient(p, index3(), batch, TrainConfig{}, 3, 1);
  const auto b = loss_and_gradient(p, index3(), batch, TrainConfig{}, 3, 4);
  EXPECT_EQ(a.record.loss, b.record.loss);
  EXPECT_EQ(a.gradient, b.gradient);
}

// ---------------------------------------------------------------------------
// Training.

namespace {

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.hyper = kSmall;
  cfg.batch_size = 4;
  cfg.iterations = 6;
  cfg.misreport.steps = 5;
  cfg.lr = 1e-2;
  cfg.seed = 42;
  return cfg;
}

std::vector<Matrix> tiny_dataset() {
  Rng rng(21);
  std::vector<Matrix> data;
  for (int s = 0; s < 16; ++s) data.push_back(random_profile(rng, 3, 7));
  return data;
}

}  // namespace

TEST(Train, SameSeedGivesIdenticalStream) {
  const auto data = tiny_dataset();
  const auto a = train(data, index3(), tiny_train());
  const auto b = train(data, index3(), tiny_train(), {}, 3);
  ASSERT_EQ(a.metrics.size(), 6u);
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t k = 0; k < a.metrics.size(); ++k) {
    EXPECT_EQ(a.metrics[k].iteration, k);
    EXPECT_EQ(a.metrics[k].loss, b.metrics[k].loss);
    EXPECT_EQ(a.metrics[k].revenue_mean, b.metrics[k].revenue_mean);
    EXPECT_EQ(a.metrics[k].regret_mean, b.metrics[k].regret_mean);
    EXPECT_EQ(a.metrics[k].regret_max, b.metrics[k].regret_max);
  }
  EXPECT_EQ(checkpoint_json(a.params), checkpoint_json(b.params));
}

TEST(Train, ParametersMove) {
  const auto data = tiny_dataset();
  const auto cfg = tiny_train();
  const auto out = train(data, index3(), cfg);
  EXPECT_NE(out.params.pay_w.values(), init_params(cfg.hyper, 7, cfg.seed).pay_w.values());
}

TEST(Train, ObserverCanStopEarly) {
  std::size_t seen = 0;
  const auto out = train(tiny_dataset(), index3(), tiny_train(), [&](const MetricsRecord&) { return ++seen < 2; });
  EXPECT_EQ(seen, 2u);
  EXPECT_EQ(out.metrics.size(), 2u);
}

TEST(Train, ResumingFromParametersUsesThem) {
  auto cfg = tiny_train();
  cfg.iterations = 1;
  const auto start = init_params(cfg.hyper, 7, 999);
  const auto a = train(tiny_dataset(), index3(), cfg, {}, 1, start);
  const auto b = train(tiny_dataset(), index3(), cfg);
  EXPECT_NE(a.metrics[0].loss, b.metrics[0].loss);
}

TEST(Train, InvalidConfigurationsAreRejected) {
  const auto data = tiny_dataset();
  auto cfg = tiny_train();
  cfg.gamma = -0.1;
  EXPECT_THROW(train(data, index3(), cfg), InvalidInput);
  cfg = tiny_train();
  cfg.misreport.steps = 0;
  EXPECT_THROW(train(data, index3(), cfg), InvalidInput);
  cfg = tiny_train();
  cfg.batch_size = 0;
  EXPECT_THROW(train(data, index3(), cfg), InvalidInput);
  EXPECT_THROW(train(std::vector<Matrix>{}, index3(), tiny_train()), InvalidInput);
  std::vector<Matrix> ragged{Matrix(3, 7), Matrix(4, 7)};
  EXPECT_THROW(train(ragged, index3(), tiny_train()), InvalidInput);
}

TEST(Train, MetricsRecordSerialization) {
  const MetricsRecord r{3, 1.5, 0.01, 0.2, -0.4, 120};
  const auto j = to_json(r);
  EXPECT_EQ(j.at("iteration"), 3);
  EXPECT_EQ(j.at("revenue_mean"), 1.5);
  EXPECT_EQ(j.at("regret_mean"), 0.01);
  EXPECT_EQ(j.at("regret_max"), 0.2);
  EXPECT_EQ(j.at("loss"), -0.4);
  EXPECT_EQ(j.at("wallclock_ms"), 120);
}

// ---------------------------------------------------------------------------
// Checkpoints.

TEST(Checkpoint, RoundTripIsBitwiseExact) {
  const auto p = init_params({}, 7, 31);
  const auto path = temp_path("roundtrip.json");
  save_checkpoint(p, path.string(), {{"seed", 31}});
  const auto q = load_checkpoint(path.string());
  EXPECT_EQ(q.hyper, p.hyper);
  EXPECT_EQ(checkpoint_json(q), checkpoint_json(p));
  Rng rng(22);
  const Matrix v = random_profile(rng, 13, 7);
  const auto a = forward(v, p, index3()), b = forward(v, q, index3());
  EXPECT_EQ(a.allocation, b.allocation);
  EXPECT_EQ(a.payments, b.payments);
  std::filesystem::remove(path);
}

TEST(Checkpoint, SpecialValuesSurvive) {
  auto p = init_params(kSmall, 7, 1);
  p.pay_b = ad::Tensor(1, 1, -0.0);
  p.embed_b.mutable_values()[0] = std::numeric_limits<double>::denorm_min();
  const auto q = params_from_checkpoint(checkpoint_json(p));
  EXPECT_TRUE(std::signbit(q.pay_b.item()));
  EXPECT_EQ(q.embed_b.values()[0], std::numeric_limits<double>::denorm_min());
}

TEST(Checkpoint, TruncatedFileIsCorrupt) {
  const auto path = temp_path("truncated.json");
  save_checkpoint(init_params(kSmall, 7, 1), path.string());
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  EXPECT_THROW(load_checkpoint(path.string()), CheckpointError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path.string()), CheckpointError);
}

TEST(Checkpoint, UnknownVersionIsAVersionError) {
  auto j = checkpoint_json(init_params(kSmall, 7, 1));
  j["version"] = 99;
  EXPECT_THROW(params_from_checkpoint(j), CheckpointVersionError);
}

TEST(Checkpoint, MalformedTensorsAreRejected) {
  const auto good = checkpoint_json(init_params(kSmall, 7, 1));
  auto j = good;
  j["tensors"][0]["shape"] = {1, 1};
  EXPECT_THROW(params_from_checkpoint(j), CheckpointError);
  j = good;
  j["tensors"][0]["data_base16"] = "zz";
  EXPECT_THROW(params_from_checkpoint(j), CheckpointError);
  j = good;
  j["tensors"].erase(j["tensors"].size() - 1);
  EXPECT_THROW(params_from_checkpoint(j), CheckpointError);
  j = good;
  j["tensors"][1]["name"] = "bogus";
  EXPECT_THROW(params_from_checkpoint(j), CheckpointError);
  j = good;
  j.erase("hyper");
  EXPECT_THROW(params_from_checkpoint(j), CheckpointError);
}
