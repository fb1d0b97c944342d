// Copyright 2026 the recsparse authors.
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

#include "recsparse/sparse_update.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace recsparse {
namespace {

TableConfig table_config(uint32_t dim = 4) {
  TableConfig cfg;
  cfg.capacity = 128;
  cfg.embedding_dim = dim;
  cfg.chunk_rows = 64;
  return cfg;
}

// Independent scalar reference: one bias-corrected step, float storage,
// double intermediates. Written against the update rule, not the
// implementation.
struct ScalarAdamState {
  float w = 0, m = 0, v = 0;
  uint64_t step = 0;
};

void scalar_adam_step(ScalarAdamState& s, float g, const AdamParams& p) {
  s.step += 1;
  const double m_new = p.beta1 * static_cast<double>(s.m) + (1.0 - p.beta1) * g;
  const double v_new =
      p.beta2 * static_cast<double>(s.v) + (1.0 - p.beta2) * static_cast<double>(g) * g;
  const double m_hat = m_new / (1.0 - std::pow(p.beta1, static_cast<double>(s.step)));
  const double v_hat = v_new / (1.0 - std::pow(p.beta2, static_cast<double>(s.step)));
  s.w = static_cast<float>(s.w - p.lr * m_hat / (std::sqrt(v_hat) + p.eps));
  s.m = static_cast<float>(m_new);
  s.v = static_cast<float>(v_new);
}

TEST(GradAccumulator, RepeatedIdSumsAcrossCalls) {
  GradAccumulator acc(2, 4);
  const std::vector<uint64_t> ids{7};
  const std::vector<float> g{1.5f, -2.0f};
  acc.accumulate(ids, g);
  acc.accumulate(ids, g);
  ASSERT_EQ(acc.pending_ids(), 1u);
  EXPECT_EQ(acc.pending().at(7), (std::vector<float>{3.0f, -4.0f}));
  EXPECT_EQ(acc.micro_batches_seen(), 2u);
}

TEST(GradAccumulator, DisjointIdsUnion) {
  GradAccumulator acc(1, 1);
  const std::vector<uint64_t> a{1, 2}, b{3};
  const std::vector<float> ga{1.f, 2.f}, gb{3.f};
  acc.accumulate(a, ga);
  acc.accumulate(b, gb);
  EXPECT_EQ(acc.pending_ids(), 3u);
  EXPECT_EQ(acc.pending().at(1)[0], 1.f);
  EXPECT_EQ(acc.pending().at(3)[0], 3.f);
}

TEST(GradAccumulator, DuplicateWithinOneCallSums) {
  GradAccumulator acc(1, 1);
  const std::vector<uint64_t> ids{7, 7};
  const std::vector<float> grads{1.25f, 2.5f};
  acc.accumulate(ids, grads);
  EXPECT_EQ(acc.pending().at(7)[0], 3.75f);
}

TEST(GradAccumulator, ShapeMismatchThrows) {
  GradAccumulator acc(3, 1);
  const std::vector<uint64_t> ids{1};
  const std::vector<float> grads{1.f, 2.f};  // not 3 floats
  EXPECT_THROW(acc.accumulate(ids, grads), std::invalid_argument);
}

TEST(GradAccumulator, ReadyAfterConfiguredWindow) {
  GradAccumulator acc(1, 3);
  const std::vector<uint64_t> ids{1};
  const std::vector<float> g{1.f};
  acc.accumulate(ids, g);
  acc.accumulate(ids, g);
  EXPECT_FALSE(acc.ready());
  acc.accumulate(ids, g);
  EXPECT_TRUE(acc.ready());
  EmbedTable t(table_config(1));
  acc.apply_serial(t, AdamParams{});
  EXPECT_FALSE(acc.ready());
  EXPECT_EQ(acc.pending_ids(), 0u);
}

TEST(SparseAdam, ZeroGradZeroStateLeavesWeightsUnchanged) {
  EmbedTable t(table_config());
  const std::vector<float> w{0.7f, -0.3f, 0.0f, 1.0f};
  t.insert(5, w);
  GradAccumulator acc(4, 1);
  const std::vector<uint64_t> ids{5};
  const std::vector<float> zero(4, 0.0f);
  acc.accumulate(ids, zero);
  acc.apply_serial(t, AdamParams{});
  auto h = t.find(5);
  ASSERT_TRUE(h.has_value());
  for (size_t e = 0; e < 4; ++e) EXPECT_EQ(t.embedding(*h)[e], w[e]);
  EXPECT_EQ(t.opt_step(*h), 1u);  // the step still counts
}

TEST(SparseAdam, OneStepMatchesScalarOracle) {
  EmbedTable t(table_config(1));
  t.insert(9, std::vector<float>{0.5f});
  GradAccumulator acc(1, 1);
  const std::vector<uint64_t> ids{9};
  const std::vector<float> g{0.25f};
  acc.accumulate(ids, g);
  const AdamParams params{.lr = 0.01};
  acc.apply_serial(t, params);

  ScalarAdamState oracle{0.5f, 0.f, 0.f, 0};
  scalar_adam_step(oracle, 0.25f, params);

  auto h = t.find(9);
  ASSERT_TRUE(h.has_value());
  EXPECT_EQ(t.embedding(*h)[0], oracle.w);
  EXPECT_EQ(t.opt_m(*h)[0], oracle.m);
  EXPECT_EQ(t.opt_v(*h)[0], oracle.v);
  EXPECT_EQ(t.opt_step(*h), 1u);
  // Anchored to the independently scripted double-precision evaluation:
  // w' = 0.49000000039999997, m' = 0.025, v' = 6.25e-05.
  EXPECT_NEAR(t.embedding(*h)[0], 0.49000000039999997, 1e-7);
  EXPECT_NEAR(t.opt_m(*h)[0], 0.025, 1e-9);
  EXPECT_NEAR(t.opt_v(*h)[0], 6.25e-05, 1e-11);
}

TEST(SparseAdam, TrajectoryMatchesScalarOracle) {
  std::mt19937_64 rng(61);
  const AdamParams params{.lr = 0.003};
  EmbedTable t(table_config(1));
  t.insert(1, std::vector<float>{1.0f});
  ScalarAdamState oracle{1.0f, 0.f, 0.f, 0};
  for (int step = 0; step < 200; ++step) {
    const float g = static_cast<float>(rng() % 2000) / 1000.0f - 1.0f;
    GradAccumulator acc(1, 1);
    const std::vector<uint64_t> ids{1};
    const std::vector<float> grad{g};
    acc.accumulate(ids, grad);
    acc.apply_serial(t, params);
    scalar_adam_step(oracle, g, params);
    auto h = t.find(1);
    ASSERT_TRUE(h.has_value());
    ASSERT_NEAR(t.embedding(*h)[0], oracle.w, 1e-9);
    ASSERT_NEAR(t.opt_m(*h)[0], oracle.m, 1e-9);
    ASSERT_NEAR(t.opt_v(*h)[0], oracle.v, 1e-9);
  }
}

TEST(SparseAdam, UntouchedRowsBitwiseInvariant) {
  EmbedTable t(table_config());
  for (uint64_t k = 0; k < 20; ++k) {
    t.insert(k, std::vector<float>{static_cast<float>(k), 1.f, 2.f, 3.f});
  }
  std::vector<std::vector<float>> before(20);
  for (uint64_t k = 0; k < 20; ++k) {
    auto h = t.find(k);
    before[k].assign(t.embedding(*h).begin(), t.embedding(*h).end());
  }
  GradAccumulator acc(4, 1);
  const std::vector<uint64_t> ids{3, 7};
  std::vector<float> grads(8, 0.5f);
  acc.accumulate(ids, grads);
  EXPECT_EQ(acc.apply_serial(t, AdamParams{}), 2u);
  for (uint64_t k = 0; k < 20; ++k) {
    auto h = t.find(k);
    const bool touched = k == 3 || k == 7;
    const bool unchanged =
        std::equal(before[k].begin(), before[k].end(), t.embedding(*h).begin());
    EXPECT_EQ(unchanged, !touched) << "row " << k;
  }
}

TEST(SparseAdam, ApplyVivifiesAbsentIds) {
  EmbedTable t(table_config(2));
  GradAccumulator acc(2, 1);
  const std::vector<uint64_t> ids{42};
  const std::vector<float> g{0.1f, 0.2f};
  acc.accumulate(ids, g);
  EXPECT_EQ(acc.apply_serial(t, AdamParams{}), 1u);
  auto h = t.find(42);
  ASSERT_TRUE(h.has_value());  // created from a zero row, then stepped once
  EXPECT_EQ(t.opt_step(*h), 1u);
  EXPECT_NE(t.embedding(*h)[0], 0.0f);
}

TEST(SparseAdam, AccumulationLinearity) {
  // g1 then g2 in two calls applies the same update as g1+g2 in one call.
  const std::vector<float> g1{0.5f, -0.25f}, g2{0.125f, 0.75f};
  std::vector<float> g12(2);
  for (int e = 0; e < 2; ++e) g12[e] = g1[e] + g2[e];
  const std::vector<uint64_t> ids{11};

  EmbedTable ta(table_config(2)), tb(table_config(2));
  ta.insert(11, std::vector<float>{1.f, 1.f});
  tb.insert(11, std::vector<float>{1.f, 1.f});
  GradAccumulator acc_a(2, 2), acc_b(2, 1);
  acc_a.accumulate(ids, g1);
  acc_a.accumulate(ids, g2);
  acc_b.accumulate(ids, g12);
  acc_a.apply_serial(ta, AdamParams{});
  acc_b.apply_serial(tb, AdamParams{});

  auto ha = ta.find(11), hb = tb.find(11);
  for (int e = 0; e < 2; ++e) {
    EXPECT_EQ(ta.embedding(*ha)[e], tb.embedding(*hb)[e]);
    EXPECT_EQ(ta.opt_m(*ha)[e], tb.opt_m(*hb)[e]);
    EXPECT_EQ(ta.opt_v(*ha)[e], tb.opt_v(*hb)[e]);
  }
}

TEST(SparseAdam, OmpApplyMatchesSerialBitwise) {
  std::mt19937_64 rng(67);
  EmbedTable ta(table_config()), tb(table_config());
  for (uint64_t k = 0; k < 30; ++k) {
    const std::vector<float> w{static_cast<float>(k), 0.f, -1.f, 1.f};
    ta.insert(k, w);
    tb.insert(k, w);
  }
  GradAccumulator acc_a(4, 1), acc_b(4, 1);
  std::vector<uint64_t> ids;
  std::vector<float> grads;
  for (int i = 0; i < 100; ++i) {
    ids.push_back(rng() % 40);  // some absent -> vivified
    for (int e = 0; e < 4; ++e) {
      grads.push_back(static_cast<float>(rng() % 100) / 50.0f - 1.0f);
    }
  }
  acc_a.accumulate(ids, grads);
  acc_b.accumulate(ids, grads);
  const size_t updated_a = acc_a.apply(ta, AdamParams{});
  const size_t updated_b = acc_b.apply_serial(tb, AdamParams{});
  EXPECT_EQ(updated_a, updated_b);
  EXPECT_EQ(ta.occupied(), tb.occupied());
  EXPECT_EQ(ta.tick(), tb.tick());
  ta.for_each_occupied([&](uint64_t, uint64_t key, RowHandle ha) {
    auto hb = tb.find(key);
    ASSERT_TRUE(hb.has_value());
    for (int e = 0; e < 4; ++e) {
      ASSERT_EQ(ta.embedding(ha)[e], tb.embedding(*hb)[e]);
      ASSERT_EQ(ta.opt_m(ha)[e], tb.opt_m(*hb)[e]);
      ASSERT_EQ(ta.opt_v(ha)[e], tb.opt_v(*hb)[e]);
    }
    ASSERT_EQ(ta.opt_step(ha), tb.opt_step(*hb));
    ASSERT_EQ(ta.row_timestamp(ha), tb.row_timestamp(*hb));
  });
}

TEST(SparseAdam, DimMismatchWithTableThrows) {
  EmbedTable t(table_config(4));
  GradAccumulator acc(2, 1);
  const std::vector<uint64_t> ids{1};
  const std::vector<float> g{0.1f, 0.2f};
  acc.accumulate(ids, g);
  EXPECT_THROW(acc.apply_serial(t, AdamParams{}), ConfigError);
}

}  // namespace
}  // namespace recsparse
