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

#include "recsparse/merge_registry.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

namespace recsparse {
namespace {

std::vector<FeatureConfig> three_tables_same_dim() {
  return {
      {"f_user", 64, {"t_user"}, Pooling::kNone},
      {"f_item", 64, {"t_item"}, Pooling::kNone},
      {"f_shop", 64, {"t_shop"}, Pooling::kNone},
  };
}

TEST(PlanMerge, ThreeTablesOneGroup) {
  const MergePlan plan = plan_merge(three_tables_same_dim());
  ASSERT_EQ(plan.groups.size(), 1u);
  const MergeGroup& g = plan.groups[0];
  EXPECT_EQ(g.member_tables.size(), 3u);
  EXPECT_EQ(g.k_bits, 2u);  // ceil(log2(3 + 1)) == 2
  EXPECT_EQ(g.table_index_of.at("t_user"), 1u);
  EXPECT_EQ(g.table_index_of.at("t_item"), 2u);
  EXPECT_EQ(g.table_index_of.at("t_shop"), 3u);
}

TEST(PlanMerge, MixedDimsSplitIntoGroups) {
  const std::vector<FeatureConfig> configs = {
      {"a", 64, {"ta"}, Pooling::kNone},
      {"b", 64, {"tb"}, Pooling::kNone},
      {"c", 128, {"tc"}, Pooling::kNone},
  };
  const MergePlan plan = plan_merge(configs);
  ASSERT_EQ(plan.groups.size(), 2u);
  EXPECT_EQ(plan.groups[0].embedding_dim, 64u);
  EXPECT_EQ(plan.groups[0].member_tables.size(), 2u);
  EXPECT_EQ(plan.groups[0].k_bits, 2u);  // ceil(log2 3)
  EXPECT_EQ(plan.groups[1].embedding_dim, 128u);
  EXPECT_EQ(plan.groups[1].member_tables.size(), 1u);
  EXPECT_EQ(plan.groups[1].k_bits, 1u);
}

TEST(PlanMerge, EmptyConfigsGiveEmptyPlan) {
  const MergePlan plan = plan_merge(std::span<const FeatureConfig>{});
  EXPECT_TRUE(plan.groups.empty());
  EXPECT_TRUE(plan.group_of_table.empty());
}

TEST(PlanMerge, DuplicateFeatureNameThrows) {
  std::vector<FeatureConfig> configs = three_tables_same_dim();
  configs.push_back({"f_user", 32, {"t_other"}, Pooling::kNone});
  EXPECT_THROW(plan_merge(configs), ConfigError);
}

TEST(PlanMerge, ConflictingTableDimThrows) {
  const std::vector<FeatureConfig> configs = {
      {"a", 64, {"shared"}, Pooling::kNone},
      {"b", 32, {"shared"}, Pooling::kNone},
  };
  EXPECT_THROW(plan_merge(configs), ConfigError);
}

TEST(PlanMerge, SharedTableListedOnce) {
  const std::vector<FeatureConfig> configs = {
      {"a", 64, {"shared"}, Pooling::kNone},
      {"b", 64, {"shared", "other"}, Pooling::kSum},
  };
  const MergePlan plan = plan_merge(configs);
  ASSERT_EQ(plan.groups.size(), 1u);
  EXPECT_EQ(plan.groups[0].member_tables,
            (std::vector<std::string>{"shared", "other"}));
}

TEST(PlanMerge, DeterministicOverRepeatedCalls) {
  const auto configs = three_tables_same_dim();
  const MergePlan a = plan_merge(configs);
  const MergePlan b = plan_merge(configs);
  EXPECT_EQ(a.groups[0].member_tables, b.groups[0].member_tables);
  EXPECT_EQ(a.groups[0].k_bits, b.groups[0].k_bits);
}

MergeGroup group_with_k2() {
  return plan_merge(three_tables_same_dim()).groups[0];
}

TEST(GlobalId, EncodeMatchesHandComputedValue) {
  // k = 2, i = 1, x = 5 -> (1 << 61) | 5
  EXPECT_EQ(group_with_k2().encode_global_id(1, 5), 2305843009213693957ull);
}

TEST(GlobalId, IndexZeroIsIdentity) {
  const MergeGroup g = group_with_k2();
  EXPECT_EQ(g.encode_global_id(0, 5), 5ull);
  EXPECT_EQ(g.encode_global_id(0, 0), 0ull);
  EXPECT_EQ(g.encode_global_id(0, g.max_raw_id()), g.max_raw_id());
}

TEST(GlobalId, RawIdOverflowThrows) {
  const MergeGroup g = group_with_k2();
  EXPECT_THROW(g.encode_global_id(1, uint64_t{1} << 61), std::overflow_error);
  EXPECT_NO_THROW(g.encode_global_id(1, (uint64_t{1} << 61) - 1));
}

TEST(GlobalId, BadIndexThrows) {
  const MergeGroup g = group_with_k2();  // m == 3
  EXPECT_THROW(g.encode_global_id(4, 0), std::out_of_range);
}

TEST(GlobalId, DecodeInvertsEncode) {
  const MergeGroup g = group_with_k2();
  const auto [i, x] = g.decode_global_id(2305843009213693957ull);
  EXPECT_EQ(i, 1u);
  EXPECT_EQ(x, 5u);
}

TEST(GlobalId, TopBitSetRejected) {
  const MergeGroup g = group_with_k2();
  EXPECT_THROW(g.decode_global_id(uint64_t{1} << 63), std::invalid_argument);
}

TEST(GlobalId, DecodedIndexBeyondMembersRejected) {
  MergeGroup g = group_with_k2();
  g.member_tables.pop_back();  // m == 2, but k still 2: index 3 is invalid
  EXPECT_THROW(g.decode_global_id(g.encode_global_id(3, 1)), std::out_of_range);
}

TEST(GlobalId, RoundTripRandomPairs) {
  const MergeGroup g = group_with_k2();
  std::mt19937_64 rng(41);
  for (int i = 0; i < 100000; ++i) {
    const uint32_t idx = static_cast<uint32_t>(rng() % 4);  // 0..3
    const uint64_t raw = rng() & ((uint64_t{1} << 61) - 1);
    const uint64_t gid = g.encode_global_id(idx, raw);
    EXPECT_EQ(gid >> 63, 0u);
    const auto [i2, x2] = g.decode_global_id(gid);
    EXPECT_EQ(i2, idx);
    EXPECT_EQ(x2, raw);
  }
}

TEST(GlobalId, ExhaustiveTinyDomainInjective) {
  const MergeGroup g = group_with_k2();
  std::set<uint64_t> seen;
  for (uint32_t i = 1; i <= 3; ++i) {
    for (uint64_t x = 0; x < 1024; ++x) {
      EXPECT_TRUE(seen.insert(g.encode_global_id(i, x)).second)
          << "collision at i=" << i << " x=" << x;
    }
  }
  EXPECT_EQ(seen.size(), 3u * 1024u);
}

TableConfig proto_config() {
  TableConfig cfg;
  cfg.capacity = 64;
  cfg.embedding_dim = 1;  // replaced per group
  cfg.chunk_rows = 64;
  return cfg;
}

TEST(CollectionLookup, SingleTableNoPoolingIsPlainLookup) {
  const std::vector<FeatureConfig> configs = {{"f", 4, {"t"}, Pooling::kNone}};
  HashTableCollection collection(plan_merge(configs), proto_config());
  const MergeGroup& g = collection.plan().groups[0];
  const std::vector<float> known{1, 2, 3, 4};
  collection.table(0).insert(g.encode_global_id(1, 7), known);

  const std::vector<uint64_t> ids{7};
  const auto out = collection.lookup(configs[0], ids);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], known);
}

TEST(CollectionLookup, SumOfFreshRowsIsZero) {
  const std::vector<FeatureConfig> configs = {
      {"f", 4, {"ta", "tb"}, Pooling::kSum},
  };
  HashTableCollection collection(plan_merge(configs), proto_config());
  const std::vector<uint64_t> ids{11};
  const auto out = collection.lookup(configs[0], ids);
  ASSERT_EQ(out.size(), 1u);
  for (float x : out[0]) EXPECT_EQ(x, 0.0f);
  // Both rows were vivified.
  EXPECT_EQ(collection.table(0).occupied(), 2u);
}

TEST(CollectionLookup, MeanOfKnownVectors) {
  const std::vector<FeatureConfig> configs = {
      {"f", 2, {"ta", "tb"}, Pooling::kMean},
  };
  HashTableCollection collection(plan_merge(configs), proto_config());
  const MergeGroup& g = collection.plan().groups[0];
  collection.table(0).insert(g.encode_global_id(1, 3), std::vector<float>{2.f, 4.f});
  collection.table(0).insert(g.encode_global_id(2, 3), std::vector<float>{6.f, 8.f});
  const std::vector<uint64_t> ids{3};
  const auto out = collection.lookup(configs[0], ids);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], (std::vector<float>{4.f, 6.f}));
}

TEST(CollectionLookup, NonePoolingWithMultipleTablesThrows) {
  const std::vector<FeatureConfig> bad = {{"f", 4, {"ta", "tb"}, Pooling::kNone}};
  // plan_merge accepts the shape; the lookup rejects the pooling mismatch.
  HashTableCollection collection(plan_merge(bad), proto_config());
  const std::vector<uint64_t> ids{1};
  EXPECT_THROW(collection.lookup(bad[0], ids), ConfigError);
}

TEST(HashTableCollection, OneTablePerGroupWithGroupDims) {
  const std::vector<FeatureConfig> configs = {
      {"a", 8, {"ta"}, Pooling::kNone},
      {"b", 16, {"tb"}, Pooling::kNone},
      {"c", 8, {"tc"}, Pooling::kNone},
  };
  HashTableCollection collection(plan_merge(configs), proto_config());
  ASSERT_EQ(collection.group_count(), 2u);
  EXPECT_EQ(collection.table(0).embedding_dim(), 8u);
  EXPECT_EQ(collection.table(1).embedding_dim(), 16u);
}

TEST(CollectionLookup, SumOverSingleTableEqualsRawLookup) {
  const std::vector<FeatureConfig> configs = {{"f", 2, {"t"}, Pooling::kSum}};
  HashTableCollection collection(plan_merge(configs), proto_config());
  const MergeGroup& g = collection.plan().groups[0];
  const std::vector<float> known{5.f, -1.f};
  collection.table(0).insert(g.encode_global_id(1, 9), known);
  const std::vector<uint64_t> ids{9};
  EXPECT_EQ(collection.lookup(configs[0], ids)[0], known);
}

}  // namespace
}  // namespace recsparse
