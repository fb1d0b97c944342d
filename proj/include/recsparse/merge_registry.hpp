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

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "recsparse/common.hpp"
#include "recsparse/embed_table.hpp"

namespace recsparse {

enum class Pooling { kNone, kSum, kMean };

// High-bit table tagging shared by merge groups and the workload catalog:
//   tagged = (index << (63 - k_bits)) | raw_id
// keeps the top bit zero; index 0 is the reserved identity (never a real
// table), so an untagged id can never alias a tagged one by accident.
uint64_t encode_tagged_id(uint32_t k_bits, uint32_t index, uint32_t index_limit,
                          uint64_t raw_id);
std::pair<uint32_t, uint64_t> decode_tagged_id(uint32_t k_bits, uint32_t index_limit,
                                               uint64_t tagged_id);

// One feature declaration: which logical tables it reads and how the
// per-table vectors are combined.
struct FeatureConfig {
  std::string feature_name;
  uint32_t embedding_dim = 0;
  std::vector<std::string> lookup_tables;
  Pooling pooling = Pooling::kNone;
};

/// One merged group: logical tables sharing an embedding dimension,
/// packed into a single id space. Member table i (1-based; 0 is the
/// reserved identity) tags its raw ids in the high bits:
///   global_id = (i << (63 - k_bits)) | raw_id
/// which keeps the top bit zero and never aliases across member tables.
struct MergeGroup {
  uint32_t embedding_dim = 0;
  std::vector<std::string> member_tables;                    // first-appearance order
  std::unordered_map<std::string, uint32_t> table_index_of;  // name -> i in [1, m]
  uint32_t k_bits = 0;  // ceil(log2(m + 1))

  uint64_t encode_global_id(uint32_t table_index, uint64_t raw_id) const;
  std::pair<uint32_t, uint64_t> decode_global_id(uint64_t global_id) const;
  uint64_t max_raw_id() const { return (uint64_t{1} << (63 - k_bits)) - 1; }
};

struct MergePlan {
  std::vector<MergeGroup> groups;
  std::unordered_map<std::string, size_t> group_of_table;  // logical name -> group index

  const MergeGroup& group_for(const std::string& table_name) const;
  size_t group_index_for(const std::string& table_name) const;
};

// Groups logical tables by embedding dimension. Member order within a
// group (and group order) follow first appearance over the config list,
// so the plan is a pure function of the configs. Duplicate feature names
// and dimension conflicts on a shared logical table are configuration
// errors.
MergePlan plan_merge(std::span<const FeatureConfig> configs);

// Per-feature lookup against the merged tables: encodes one global id
// per member table in feature.lookup_tables, fetches each row
// (zero-vivifying misses), and pools. Pooling::kNone requires exactly
// one lookup table. `tables` holds one EmbedTable per plan group.
std::vector<std::vector<float>> collection_lookup(const MergePlan& plan,
                                                  std::span<EmbedTable> tables,
                                                  const FeatureConfig& feature,
                                                  std::span<const uint64_t> raw_ids);

/// Owns one merged EmbedTable per plan group. The prototype config
/// supplies capacity/chunking; each group's table takes the group's dim.
class HashTableCollection {
 public:
  HashTableCollection(MergePlan plan, const TableConfig& prototype);

  std::vector<std::vector<float>> lookup(const FeatureConfig& feature,
                                         std::span<const uint64_t> raw_ids);

  const MergePlan& plan() const { return plan_; }
  EmbedTable& table(size_t group) { return tables_.at(group); }
  const EmbedTable& table(size_t group) const { return tables_.at(group); }
  size_t group_count() const { return tables_.size(); }

 private:
  MergePlan plan_;
  std::vector<EmbedTable> tables_;
};

}  // namespace recsparse
