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

#include <bit>
#include <stdexcept>
#include <unordered_set>

namespace recsparse {

uint64_t encode_tagged_id(uint32_t k_bits, uint32_t index, uint32_t index_limit,
                          uint64_t raw_id) {
  if (index > index_limit) {
    throw std::out_of_range("encode_tagged_id: table index out of range");
  }
  const uint32_t shift = 63 - k_bits;
  if (raw_id >> shift != 0) {
    throw std::overflow_error("encode_tagged_id: raw id exceeds payload width");
  }
  return (static_cast<uint64_t>(index) << shift) | raw_id;
}

std::pair<uint32_t, uint64_t> decode_tagged_id(uint32_t k_bits, uint32_t index_limit,
                                               uint64_t tagged_id) {
  if (tagged_id >> 63 != 0) {
    throw std::invalid_argument("decode_tagged_id: top bit must be zero");
  }
  const uint32_t shift = 63 - k_bits;
  const uint32_t index = static_cast<uint32_t>(tagged_id >> shift);
  if (index > index_limit) {
    throw std::out_of_range("decode_tagged_id: table index out of range");
  }
  return {index, tagged_id & ((uint64_t{1} << shift) - 1)};
}

uint64_t MergeGroup::encode_global_id(uint32_t table_index, uint64_t raw_id) const {
  return encode_tagged_id(k_bits, table_index,
                          static_cast<uint32_t>(member_tables.size()), raw_id);
}

std::pair<uint32_t, uint64_t> MergeGroup::decode_global_id(uint64_t global_id) const {
  return decode_tagged_id(k_bits, static_cast<uint32_t>(member_tables.size()), global_id);
}

const MergeGroup& MergePlan::group_for(const std::string& table_name) const {
  return groups.at(group_index_for(table_name));
}

size_t MergePlan::group_index_for(const std::string& table_name) const {
  auto it = group_of_table.find(table_name);
  if (it == group_of_table.end()) {
    throw ConfigError("unknown logical table: " + table_name);
  }
  return it->second;
}

MergePlan plan_merge(std::span<const FeatureConfig> configs) {
  MergePlan plan;
  std::unordered_set<std::string> seen_features;
  std::unordered_map<uint32_t, size_t> group_of_dim;
  for (const FeatureConfig& cfg : configs) {
    if (cfg.feature_name.empty()) throw ConfigError("feature with empty name");
    if (!seen_features.insert(cfg.feature_name).second) {
      throw ConfigError("duplicate feature name: " + cfg.feature_name);
    }
    if (cfg.embedding_dim == 0) {
      throw ConfigError("feature " + cfg.feature_name + ": embedding_dim must be >= 1");
    }
    if (cfg.lookup_tables.empty()) {
      throw ConfigError("feature " + cfg.feature_name + ": lookup_tables must be non-empty");
    }
    for (const std::string& table : cfg.lookup_tables) {
      auto known = plan.group_of_table.find(table);
      if (known != plan.group_of_table.end()) {
        if (plan.groups[known->second].embedding_dim != cfg.embedding_dim) {
          throw ConfigError("logical table " + table +
                            " referenced with conflicting embedding dims");
        }
        continue;  // already a member
      }
      auto [it, fresh] = group_of_dim.try_emplace(cfg.embedding_dim, plan.groups.size());
      if (fresh) {
        MergeGroup g;
        g.embedding_dim = cfg.embedding_dim;
        plan.groups.push_back(std::move(g));
      }
      MergeGroup& group = plan.groups[it->second];
      group.member_tables.push_back(table);
      group.table_index_of[table] = static_cast<uint32_t>(group.member_tables.size());
      plan.group_of_table[table] = it->second;
    }
  }
  for (MergeGroup& group : plan.groups) {
    // k = ceil(log2(m + 1)) == bit_width(m) for m >= 1
    group.k_bits = static_cast<uint32_t>(std::bit_width(group.member_tables.size()));
  }
  return plan;
}

std::vector<std::vector<float>> collection_lookup(const MergePlan& plan,
                                                  std::span<EmbedTable> tables,
                                                  const FeatureConfig& feature,
                                                  std::span<const uint64_t> raw_ids) {
  if (feature.pooling == Pooling::kNone && feature.lookup_tables.size() != 1) {
    throw ConfigError("feature " + feature.feature_name +
                      ": pooling=none requires exactly one lookup table");
  }
  if (tables.size() != plan.groups.size()) {
    throw ConfigError("collection_lookup: one table per plan group required");
  }
  struct Resolved {
    size_t group;
    uint32_t index;
  };
  std::vector<Resolved> resolved;
  resolved.reserve(feature.lookup_tables.size());
  for (const std::string& name : feature.lookup_tables) {
    const size_t g = plan.group_index_for(name);
    resolved.push_back({g, plan.groups[g].table_index_of.at(name)});
  }

  const size_t dim = feature.embedding_dim;
  std::vector<std::vector<float>> out;
  out.reserve(raw_ids.size());
  for (uint64_t raw : raw_ids) {
    std::vector<float> pooled(dim, 0.0f);
    for (const Resolved& r : resolved) {
      const MergeGroup& group = plan.groups[r.group];
      const uint64_t gid = group.encode_global_id(r.index, raw);
      EmbedTable& table = tables[r.group];
      RowHandle h = table.ensure(gid);
      std::span<const float> emb = table.embedding(h);
      if (feature.pooling == Pooling::kNone) {
        std::copy(emb.begin(), emb.end(), pooled.begin());
      } else {
        for (size_t e = 0; e < dim; ++e) pooled[e] += emb[e];
      }
    }
    if (feature.pooling == Pooling::kMean) {
      const float inv = 1.0f / static_cast<float>(resolved.size());
      for (float& x : pooled) x *= inv;
    }
    out.push_back(std::move(pooled));
  }
  return out;
}

HashTableCollection::HashTableCollection(MergePlan plan, const TableConfig& prototype)
    : plan_(std::move(plan)) {
  tables_.reserve(plan_.groups.size());
  for (const MergeGroup& group : plan_.groups) {
    TableConfig cfg = prototype;
    cfg.embedding_dim = group.embedding_dim;
    tables_.emplace_back(cfg);
  }
}

std::vector<std::vector<float>> HashTableCollection::lookup(
    const FeatureConfig& feature, std::span<const uint64_t> raw_ids) {
  return collection_lookup(plan_, tables_, feature, raw_ids);
}

}  // namespace recsparse
