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

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "recsparse/embed_table.hpp"

namespace recsparse {

// Which of the two deduplication stages run during a distributed lookup.
// Stage 1 dedups each worker's request ids before the id exchange;
// stage 2 dedups the ids a shard received across sources before the
// table lookup. Results are identical in every mode; traffic is not.
enum class DedupMode { kNone, kCommUnique, kLookupUnique, kTwoStage };

const char* to_string(DedupMode mode);

// Byte-exact accounting of one distributed lookup: id and vector counts
// per (src, dst) direction, plus shard-side lookup counts.
struct ExchangeTrace {
  size_t world_size = 0;
  uint64_t id_bytes = 8;       // bytes per transmitted id
  uint64_t emb_bytes = 0;      // bytes per transmitted vector (dim * 4)
  std::vector<std::vector<uint64_t>> ids_sent;   // [src][dst] id count
  std::vector<std::vector<uint64_t>> embs_sent;  // [src][dst] vector count
  std::vector<uint64_t> lookups;                 // table probes per shard
  uint64_t ids_requested = 0;   // raw request ids across workers
  uint64_t ids_received = 0;    // ids arriving at shards (post stage 1)

  uint64_t ids_sent_total() const;
  uint64_t embs_sent_total() const;
  uint64_t lookups_total() const;
  uint64_t id_bytes_total() const { return ids_sent_total() * id_bytes; }
  uint64_t emb_bytes_total() const { return embs_sent_total() * emb_bytes; }
  uint64_t bytes_total() const { return id_bytes_total() + emb_bytes_total(); }
  // Fraction of ids surviving each stage (1.0 when the stage is off).
  double stage1_ratio() const;
  double stage2_ratio() const;

  // One line per (src, dst, stage) with counts and bytes.
  void write_records(std::ostream& os) const;
};

/// W simulated workers, each owning one shard of the merged id space.
/// Ownership is hash-based and stable: shard_of(id) = hash64(id) % W.
struct SimCluster {
  size_t world_size = 1;
  DedupMode dedup_mode = DedupMode::kTwoStage;
  uint64_t id_bytes = 8;
  std::vector<EmbedTable> shards;

  SimCluster(size_t world, const TableConfig& shard_config,
             DedupMode mode = DedupMode::kTwoStage);

  static size_t shard_of(uint64_t global_id, size_t world_size);
  size_t shard_of(uint64_t global_id) const { return shard_of(global_id, world_size); }
  uint64_t emb_bytes() const { return uint64_t{4} * shards.front().embedding_dim(); }
};

// First-occurrence-order dedup. inverse_index[j] is the position of
// ids[j] in unique_ids.
struct Stage1Result {
  std::vector<uint64_t> unique_ids;
  std::vector<size_t> inverse_index;
};
Stage1Result stage1_dedup(std::span<const uint64_t> ids);

// Cross-source dedup of per-source id lists, with enough routing state to
// answer every (source, position) that requested each unique id.
struct Stage2Result {
  struct Origin {
    size_t source;
    size_t position;  // within that source's list
  };
  std::vector<uint64_t> unique_ids;
  std::vector<std::vector<Origin>> origins;  // aligned with unique_ids
};
Stage2Result stage2_dedup(const std::vector<std::vector<uint64_t>>& received);

struct LookupResult {
  // outputs[w] is row-major [requests[w].size() x dim].
  std::vector<std::vector<float>> outputs;
  ExchangeTrace trace;
};

// Runs the two-exchange sharded lookup for every worker's request list,
// zero-vivifying unseen ids on their owner shard. The dedup stages that
// run depend on cluster.dedup_mode; the outputs never depend on it.
LookupResult distributed_lookup(SimCluster& cluster,
                                const std::vector<std::vector<uint64_t>>& requests);

// --- three-stage pipeline simulation ---

struct StageCosts {
  double copy = 0;
  double dispatch = 0;
  double compute = 0;
};

struct PipelineTrace {
  double makespan = 0;
  std::array<double, 3> busy{};  // per-stage total work
  std::array<double, 3> idle{};  // makespan - busy
  double serial_bound = 0;       // sum of all stage costs
  double bottleneck_bound = 0;   // max per-stage total
};

// Discrete-time overlap of copy/dispatch/compute across batches: stage s
// of batch i starts once stage s finished batch i-1 and stage s-1
// finished batch i. With n equal-cost batches (all stages c) the
// makespan is the classic (n + 2) * c.
PipelineTrace pipeline_drive(std::span<const StageCosts> batches);

}  // namespace recsparse
