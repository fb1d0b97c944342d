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
#include <filesystem>
#include <vector>

#include "recsparse/exchange_sim.hpp"

namespace recsparse {

// Little-endian fixed-width shard file, one per worker:
//   header : magic u32, version u32, world u32, rank u32, dim u32,
//            reserved u32, capacity u64, entry_count u64
//   record : slot u64, global_id u64, embedding dim*f32, timestamp u64,
//            opt_m dim*f32, opt_v dim*f32, opt_step u64
// Records are ordered by slot index, which makes files byte-deterministic
// given table state; the stored slot and capacity let a same-world reload
// rebuild the exact key-structure layout, so save -> load -> save is
// byte-identical.
inline constexpr uint32_t kCheckpointMagic = 0x70736b63;  // "cksp"
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  uint32_t version = kCheckpointVersion;
  uint32_t world_size = 0;
  uint32_t shard_rank = 0;
  uint32_t embedding_dim = 0;
  uint64_t capacity = 0;
  uint64_t entry_count = 0;
};

struct CheckpointEntry {
  uint64_t slot = 0;
  uint64_t global_id = 0;
  std::vector<float> embedding;
  uint64_t timestamp = 0;
  std::vector<float> opt_m;
  std::vector<float> opt_v;
  uint64_t opt_step = 0;
};

std::filesystem::path shard_file_name(uint32_t rank, uint32_t world_size);

// Writes one shard file per worker into `dir` (created if missing).
// Entries carry full optimizer state and are ordered by slot index.
std::vector<std::filesystem::path> save_cluster(const SimCluster& cluster,
                                                const std::filesystem::path& dir);

void save_shard(const EmbedTable& shard, uint32_t rank, uint32_t world_size,
                const std::filesystem::path& file);

std::pair<CheckpointHeader, std::vector<CheckpointEntry>> read_shard_file(
    const std::filesystem::path& file);

// Elastic reload of a checkpoint saved at world size `saved_world` into a
// cluster of `new_world` workers. Worker r' locates its source files by
// modulo arithmetic — the single file r' mod W when growing, every file
// f with f mod W' == r' when shrinking — then keeps only entries it owns
// under the new ownership function. At unchanged world size the exact
// slot layout is restored, making a follow-up save byte-identical.
SimCluster load_cluster(const std::filesystem::path& dir, uint32_t saved_world,
                        uint32_t new_world, const TableConfig& shard_config,
                        DedupMode mode = DedupMode::kTwoStage);

}  // namespace recsparse
