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

#include "recsparse/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace recsparse {
namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& os, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(os, bits);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

float get_f32(std::istream& is) {
  const uint32_t bits = get_u32(is);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

std::filesystem::path shard_file_name(uint32_t rank, uint32_t world_size) {
  return "shard_" + std::to_string(rank) + "_of_" + std::to_string(world_size) + ".ckpt";
}

void save_shard(const EmbedTable& shard, uint32_t rank, uint32_t world_size,
                const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw IoError("shard " + std::to_string(rank) + ": cannot open " + file.string());
  }
  put_u32(os, kCheckpointMagic);
  put_u32(os, kCheckpointVersion);
  put_u32(os, world_size);
  put_u32(os, rank);
  put_u32(os, shard.embedding_dim());
  put_u32(os, 0);  // reserved
  put_u64(os, shard.capacity());
  put_u64(os, shard.occupied());
  shard.for_each_occupied([&](uint64_t slot, uint64_t key, RowHandle h) {
    put_u64(os, slot);
    put_u64(os, key);
    for (float x : shard.embedding(h)) put_f32(os, x);
    put_u64(os, shard.row_timestamp(h));
    for (float x : shard.opt_m(h)) put_f32(os, x);
    for (float x : shard.opt_v(h)) put_f32(os, x);
    put_u64(os, shard.opt_step(h));
  });
  os.flush();
  if (!os) {
    throw IoError("shard " + std::to_string(rank) + ": write failed for " + file.string());
  }
}

std::vector<std::filesystem::path> save_cluster(const SimCluster& cluster,
                                                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  paths.reserve(cluster.world_size);
  for (uint32_t r = 0; r < cluster.world_size; ++r) {
    const std::filesystem::path file =
        dir / shard_file_name(r, static_cast<uint32_t>(cluster.world_size));
    save_shard(cluster.shards[r], r, static_cast<uint32_t>(cluster.world_size), file);
    paths.push_back(file);
  }
  return paths;
}

std::pair<CheckpointHeader, std::vector<CheckpointEntry>> read_shard_file(
    const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("missing shard file: " + file.string());
  if (get_u32(is) != kCheckpointMagic) {
    throw IoError("not a shard checkpoint: " + file.string());
  }
  CheckpointHeader header;
  header.version = get_u32(is);
  if (header.version != kCheckpointVersion) {
    throw IoError("version mismatch in " + file.string() + ": got " +
                  std::to_string(header.version));
  }
  header.world_size = get_u32(is);
  header.shard_rank = get_u32(is);
  header.embedding_dim = get_u32(is);
  get_u32(is);  // reserved
  header.capacity = get_u64(is);
  header.entry_count = get_u64(is);
  if (!is) throw IoError("truncated header in " + file.string());

  std::vector<CheckpointEntry> entries;
  entries.reserve(header.entry_count);
  for (uint64_t i = 0; i < header.entry_count; ++i) {
    CheckpointEntry e;
    e.slot = get_u64(is);
    e.global_id = get_u64(is);
    e.embedding.resize(header.embedding_dim);
    for (float& x : e.embedding) x = get_f32(is);
    e.timestamp = get_u64(is);
    e.opt_m.resize(header.embedding_dim);
    for (float& x : e.opt_m) x = get_f32(is);
    e.opt_v.resize(header.embedding_dim);
    for (float& x : e.opt_v) x = get_f32(is);
    e.opt_step = get_u64(is);
    if (!is) throw IoError("truncated record in " + file.string());
    entries.push_back(std::move(e));
  }
  return {header, std::move(entries)};
}

namespace {

// Exact-layout restore for an unchanged world size: capacity and slot
// indices come from the file, so a follow-up save reproduces the bytes.
EmbedTable restore_shard(const CheckpointHeader& header,
                         const std::vector<CheckpointEntry>& entries,
                         const TableConfig& shard_config, uint32_t rank,
                         uint32_t world) {
  TableConfig cfg = shard_config;
  cfg.capacity = header.capacity;
  EmbedTable table(cfg);
  std::vector<uint64_t> slots, keys;
  slots.reserve(entries.size());
  keys.reserve(entries.size());
  for (const CheckpointEntry& e : entries) {
    if (SimCluster::shard_of(e.global_id, world) != rank) {
      throw InvariantError("shard file claims rank " + std::to_string(rank) +
                           " but holds foreign id " + std::to_string(e.global_id));
    }
    slots.push_back(e.slot);
    keys.push_back(e.global_id);
  }
  std::vector<RowHandle> handles = table.restore_entries(slots, keys);
  uint64_t max_ts = 0;
  for (size_t i = 0; i < entries.size(); ++i) {
    const CheckpointEntry& e = entries[i];
    std::copy(e.embedding.begin(), e.embedding.end(), table.embedding(handles[i]).begin());
    std::copy(e.opt_m.begin(), e.opt_m.end(), table.opt_m(handles[i]).begin());
    std::copy(e.opt_v.begin(), e.opt_v.end(), table.opt_v(handles[i]).begin());
    table.row_timestamp(handles[i]) = e.timestamp;
    table.opt_step(handles[i]) = e.opt_step;
    max_ts = std::max(max_ts, e.timestamp);
  }
  table.bump_tick(max_ts);
  return table;
}

}  // namespace

SimCluster load_cluster(const std::filesystem::path& dir, uint32_t saved_world,
                        uint32_t new_world, const TableConfig& shard_config,
                        DedupMode mode) {
  if (saved_world == 0 || new_world == 0) {
    throw ConfigError("load_cluster: world sizes must be >= 1");
  }
  // Modulo file selection only covers every entry when one world size
  // divides the other (hash-mod ownership nests across such pairs);
  // anything else would silently drop entries.
  if (new_world >= saved_world ? new_world % saved_world != 0
                               : saved_world % new_world != 0) {
    throw ConfigError("load_cluster: world sizes must divide (" +
                      std::to_string(saved_world) + " -> " + std::to_string(new_world) +
                      ")");
  }
  if (shard_config.embedding_dim == 0) {
    throw ConfigError("load_cluster: shard config needs an embedding dim");
  }
  SimCluster cluster(new_world, shard_config, mode);
  for (uint32_t r = 0; r < new_world; ++r) {
    // Growing: the single source file r mod W. Shrinking: every file
    // congruent to r mod W'. Both reduce to file r at unchanged size.
    std::vector<uint32_t> sources;
    if (new_world >= saved_world) {
      sources.push_back(r % saved_world);
    } else {
      for (uint32_t f = r; f < saved_world; f += new_world) sources.push_back(f);
    }
    uint64_t max_ts = 0;
    for (uint32_t f : sources) {
      const std::filesystem::path file = dir / shard_file_name(f, saved_world);
      auto [header, entries] = read_shard_file(file);
      if (header.embedding_dim != shard_config.embedding_dim) {
        throw ConfigError("dim mismatch in " + file.string() + ": file has " +
                          std::to_string(header.embedding_dim) + ", cluster wants " +
                          std::to_string(shard_config.embedding_dim));
      }
      if (header.world_size != saved_world || header.shard_rank != f) {
        throw IoError("header/world mismatch in " + file.string());
      }
      if (new_world == saved_world) {
        cluster.shards[r] = restore_shard(header, entries, shard_config, r, saved_world);
        break;
      }
      // Ownership refilter: two workers may read the same file when
      // growing; without the filter they would both keep every entry.
      EmbedTable& table = cluster.shards[r];
      for (const CheckpointEntry& e : entries) {
        if (SimCluster::shard_of(e.global_id, new_world) != r) continue;
        RowHandle h = table.insert(e.global_id, e.embedding);
        std::copy(e.opt_m.begin(), e.opt_m.end(), table.opt_m(h).begin());
        std::copy(e.opt_v.begin(), e.opt_v.end(), table.opt_v(h).begin());
        table.row_timestamp(h) = e.timestamp;
        table.opt_step(h) = e.opt_step;
        max_ts = std::max(max_ts, e.timestamp);
      }
    }
    cluster.shards[r].bump_tick(max_ts);
  }
  return cluster;
}

}  // namespace recsparse
