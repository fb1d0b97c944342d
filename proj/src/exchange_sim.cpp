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

#include "recsparse/exchange_sim.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

namespace recsparse {

const char* to_string(DedupMode mode) {
  switch (mode) {
    case DedupMode::kNone: return "none";
    case DedupMode::kCommUnique: return "comm_unique";
    case DedupMode::kLookupUnique: return "lookup_unique";
    case DedupMode::kTwoStage: return "two_stage";
  }
  return "unknown";
}

uint64_t ExchangeTrace::ids_sent_total() const {
  uint64_t total = 0;
  for (const auto& row : ids_sent)
    for (uint64_t c : row) total += c;
  return total;
}

uint64_t ExchangeTrace::embs_sent_total() const {
  uint64_t total = 0;
  for (const auto& row : embs_sent)
    for (uint64_t c : row) total += c;
  return total;
}

uint64_t ExchangeTrace::lookups_total() const {
  uint64_t total = 0;
  for (uint64_t c : lookups) total += c;
  return total;
}

double ExchangeTrace::stage1_ratio() const {
  if (ids_requested == 0) return 1.0;
  return static_cast<double>(ids_sent_total()) / static_cast<double>(ids_requested);
}

double ExchangeTrace::stage2_ratio() const {
  if (ids_received == 0) return 1.0;
  return static_cast<double>(lookups_total()) / static_cast<double>(ids_received);
}

void ExchangeTrace::write_records(std::ostream& os) const {
  for (size_t src = 0; src < world_size; ++src) {
    for (size_t dst = 0; dst < world_size; ++dst) {
      os << "src=" << src << " dst=" << dst << " stage=ids count=" << ids_sent[src][dst]
         << " bytes=" << ids_sent[src][dst] * id_bytes << "\n";
      os << "src=" << src << " dst=" << dst << " stage=embs count=" << embs_sent[src][dst]
         << " bytes=" << embs_sent[src][dst] * emb_bytes << "\n";
    }
  }
}

SimCluster::SimCluster(size_t world, const TableConfig& shard_config, DedupMode mode)
    : world_size(world), dedup_mode(mode) {
  if (world == 0) throw ConfigError("SimCluster: world_size must be >= 1");
  shards.reserve(world);
  for (size_t r = 0; r < world; ++r) shards.emplace_back(shard_config);
}

size_t SimCluster::shard_of(uint64_t global_id, size_t world_size) {
  if (world_size == 0) throw ConfigError("shard_of: world_size must be >= 1");
  return static_cast<size_t>(hash64(global_id) % world_size);
}

Stage1Result stage1_dedup(std::span<const uint64_t> ids) {
  Stage1Result result;
  result.inverse_index.reserve(ids.size());
  std::unordered_map<uint64_t, size_t> position;
  position.reserve(ids.size());
  for (uint64_t id : ids) {
    auto [it, fresh] = position.try_emplace(id, result.unique_ids.size());
    if (fresh) result.unique_ids.push_back(id);
    result.inverse_index.push_back(it->second);
  }
  return result;
}

Stage2Result stage2_dedup(const std::vector<std::vector<uint64_t>>& received) {
  Stage2Result result;
  std::unordered_map<uint64_t, size_t> position;
  for (size_t src = 0; src < received.size(); ++src) {
    for (size_t pos = 0; pos < received[src].size(); ++pos) {
      const uint64_t id = received[src][pos];
      auto [it, fresh] = position.try_emplace(id, result.unique_ids.size());
      if (fresh) {
        result.unique_ids.push_back(id);
        result.origins.emplace_back();
      }
      result.origins[it->second].push_back({src, pos});
    }
  }
  return result;
}

LookupResult distributed_lookup(SimCluster& cluster,
                                const std::vector<std::vector<uint64_t>>& requests) {
  const size_t world = cluster.world_size;
  if (requests.size() != world) {
    throw std::invalid_argument("distributed_lookup: one request list per worker required");
  }
  const size_t dim = cluster.shards.front().embedding_dim();
  const bool stage1_on = cluster.dedup_mode == DedupMode::kCommUnique ||
                         cluster.dedup_mode == DedupMode::kTwoStage;
  const bool stage2_on = cluster.dedup_mode == DedupMode::kLookupUnique ||
                         cluster.dedup_mode == DedupMode::kTwoStage;

  LookupResult result;
  ExchangeTrace& trace = result.trace;
  trace.world_size = world;
  trace.id_bytes = cluster.id_bytes;
  trace.emb_bytes = cluster.emb_bytes();
  trace.ids_sent.assign(world, std::vector<uint64_t>(world, 0));
  trace.embs_sent.assign(world, std::vector<uint64_t>(world, 0));
  trace.lookups.assign(world, 0);

  // Stage 1 (per-worker dedup before the id exchange), then routing by
  // ownership. send_ids[w][s] keeps the order ids were emitted in, and
  // send_uidx remembers which unique id each position came from.
  std::vector<std::vector<uint64_t>> unique_ids(world);
  std::vector<std::vector<size_t>> inverse_index(world);
  std::vector<std::vector<std::vector<uint64_t>>> send_ids(
      world, std::vector<std::vector<uint64_t>>(world));
  std::vector<std::vector<std::vector<size_t>>> send_uidx(
      world, std::vector<std::vector<size_t>>(world));
  for (size_t w = 0; w < world; ++w) {
    trace.ids_requested += requests[w].size();
    if (stage1_on) {
      Stage1Result s1 = stage1_dedup(requests[w]);
      unique_ids[w] = std::move(s1.unique_ids);
      inverse_index[w] = std::move(s1.inverse_index);
    } else {
      unique_ids[w] = requests[w];
      inverse_index[w].resize(requests[w].size());
      for (size_t j = 0; j < requests[w].size(); ++j) inverse_index[w][j] = j;
    }
    for (size_t u = 0; u < unique_ids[w].size(); ++u) {
      const size_t owner = cluster.shard_of(unique_ids[w][u]);
      send_ids[w][owner].push_back(unique_ids[w][u]);
      send_uidx[w][owner].push_back(u);
    }
    for (size_t s = 0; s < world; ++s) {
      trace.ids_sent[w][s] += send_ids[w][s].size();
      trace.ids_received += send_ids[w][s].size();
    }
  }

  // Shard side: answer every received id positionally. Stage 2 dedups
  // across sources before touching the table, so a hot id is looked up
  // once regardless of how many workers asked for it.
  // responses[s][w] is row-major [send_ids[w][s].size() x dim].
  std::vector<std::vector<std::vector<float>>> responses(
      world, std::vector<std::vector<float>>(world));
  for (size_t s = 0; s < world; ++s) {
    EmbedTable& shard = cluster.shards[s];
    std::vector<std::vector<uint64_t>> received(world);
    for (size_t w = 0; w < world; ++w) {
      received[w] = send_ids[w][s];
      responses[s][w].assign(received[w].size() * dim, 0.0f);
    }
    if (stage2_on) {
      Stage2Result s2 = stage2_dedup(received);
      trace.lookups[s] += s2.unique_ids.size();
      for (size_t u = 0; u < s2.unique_ids.size(); ++u) {
        RowHandle h = shard.ensure(s2.unique_ids[u]);
        std::span<const float> emb = shard.embedding(h);
        for (const Stage2Result::Origin& origin : s2.origins[u]) {
          std::copy(emb.begin(), emb.end(),
                    responses[s][origin.source].begin() + origin.position * dim);
        }
      }
    } else {
      for (size_t w = 0; w < world; ++w) {
        for (size_t pos = 0; pos < received[w].size(); ++pos) {
          RowHandle h = shard.ensure(received[w][pos]);
          std::span<const float> emb = shard.embedding(h);
          std::copy(emb.begin(), emb.end(), responses[s][w].begin() + pos * dim);
          ++trace.lookups[s];
        }
      }
    }
    for (size_t w = 0; w < world; ++w) {
      trace.embs_sent[s][w] += received[w].size();
    }
  }

  // Worker side: scatter the per-shard answers back over the unique-id
  // list, then expand through the stage-1 inverse index.
  result.outputs.resize(world);
  for (size_t w = 0; w < world; ++w) {
    std::vector<float> unique_rows(unique_ids[w].size() * dim, 0.0f);
    std::vector<uint8_t> filled(unique_ids[w].size(), 0);
    for (size_t s = 0; s < world; ++s) {
      for (size_t pos = 0; pos < send_uidx[w][s].size(); ++pos) {
        const size_t u = send_uidx[w][s][pos];
        std::copy_n(responses[s][w].begin() + pos * dim, dim,
                    unique_rows.begin() + u * dim);
        filled[u] = 1;
      }
    }
    for (uint8_t f : filled) {
      if (!f) throw InvariantError("distributed_lookup: unanswered request id");
    }
    std::vector<float>& out = result.outputs[w];
    out.assign(requests[w].size() * dim, 0.0f);
    for (size_t j = 0; j < requests[w].size(); ++j) {
      std::copy_n(unique_rows.begin() + inverse_index[w][j] * dim, dim,
                  out.begin() + j * dim);
    }
  }
  return result;
}

PipelineTrace pipeline_drive(std::span<const StageCosts> batches) {
  PipelineTrace trace;
  std::array<double, 3> finish{0, 0, 0};
  for (const StageCosts& batch : batches) {
    const std::array<double, 3> cost{batch.copy, batch.dispatch, batch.compute};
    double upstream = 0;
    for (size_t s = 0; s < 3; ++s) {
      if (cost[s] < 0) throw std::invalid_argument("pipeline_drive: negative stage cost");
      const double start = std::max(finish[s], upstream);
      finish[s] = start + cost[s];
      upstream = finish[s];
      trace.busy[s] += cost[s];
    }
  }
  trace.makespan = finish[2];
  trace.serial_bound = trace.busy[0] + trace.busy[1] + trace.busy[2];
  trace.bottleneck_bound = std::max({trace.busy[0], trace.busy[1], trace.busy[2]});
  for (size_t s = 0; s < 3; ++s) trace.idle[s] = trace.makespan - trace.busy[s];
  return trace;
}

}  // namespace recsparse
