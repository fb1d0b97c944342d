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

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "recsparse/common.hpp"
#include "recsparse/hash.hpp"

namespace recsparse {

struct TableConfig {
  uint64_t capacity = 1024;      // key-slot count, power of two, >= 2 * thread_groups
  uint32_t embedding_dim = 16;   // floats per row
  uint32_t thread_groups = 1;    // grouped-probing fan-out, power of two
  double max_load_factor = 0.75; // (occupied + tombstones) / capacity ceiling
  uint32_t chunk_rows = 1024;    // embedding rows per chunk

  void validate() const;
};

enum class SlotState : uint8_t { kEmpty = 0, kOccupied = 1, kTombstone = 2 };

// Locates one embedding row: chunk id plus row index within the chunk.
// Stable across key-structure expansion (rows never move).
struct RowHandle {
  uint32_t chunk = 0;
  uint32_t row = 0;
  friend bool operator==(const RowHandle&, const RowHandle&) = default;
  friend auto operator<=>(const RowHandle&, const RowHandle&) = default;
};

struct KeySlot {
  uint64_t key = 0;
  RowHandle handle{};
  SlotState state = SlotState::kEmpty;
};

/// Dynamic hash embedding table with decoupled key and embedding structures.
///
/// The key structure is an open-addressing slot array probed with a
/// key-derived odd step (see probe_step); deletions leave tombstones,
/// which count toward the load factor so that churn also triggers
/// expansion. Expansion doubles and rehashes only the key structure;
/// embedding rows stay where they are.
///
/// The embedding structure is chunked: rows (embedding vector plus
/// optimizer state and a last-access tick) are carved from a current
/// chunk, with a pre-allocated next chunk standing by so allocation never
/// stalls. Freed rows return to a free list and are reused before fresh
/// rows are carved.
///
/// Concurrency contract: single writer / multiple readers. Concurrent
/// lookups are safe while no insert/remove/expand is in flight (the tick
/// counter and last-access stamps they write are relaxed atomics);
/// mutations require exclusive access. No internal locking.
class EmbedTable {
 public:
  explicit EmbedTable(TableConfig config);
  EmbedTable(const EmbedTable& other);
  EmbedTable(EmbedTable&& other) noexcept;
  EmbedTable& operator=(const EmbedTable& other);
  EmbedTable& operator=(EmbedTable&& other) noexcept;

  // Upsert. A new key allocates a row (expanding the key structure first
  // if the insert would push the load factor over the ceiling); an
  // existing key is overwritten in place. Returns the row handle.
  RowHandle insert(uint64_t key, std::span<const float> embedding);

  // Probes for `key`. On a hit, stamps the row's last-access tick and
  // returns its handle; a miss is a normal absent return.
  std::optional<RowHandle> lookup(uint64_t key);

  // Probe without any side effects (no tick advance, no stamp).
  std::optional<RowHandle> find(uint64_t key) const;

  // lookup-or-insert-zero-row; the training-time auto-vivification path.
  RowHandle ensure(uint64_t key);

  // Tombstones the slot and returns the row to its chunk's free set.
  // Absent keys leave the table bit-identical and return false.
  bool remove(uint64_t key);

  // Doubles the key structure at least once, then keeps doubling while
  // occupied/capacity exceeds max_load_factor. Rehashes occupied slots,
  // drops tombstones, moves no embedding rows. Returns the new capacity.
  uint64_t expand();

  // Batch gather. For each key: embedding copied into out[i*dim..), or
  // zeros when absent. All hits are stamped with one tick shared by the
  // whole batch, so the OpenMP variant and the serial reference produce
  // bit-identical tables and output.
  void lookup_batch(std::span<const uint64_t> keys, std::span<float> out);
  void lookup_batch_serial(std::span<const uint64_t> keys, std::span<float> out);

  double load_factor() const {
    return static_cast<double>(occupied_ + tombstones_) / static_cast<double>(capacity());
  }
  uint64_t capacity() const { return slots_.size(); }
  uint64_t occupied() const { return occupied_; }
  uint64_t tombstones() const { return tombstones_; }
  uint64_t tick() const { return tick_.load(std::memory_order_relaxed); }
  uint32_t embedding_dim() const { return config_.embedding_dim; }
  const TableConfig& config() const { return config_; }

  // Row accessors. Handles must come from this table.
  std::span<float> embedding(RowHandle h);
  std::span<const float> embedding(RowHandle h) const;
  std::span<float> opt_m(RowHandle h);
  std::span<const float> opt_m(RowHandle h) const;
  std::span<float> opt_v(RowHandle h);
  std::span<const float> opt_v(RowHandle h) const;
  uint64_t& row_timestamp(RowHandle h);
  uint64_t row_timestamp(RowHandle h) const;
  uint64_t& opt_step(RowHandle h);
  uint64_t opt_step(RowHandle h) const;

  uint32_t current_chunk_id() const { return current_; }
  uint32_t next_chunk_id() const { return next_; }
  size_t chunk_count() const { return chunks_.size(); }
  bool chunk_retired(uint32_t chunk_id) const { return chunks_.at(chunk_id).retired; }
  // Unallocated rows in a chunk: never-carved plus freed-and-not-reused.
  uint64_t chunk_free_rows(uint32_t chunk_id) const;

  // Slot-order iteration over live entries: fn(slot_index, key, handle).
  template <typename F>
  void for_each_occupied(F&& fn) const {
    for (uint64_t s = 0; s < slots_.size(); ++s) {
      if (slots_[s].state == SlotState::kOccupied) fn(s, slots_[s].key, slots_[s].handle);
    }
  }

  // Checkpoint-reload path: places keys at explicit slot indices in an
  // empty table, carving rows in entry order. `slots` must be strictly
  // increasing and within capacity. Returns row handles in entry order;
  // the caller fills rows afterwards. Throws InvariantError when the
  // table is not empty.
  std::vector<RowHandle> restore_entries(std::span<const uint64_t> slots,
                                         std::span<const uint64_t> keys);

  // Fast-forwards the logical tick (checkpoint reload keeps stamps
  // monotone). Never moves the tick backwards. Exclusive access only.
  void bump_tick(uint64_t to) {
    if (to > tick()) tick_.store(to, std::memory_order_relaxed);
  }

 private:
  struct Chunk {
    uint32_t fresh = 0;     // rows carved so far
    uint32_t freed = 0;     // rows currently sitting in the table-wide free list
    bool retired = false;
    std::vector<float> emb;     // chunk_rows * dim
    std::vector<float> m;       // chunk_rows * dim
    std::vector<float> v;       // chunk_rows * dim
    std::vector<uint64_t> ts;   // chunk_rows
    std::vector<uint64_t> step; // chunk_rows
  };

  struct ProbeHit {
    static constexpr uint64_t kNone = ~uint64_t{0};
    uint64_t found = kNone;      // slot holding the key
    uint64_t tombstone = kNone;  // first tombstone on the walk
    uint64_t empty = kNone;      // first empty on the walk
  };

  // Walks the grouped probe order (group-major, then step-major) until
  // the key or the first empty slot is found. The same order is used by
  // insert/lookup/remove, which makes stopping at the first empty safe.
  ProbeHit probe_walk(uint64_t key, const std::vector<KeySlot>& slots) const;

  Chunk make_chunk() const;
  RowHandle alloc_row();
  void free_row(RowHandle h);
  void reset_row(RowHandle h);
  void place_new(uint64_t slot, uint64_t key, bool reuse_tombstone,
                 std::span<const float> embedding);
  uint64_t expand_impl();
  uint64_t next_tick() { return tick_.fetch_add(1, std::memory_order_relaxed) + 1; }
  // Last-access stamps may race between concurrent lookups; a relaxed
  // atomic write keeps that defined without ordering cost.
  void stamp(RowHandle h, uint64_t tick) {
    std::atomic_ref<uint64_t>(chunks_[h.chunk].ts[h.row])
        .store(tick, std::memory_order_relaxed);
  }

  TableConfig config_;
  std::vector<KeySlot> slots_;
  std::vector<Chunk> chunks_;
  std::vector<RowHandle> free_rows_;  // LIFO; reused before fresh carving
  uint32_t current_ = 0;
  uint32_t next_ = 1;
  uint64_t occupied_ = 0;
  uint64_t tombstones_ = 0;
  std::atomic<uint64_t> tick_{0};
};

}  // namespace recsparse
