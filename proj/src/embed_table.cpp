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

#include "recsparse/embed_table.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace recsparse {

void TableConfig::validate() const {
  if (!is_power_of_two(capacity)) {
    throw ConfigError("TableConfig: capacity must be a power of two");
  }
  if (!is_power_of_two(thread_groups)) {
    throw ConfigError("TableConfig: thread_groups must be a power of two >= 1");
  }
  if (capacity < 2 * static_cast<uint64_t>(thread_groups)) {
    throw ConfigError("TableConfig: capacity must be >= 2 * thread_groups");
  }
  if (!(max_load_factor > 0.0 && max_load_factor < 1.0)) {
    throw ConfigError("TableConfig: max_load_factor must be in (0, 1)");
  }
  if (chunk_rows < 1) throw ConfigError("TableConfig: chunk_rows must be >= 1");
  if (embedding_dim < 1) throw ConfigError("TableConfig: embedding_dim must be >= 1");
}

EmbedTable::EmbedTable(TableConfig config) : config_(config) {
  config_.validate();
  slots_.assign(config_.capacity, KeySlot{});
  chunks_.push_back(make_chunk());
  chunks_.push_back(make_chunk());
}

EmbedTable::EmbedTable(const EmbedTable& other)
    : config_(other.config_),
      slots_(other.slots_),
      chunks_(other.chunks_),
      free_rows_(other.free_rows_),
      current_(other.current_),
      next_(other.next_),
      occupied_(other.occupied_),
      tombstones_(other.tombstones_),
      tick_(other.tick()) {}

EmbedTable::EmbedTable(EmbedTable&& other) noexcept
    : config_(other.config_),
      slots_(std::move(other.slots_)),
      chunks_(std::move(other.chunks_)),
      free_rows_(std::move(other.free_rows_)),
      current_(other.current_),
      next_(other.next_),
      occupied_(other.occupied_),
      tombstones_(other.tombstones_),
      tick_(other.tick()) {}

EmbedTable& EmbedTable::operator=(const EmbedTable& other) {
  if (this != &other) {
    config_ = other.config_;
    slots_ = other.slots_;
    chunks_ = other.chunks_;
    free_rows_ = other.free_rows_;
    current_ = other.current_;
    next_ = other.next_;
    occupied_ = other.occupied_;
    tombstones_ = other.tombstones_;
    tick_.store(other.tick(), std::memory_order_relaxed);
  }
  return *this;
}

EmbedTable& EmbedTable::operator=(EmbedTable&& other) noexcept {
  if (this != &other) {
    config_ = other.config_;
    slots_ = std::move(other.slots_);
    chunks_ = std::move(other.chunks_);
    free_rows_ = std::move(other.free_rows_);
    current_ = other.current_;
    next_ = other.next_;
    occupied_ = other.occupied_;
    tombstones_ = other.tombstones_;
    tick_.store(other.tick(), std::memory_order_relaxed);
  }
  return *this;
}

EmbedTable::Chunk EmbedTable::make_chunk() const {
  Chunk c;
  const size_t rows = config_.chunk_rows;
  const size_t dim = config_.embedding_dim;
  c.emb.assign(rows * dim, 0.0f);
  c.m.assign(rows * dim, 0.0f);
  c.v.assign(rows * dim, 0.0f);
  c.ts.assign(rows, 0);
  c.step.assign(rows, 0);
  return c;
}

EmbedTable::ProbeHit EmbedTable::probe_walk(uint64_t key,
                                            const std::vector<KeySlot>& slots) const {
  const uint64_t m = slots.size();
  const uint64_t groups = config_.thread_groups;
  const uint64_t h0 = hash64(key) % m;
  const uint64_t step = probe_step(key, m, groups);  // < m by construction
  const uint64_t per_group = m / groups;
  ProbeHit hit;
  for (uint64_t g = 0; g < groups; ++g) {
    uint64_t pos = h0 + g;
    if (pos >= m) pos -= m;
    for (uint64_t t = 0; t < per_group; ++t) {
      const KeySlot& slot = slots[pos];
      if (slot.state == SlotState::kEmpty) {
        // The walk order is identical for insert and lookup, so the key
        // can never live past the first empty slot.
        hit.empty = pos;
        return hit;
      }
      if (slot.state == SlotState::kOccupied && slot.key == key) {
        hit.found = pos;
        return hit;
      }
      if (slot.state == SlotState::kTombstone && hit.tombstone == ProbeHit::kNone) {
        hit.tombstone = pos;
      }
      pos += step;
      if (pos >= m) pos -= m;
    }
  }
  return hit;
}

RowHandle EmbedTable::alloc_row() {
  if (!free_rows_.empty()) {
    RowHandle h = free_rows_.back();
    free_rows_.pop_back();
    --chunks_[h.chunk].freed;
    reset_row(h);
    return h;
  }
  Chunk& cur = chunks_[current_];
  if (cur.fresh < config_.chunk_rows) {
    return RowHandle{current_, cur.fresh++};
  }
  // Current chunk is exhausted: the row comes from the next chunk; the
  // filled chunk retires and a fresh next chunk is pre-allocated so the
  // dual-chunk configuration is preserved.
  cur.retired = true;
  const uint32_t former_next = next_;
  RowHandle h{former_next, chunks_[former_next].fresh++};
  current_ = former_next;
  chunks_.push_back(make_chunk());
  next_ = static_cast<uint32_t>(chunks_.size() - 1);
  return h;
}

void EmbedTable::free_row(RowHandle h) {
  free_rows_.push_back(h);
  ++chunks_[h.chunk].freed;
}

void EmbedTable::reset_row(RowHandle h) {
  const size_t dim = config_.embedding_dim;
  Chunk& c = chunks_[h.chunk];
  std::fill_n(c.m.begin() + h.row * dim, dim, 0.0f);
  std::fill_n(c.v.begin() + h.row * dim, dim, 0.0f);
  c.ts[h.row] = 0;
  c.step[h.row] = 0;
}

void EmbedTable::place_new(uint64_t slot, uint64_t key, bool reuse_tombstone,
                           std::span<const float> embedding) {
  RowHandle h = alloc_row();
  std::copy(embedding.begin(), embedding.end(),
            chunks_[h.chunk].emb.begin() + h.row * config_.embedding_dim);
  stamp(h, tick());
  slots_[slot] = KeySlot{key, h, SlotState::kOccupied};
  ++occupied_;
  if (reuse_tombstone) --tombstones_;
}

RowHandle EmbedTable::insert(uint64_t key, std::span<const float> embedding) {
  if (embedding.size() != config_.embedding_dim) {
    throw std::invalid_argument("insert: embedding length != embedding_dim");
  }
  const uint64_t now = next_tick();
  ProbeHit hit = probe_walk(key, slots_);
  if (hit.found != ProbeHit::kNone) {
    RowHandle h = slots_[hit.found].handle;
    std::copy(embedding.begin(), embedding.end(),
              chunks_[h.chunk].emb.begin() + h.row * config_.embedding_dim);
    stamp(h, now);
    return h;
  }
  // A tombstone on the walk will be reused, leaving occupied + tombstones
  // unchanged; only a genuinely new slot can push the load factor over
  // the ceiling and force doubling first.
  while (hit.tombstone == ProbeHit::kNone &&
         static_cast<double>(occupied_ + tombstones_ + 1) >
             config_.max_load_factor * static_cast<double>(capacity())) {
    expand_impl();
    hit = probe_walk(key, slots_);
  }
  uint64_t slot;
  bool reuse = false;
  if (hit.tombstone != ProbeHit::kNone) {
    slot = hit.tombstone;
    reuse = true;
  } else if (hit.empty != ProbeHit::kNone) {
    slot = hit.empty;
  } else {
    throw InvariantError("insert: probe walk found no usable slot");
  }
  place_new(slot, key, reuse, embedding);
  return slots_[slot].handle;
}

std::optional<RowHandle> EmbedTable::lookup(uint64_t key) {
  ProbeHit hit = probe_walk(key, slots_);
  if (hit.found == ProbeHit::kNone) return std::nullopt;
  RowHandle h = slots_[hit.found].handle;
  stamp(h, next_tick());
  return h;
}

std::optional<RowHandle> EmbedTable::find(uint64_t key) const {
  ProbeHit hit = probe_walk(key, slots_);
  if (hit.found == ProbeHit::kNone) return std::nullopt;
  return slots_[hit.found].handle;
}

RowHandle EmbedTable::ensure(uint64_t key) {
  if (auto h = lookup(key)) return *h;
  static thread_local std::vector<float> zeros;
  zeros.assign(config_.embedding_dim, 0.0f);
  return insert(key, zeros);
}

bool EmbedTable::remove(uint64_t key) {
  ProbeHit hit = probe_walk(key, slots_);
  if (hit.found == ProbeHit::kNone) return false;
  next_tick();
  KeySlot& slot = slots_[hit.found];
  free_row(slot.handle);
  slot.state = SlotState::kTombstone;
  --occupied_;
  ++tombstones_;
  return true;
}

uint64_t EmbedTable::expand() {
  next_tick();
  return expand_impl();
}

uint64_t EmbedTable::expand_impl() {
  uint64_t new_capacity = capacity();
  do {
    new_capacity <<= 1;
  } while (static_cast<double>(occupied_) >
           config_.max_load_factor * static_cast<double>(new_capacity));
  std::vector<KeySlot> fresh(new_capacity);
  for (const KeySlot& slot : slots_) {
    if (slot.state != SlotState::kOccupied) continue;
    ProbeHit hit = probe_walk(slot.key, fresh);
    if (hit.empty == ProbeHit::kNone) {
      throw InvariantError("expand: no empty slot for rehash");
    }
    fresh[hit.empty] = KeySlot{slot.key, slot.handle, SlotState::kOccupied};
  }
  slots_ = std::move(fresh);
  tombstones_ = 0;
  return new_capacity;
}

void EmbedTable::lookup_batch(std::span<const uint64_t> keys, std::span<float> out) {
  const size_t dim = config_.embedding_dim;
  if (out.size() != keys.size() * dim) {
    throw std::invalid_argument("lookup_batch: output size mismatch");
  }
  const uint64_t now = next_tick();
  const int64_t n = static_cast<int64_t>(keys.size());
  std::vector<RowHandle> handles(keys.size());
  std::vector<uint8_t> present(keys.size(), 0);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const size_t j = static_cast<size_t>(i);
    ProbeHit hit = probe_walk(keys[j], slots_);
    float* dst = out.data() + j * dim;
    if (hit.found != ProbeHit::kNone) {
      RowHandle h = slots_[hit.found].handle;
      const float* src = chunks_[h.chunk].emb.data() + h.row * dim;
      std::copy_n(src, dim, dst);
      handles[j] = h;
      present[j] = 1;
    } else {
      std::fill_n(dst, dim, 0.0f);
    }
  }
  // Timestamp writes are serialized; every hit in the batch shares one tick.
  for (size_t j = 0; j < keys.size(); ++j) {
    if (present[j]) stamp(handles[j], now);
  }
}

void EmbedTable::lookup_batch_serial(std::span<const uint64_t> keys, std::span<float> out) {
  const size_t dim = config_.embedding_dim;
  if (out.size() != keys.size() * dim) {
    throw std::invalid_argument("lookup_batch: output size mismatch");
  }
  const uint64_t now = next_tick();
  for (size_t j = 0; j < keys.size(); ++j) {
    ProbeHit hit = probe_walk(keys[j], slots_);
    float* dst = out.data() + j * dim;
    if (hit.found != ProbeHit::kNone) {
      RowHandle h = slots_[hit.found].handle;
      const float* src = chunks_[h.chunk].emb.data() + h.row * dim;
      std::copy_n(src, dim, dst);
      stamp(h, now);
    } else {
      std::fill_n(dst, dim, 0.0f);
    }
  }
}

std::span<float> EmbedTable::embedding(RowHandle h) {
  return {chunks_[h.chunk].emb.data() + h.row * config_.embedding_dim,
          config_.embedding_dim};
}
std::span<const float> EmbedTable::embedding(RowHandle h) const {
  return {chunks_[h.chunk].emb.data() + h.row * config_.embedding_dim,
          config_.embedding_dim};
}
std::span<float> EmbedTable::opt_m(RowHandle h) {
  return {chunks_[h.chunk].m.data() + h.row * config_.embedding_dim,
          config_.embedding_dim};
}
std::span<const float> EmbedTable::opt_m(RowHandle h) const {
  return {chunks_[h.chunk].m.data() + h.row * config_.embedding_dim,
          config_.embedding_dim};
}
std::span<float> EmbedTable::opt_v(RowHandle h) {
  return {chunks_[h.chunk].v.data() + h.row * config_.embedding_dim,
          config_.embedding_dim};
}
std::span<const float> EmbedTable::opt_v(RowHandle h) const {
  return {chunks_[h.chunk].v.data() + h.row * config_.embedding_dim,
          config_.embedding_dim};
}
uint64_t& EmbedTable::row_timestamp(RowHandle h) { return chunks_[h.chunk].ts[h.row]; }
uint64_t EmbedTable::row_timestamp(RowHandle h) const { return chunks_[h.chunk].ts[h.row]; }
uint64_t& EmbedTable::opt_step(RowHandle h) { return chunks_[h.chunk].step[h.row]; }
uint64_t EmbedTable::opt_step(RowHandle h) const { return chunks_[h.chunk].step[h.row]; }

uint64_t EmbedTable::chunk_free_rows(uint32_t chunk_id) const {
  const Chunk& c = chunks_.at(chunk_id);
  return (config_.chunk_rows - c.fresh) + c.freed;
}

std::vector<RowHandle> EmbedTable::restore_entries(std::span<const uint64_t> slots,
                                                   std::span<const uint64_t> keys) {
  if (slots.size() != keys.size()) {
    throw std::invalid_argument("restore_entries: slot/key count mismatch");
  }
  if (occupied_ != 0 || tombstones_ != 0 || tick() != 0 || chunks_[0].fresh != 0) {
    throw InvariantError("restore_entries: table not empty");
  }
  std::vector<RowHandle> handles;
  handles.reserve(keys.size());
  for (size_t i = 0; i < keys.size(); ++i) {
    const uint64_t s = slots[i];
    if (s >= capacity() || (i > 0 && s <= slots[i - 1])) {
      throw InvariantError("restore_entries: slots not strictly increasing in range");
    }
    RowHandle h = alloc_row();
    slots_[s] = KeySlot{keys[i], h, SlotState::kOccupied};
    ++occupied_;
    handles.push_back(h);
  }
  return handles;
}

}  // namespace recsparse
