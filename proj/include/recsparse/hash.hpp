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

#include "recsparse/common.hpp"

namespace recsparse {

/// MurmurHash3 64-bit finalizer (fmix64). Bit-exact on every platform,
/// branch-free, full avalanche on single-bit input changes.
constexpr uint64_t hash64(uint64_t key) noexcept {
  key ^= key >> 33;
  key *= 0xff51afd7ed558ccdULL;
  key ^= key >> 33;
  key *= 0xc4ceb9fe1a85ec53ULL;
  key ^= key >> 33;
  return key;
}

// Batch form of hash64. `out.size()` must equal `keys.size()`.
// hash64_batch runs the loop under OpenMP; hash64_batch_serial is the
// reference implementation. Both produce identical output.
void hash64_batch(std::span<const uint64_t> keys, std::span<uint64_t> out);
void hash64_batch_serial(std::span<const uint64_t> keys, std::span<uint64_t> out);

/// Key-derived probe step for grouped probing over a power-of-two table:
///   S = (key % (capacity/groups - 1) + 1 | 1) * groups.
/// The base step is forced odd before scaling, so with a single group the
/// walk is a full cycle over the table. Throws ConfigError when
/// capacity/groups < 2 (the modulus would degenerate).
inline uint64_t probe_step(uint64_t key, uint64_t capacity, uint64_t thread_groups) {
  if (thread_groups == 0 || capacity / thread_groups < 2) {
    throw ConfigError("probe_step: capacity/thread_groups must be >= 2");
  }
  const uint64_t modulus = capacity / thread_groups - 1;
  return ((key % modulus + 1) | 1) * thread_groups;
}

/// The arithmetic progression h_t = (h0 + t*S) mod M, t = 0..M-1.
/// When S is odd and M is a power of two, the M values are pairwise
/// distinct and cover every slot (gcd(S, M) = 1).
class ProbeSequence {
 public:
  ProbeSequence(uint64_t start, uint64_t step, uint64_t capacity)
      : start_(start % capacity), step_(step % capacity), capacity_(capacity) {}

  uint64_t operator[](uint64_t t) const {
    return (start_ + (t % capacity_) * step_) % capacity_;
  }
  uint64_t size() const { return capacity_; }

  class Iterator {
   public:
    Iterator(uint64_t cur, uint64_t step, uint64_t capacity, uint64_t t)
        : cur_(cur), step_(step), capacity_(capacity), t_(t) {}
    uint64_t operator*() const { return cur_; }
    Iterator& operator++() {
      cur_ += step_;
      if (cur_ >= capacity_) cur_ -= capacity_;
      ++t_;
      return *this;
    }
    bool operator!=(const Iterator& other) const { return t_ != other.t_; }

   private:
    uint64_t cur_, step_, capacity_, t_;
  };

  Iterator begin() const { return Iterator(start_, step_, capacity_, 0); }
  Iterator end() const { return Iterator(start_, step_, capacity_, capacity_); }

 private:
  uint64_t start_, step_, capacity_;
};

}  // namespace recsparse
