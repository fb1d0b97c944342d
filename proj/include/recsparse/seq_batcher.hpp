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
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "recsparse/common.hpp"

namespace recsparse {

struct SequenceSample {
  uint64_t sample_id = 0;
  std::vector<uint64_t> feature_ids;  // one global id per token, never empty
  float label = 0.0f;

  uint64_t token_count() const { return feature_ids.size(); }
};

// Fills `chunk` with the next chunk of samples; returns false when the
// source is exhausted (chunk contents are then ignored).
using ChunkSource = std::function<bool(std::vector<SequenceSample>& chunk)>;

// Index k in [1, cumsums.size()] whose cumulative sum is closest to
// `target`; ties go to the smaller k. cumsums must be non-empty and
// strictly increasing. O(log n) via binary search.
size_t closest_prefix(std::span<const uint64_t> cumsums, uint64_t target);

/// Token-count-targeted batch former. Samples stream through a buffer in
/// arrival order; each batch is the buffer prefix whose cumulative token
/// count lands closest to the target. Sequences are never split or
/// reordered, so an oversized sample simply travels alone, and whatever
/// remains when the source dries up is flushed as final batches.
class SequenceBatcher {
 public:
  SequenceBatcher(uint64_t target_tokens, ChunkSource source);

  // Next batch in arrival order, or nullopt once source and buffer are empty.
  std::optional<std::vector<SequenceSample>> next_batch();

  uint64_t target_tokens() const { return target_; }
  uint64_t buffered_tokens() const { return buffered_tokens_; }
  size_t buffered_samples() const { return buffer_.size(); }

 private:
  uint64_t target_;
  ChunkSource source_;
  std::deque<SequenceSample> buffer_;
  uint64_t buffered_tokens_ = 0;
  bool source_exhausted_ = false;
};

// Batch-size-weighted gradient average: sum(b_i * g_i) / sum(b_i)
// elementwise. Equals the flat per-sample mean when each g_i is its
// worker's per-sample mean. weighted_grad_combine runs under OpenMP;
// the _serial variant is the reference. Identical output.
std::vector<double> weighted_grad_combine(std::span<const uint64_t> batch_sizes,
                                          std::span<const std::vector<double>> grads);
std::vector<double> weighted_grad_combine_serial(std::span<const uint64_t> batch_sizes,
                                                 std::span<const std::vector<double>> grads);

struct ImbalanceReport {
  uint64_t max_tokens = 0;
  uint64_t min_tokens = 0;
  double spread = 0.0;  // (max - min) / max, 0 when max == 0
};

ImbalanceReport imbalance_report(std::span<const uint64_t> per_worker_tokens);

}  // namespace recsparse
