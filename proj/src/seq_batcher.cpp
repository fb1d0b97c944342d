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

#include "recsparse/seq_batcher.hpp"

#include <algorithm>
#include <stdexcept>

namespace recsparse {

size_t closest_prefix(std::span<const uint64_t> cumsums, uint64_t target) {
  if (cumsums.empty()) {
    throw std::invalid_argument("closest_prefix: cumsums must be non-empty");
  }
  auto it = std::lower_bound(cumsums.begin(), cumsums.end(), target);
  if (it == cumsums.end()) return cumsums.size();  // every prefix sum < target
  if (it == cumsums.begin()) return 1;
  const uint64_t above = *it - target;
  const uint64_t below = target - *(it - 1);
  // Ties go to the smaller k (the shorter, not-overshooting prefix).
  if (below <= above) return static_cast<size_t>(it - cumsums.begin());
  return static_cast<size_t>(it - cumsums.begin()) + 1;
}

SequenceBatcher::SequenceBatcher(uint64_t target_tokens, ChunkSource source)
    : target_(target_tokens), source_(std::move(source)) {
  if (target_ < 1) throw ConfigError("SequenceBatcher: target token count must be >= 1");
}

std::optional<std::vector<SequenceSample>> SequenceBatcher::next_batch() {
  std::vector<SequenceSample> chunk;
  while (buffered_tokens_ < target_ && !source_exhausted_) {
    chunk.clear();
    if (!source_(chunk)) {
      source_exhausted_ = true;
      break;
    }
    for (SequenceSample& sample : chunk) {
      if (sample.feature_ids.empty()) {
        throw InvariantError("SequenceBatcher: sample with zero tokens");
      }
      buffered_tokens_ += sample.token_count();
      buffer_.push_back(std::move(sample));
    }
  }
  if (buffer_.empty()) return std::nullopt;

  std::vector<uint64_t> cumsums;
  cumsums.reserve(buffer_.size());
  uint64_t running = 0;
  for (const SequenceSample& sample : buffer_) {
    running += sample.token_count();
    cumsums.push_back(running);
  }
  const size_t k = closest_prefix(cumsums, target_);
  // Once the buffer holds >= target tokens, samples arriving later can
  // only form prefixes even farther above the target, so emitting the
  // chosen prefix immediately is safe even when it is the whole buffer.
  std::vector<SequenceSample> batch;
  batch.reserve(k);
  for (size_t i = 0; i < k; ++i) {
    buffered_tokens_ -= buffer_.front().token_count();
    batch.push_back(std::move(buffer_.front()));
    buffer_.pop_front();
  }
  return batch;
}

std::vector<double> weighted_grad_combine_serial(
    std::span<const uint64_t> batch_sizes, std::span<const std::vector<double>> grads) {
  if (batch_sizes.size() != grads.size() || grads.empty()) {
    throw std::invalid_argument("weighted_grad_combine: need matching, non-empty inputs");
  }
  const size_t dim = grads[0].size();
  uint64_t total = 0;
  for (size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != dim) {
      throw std::invalid_argument("weighted_grad_combine: gradient shape mismatch");
    }
    if (batch_sizes[i] < 1) {
      throw std::invalid_argument("weighted_grad_combine: batch sizes must be >= 1");
    }
    total += batch_sizes[i];
  }
  std::vector<double> combined(dim, 0.0);
  const double inv_total = 1.0 / static_cast<double>(total);
  for (size_t e = 0; e < dim; ++e) {
    double acc = 0.0;
    for (size_t i = 0; i < grads.size(); ++i) {
      acc += static_cast<double>(batch_sizes[i]) * grads[i][e];
    }
    combined[e] = acc * inv_total;
  }
  return combined;
}

std::vector<double> weighted_grad_combine(std::span<const uint64_t> batch_sizes,
                                          std::span<const std::vector<double>> grads) {
  if (batch_sizes.size() != grads.size() || grads.empty()) {
    throw std::invalid_argument("weighted_grad_combine: need matching, non-empty inputs");
  }
  const size_t dim = grads[0].size();
  uint64_t total = 0;
  for (size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != dim) {
      throw std::invalid_argument("weighted_grad_combine: gradient shape mismatch");
    }
    if (batch_sizes[i] < 1) {
      throw std::invalid_argument("weighted_grad_combine: batch sizes must be >= 1");
    }
    total += batch_sizes[i];
  }
  std::vector<double> combined(dim, 0.0);
  const double inv_total = 1.0 / static_cast<double>(total);
  const int64_t n = static_cast<int64_t>(dim);
  // Parallel over elements: each element accumulates workers in a fixed
  // order, so the result is bit-identical to the serial reference.
#pragma omp parallel for schedule(static)
  for (int64_t e = 0; e < n; ++e) {
    double acc = 0.0;
    for (size_t i = 0; i < grads.size(); ++i) {
      acc += static_cast<double>(batch_sizes[i]) * grads[i][static_cast<size_t>(e)];
    }
    combined[static_cast<size_t>(e)] = acc * inv_total;
  }
  return combined;
}

ImbalanceReport imbalance_report(std::span<const uint64_t> per_worker_tokens) {
  if (per_worker_tokens.empty()) {
    throw std::invalid_argument("imbalance_report: need at least one worker");
  }
  ImbalanceReport report;
  report.max_tokens = *std::max_element(per_worker_tokens.begin(), per_worker_tokens.end());
  report.min_tokens = *std::min_element(per_worker_tokens.begin(), per_worker_tokens.end());
  report.spread = report.max_tokens == 0
                      ? 0.0
                      : static_cast<double>(report.max_tokens - report.min_tokens) /
                            static_cast<double>(report.max_tokens);
  return report;
}

}  // namespace recsparse
