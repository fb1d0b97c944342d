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
#include <map>
#include <span>
#include <vector>

#include "recsparse/embed_table.hpp"

namespace recsparse {

struct AdamParams {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam step on a single row, using the row's moment
// vectors and per-row step counter stored in the table.
void adam_update_row(std::span<float> weights, std::span<float> m, std::span<float> v,
                     uint64_t& step, std::span<const float> grad, const AdamParams& params);

/// Accumulates sparse gradients across micro-batches, then applies one
/// optimizer step per activated row. Rows never touched by the window
/// stay bitwise identical. Gradients for the same id are summed, not
/// averaged; global-sample averaging is the caller's job (see
/// weighted_grad_combine).
class GradAccumulator {
 public:
  GradAccumulator(uint32_t embedding_dim, uint64_t accum_steps);

  // grads is row-major [ids.size() x embedding_dim]. Duplicate ids, within
  // one call or across calls, sum elementwise. Counts one micro-batch.
  void accumulate(std::span<const uint64_t> ids, std::span<const float> grads);

  bool ready() const { return micro_batches_seen_ >= accum_steps_; }
  uint64_t micro_batches_seen() const { return micro_batches_seen_; }
  size_t pending_ids() const { return pending_.size(); }
  const std::map<uint64_t, std::vector<float>>& pending() const { return pending_; }

  // Applies one Adam step to every pending row (zero-vivifying absent
  // ids), clears the window, and returns the updated row count. Rows are
  // updated in ascending id order; `apply` parallelizes across rows with
  // OpenMP (rows are independent), `apply_serial` is the reference. Both
  // leave the table bit-identical.
  size_t apply(EmbedTable& table, const AdamParams& params);
  size_t apply_serial(EmbedTable& table, const AdamParams& params);

 private:
  uint32_t embedding_dim_;
  uint64_t accum_steps_;
  uint64_t micro_batches_seen_ = 0;
  // Ordered map: the apply order (ascending id) falls out of iteration.
  std::map<uint64_t, std::vector<float>> pending_;
};

}  // namespace recsparse
