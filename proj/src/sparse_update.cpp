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

#include "recsparse/sparse_update.hpp"

#include <cmath>
#include <stdexcept>

namespace recsparse {

void adam_update_row(std::span<float> weights, std::span<float> m, std::span<float> v,
                     uint64_t& step, std::span<const float> grad, const AdamParams& params) {
  step += 1;
  const double bc1 = 1.0 - std::pow(params.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(params.beta2, static_cast<double>(step));
  for (size_t e = 0; e < weights.size(); ++e) {
    const double g = grad[e];
    const double me = params.beta1 * m[e] + (1.0 - params.beta1) * g;
    const double ve = params.beta2 * v[e] + (1.0 - params.beta2) * g * g;
    m[e] = static_cast<float>(me);
    v[e] = static_cast<float>(ve);
    const double m_hat = me / bc1;
    const double v_hat = ve / bc2;
    weights[e] = static_cast<float>(weights[e] - params.lr * m_hat / (std::sqrt(v_hat) + params.eps));
  }
}

GradAccumulator::GradAccumulator(uint32_t embedding_dim, uint64_t accum_steps)
    : embedding_dim_(embedding_dim), accum_steps_(accum_steps) {
  if (embedding_dim_ < 1) throw ConfigError("GradAccumulator: embedding_dim must be >= 1");
  if (accum_steps_ < 1) throw ConfigError("GradAccumulator: accum_steps must be >= 1");
}

void GradAccumulator::accumulate(std::span<const uint64_t> ids, std::span<const float> grads) {
  if (grads.size() != ids.size() * embedding_dim_) {
    throw std::invalid_argument("accumulate: gradient shape mismatch");
  }
  for (size_t i = 0; i < ids.size(); ++i) {
    auto [it, fresh] = pending_.try_emplace(ids[i]);
    if (fresh) it->second.assign(embedding_dim_, 0.0f);
    const float* g = grads.data() + i * embedding_dim_;
    for (size_t e = 0; e < embedding_dim_; ++e) it->second[e] += g[e];
  }
  ++micro_batches_seen_;
}

size_t GradAccumulator::apply(EmbedTable& table, const AdamParams& params) {
  if (table.embedding_dim() != embedding_dim_) {
    throw ConfigError("apply: table dim does not match accumulator dim");
  }
  // Vivification mutates the key structure, so handles are resolved
  // serially first; the per-row updates are independent.
  std::vector<RowHandle> handles;
  std::vector<const std::vector<float>*> grads;
  handles.reserve(pending_.size());
  grads.reserve(pending_.size());
  for (const auto& [id, grad] : pending_) {
    handles.push_back(table.ensure(id));
    grads.push_back(&grad);
  }
  const int64_t n = static_cast<int64_t>(handles.size());
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const size_t j = static_cast<size_t>(i);
    adam_update_row(table.embedding(handles[j]), table.opt_m(handles[j]),
                    table.opt_v(handles[j]), table.opt_step(handles[j]), *grads[j], params);
  }
  const size_t updated = pending_.size();
  pending_.clear();
  micro_batches_seen_ = 0;
  return updated;
}

size_t GradAccumulator::apply_serial(EmbedTable& table, const AdamParams& params) {
  if (table.embedding_dim() != embedding_dim_) {
    throw ConfigError("apply: table dim does not match accumulator dim");
  }
  for (const auto& [id, grad] : pending_) {
    RowHandle h = table.ensure(id);
    adam_update_row(table.embedding(h), table.opt_m(h), table.opt_v(h),
                    table.opt_step(h), grad, params);
  }
  const size_t updated = pending_.size();
  pending_.clear();
  micro_batches_seen_ = 0;
  return updated;
}

}  // namespace recsparse
