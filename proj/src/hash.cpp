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

#include "recsparse/hash.hpp"

#include <stdexcept>

namespace recsparse {

void hash64_batch(std::span<const uint64_t> keys, std::span<uint64_t> out) {
  if (keys.size() != out.size()) {
    throw std::invalid_argument("hash64_batch: output size mismatch");
  }
  const int64_t n = static_cast<int64_t>(keys.size());
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    out[static_cast<size_t>(i)] = hash64(keys[static_cast<size_t>(i)]);
  }
}

void hash64_batch_serial(std::span<const uint64_t> keys, std::span<uint64_t> out) {
  if (keys.size() != out.size()) {
    throw std::invalid_argument("hash64_batch: output size mismatch");
  }
  for (size_t i = 0; i < keys.size(); ++i) out[i] = hash64(keys[i]);
}

}  // namespace recsparse
