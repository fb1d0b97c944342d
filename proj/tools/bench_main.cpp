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

// Compares the OpenMP kernels against their serial references on the same
// inputs: batch hashing, batch embedding gather, sparse optimizer apply,
// and the weighted gradient combine. Outputs must match bit-for-bit; the
// benchmark reports both timings and the verification result.

#include <omp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <vector>

#include "recsparse/embed_table.hpp"
#include "recsparse/hash.hpp"
#include "recsparse/seq_batcher.hpp"
#include "recsparse/sparse_update.hpp"
#include "recsparse/workload.hpp"

namespace {

using namespace recsparse;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Timing {
  double serial = 0;
  double parallel = 0;
  bool match = false;
};

void print_row(const char* name, const Timing& t) {
  std::printf("%-24s %12.3f ms %12.3f ms %8.2fx   %s\n", name, t.serial * 1e3,
              t.parallel * 1e3, t.parallel > 0 ? t.serial / t.parallel : 0.0,
              t.match ? "outputs match" : "MISMATCH");
}

template <typename F>
double time_best_of(int iters, F&& fn) {
  double best = 1e300;
  for (int i = 0; i < iters; ++i) {
    const auto t0 = Clock::now();
    fn();
    best = std::min(best, seconds_since(t0));
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial vs OpenMP kernel benchmark"};
  uint64_t rows = 1 << 17;
  uint32_t dim = 64;
  int iters = 5;
  int threads = 0;
  app.add_option("--rows", rows, "table rows / batch keys");
  app.add_option("--dim", dim, "embedding dim");
  app.add_option("--iters", iters, "timing repetitions (best-of)");
  app.add_option("--threads", threads, "OpenMP thread count (0 = runtime default)");
  CLI11_PARSE(app, argc, argv);

  if (threads > 0) omp_set_num_threads(threads);
  std::printf("rows=%llu dim=%u omp_max_threads=%d\n\n",
              static_cast<unsigned long long>(rows), dim, omp_get_max_threads());
  std::printf("%-24s %15s %15s %9s\n", "kernel", "serial", "openmp", "speedup");

  // Shared fixture: keys with duplicates, a populated table.
  std::vector<uint64_t> keys(rows);
  for (uint64_t i = 0; i < rows; ++i) keys[i] = hash64(i) % (rows / 2 + 1);

  {
    std::vector<uint64_t> out_serial(rows), out_parallel(rows);
    Timing t;
    t.serial = time_best_of(iters, [&] { hash64_batch_serial(keys, out_serial); });
    t.parallel = time_best_of(iters, [&] { hash64_batch(keys, out_parallel); });
    t.match = out_serial == out_parallel;
    print_row("hash64_batch", t);
  }

  TableConfig cfg;
  cfg.capacity = 1;
  while (cfg.capacity < rows * 2) cfg.capacity <<= 1;
  cfg.embedding_dim = dim;
  cfg.chunk_rows = 1 << 14;
  EmbedTable table(cfg);
  std::vector<float> row(dim);
  for (uint64_t i = 0; i <= rows / 2; ++i) {
    pseudo_sparse_grad(i, 0, row);
    table.insert(i, row);
  }

  {
    std::vector<float> out_serial(rows * dim), out_parallel(rows * dim);
    EmbedTable serial_table = table;    // copies so tick streams stay aligned
    EmbedTable parallel_table = table;
    Timing t;
    t.serial = time_best_of(iters, [&] { serial_table.lookup_batch_serial(keys, out_serial); });
    t.parallel = time_best_of(iters, [&] { parallel_table.lookup_batch(keys, out_parallel); });
    t.match = out_serial == out_parallel;
    print_row("lookup_batch", t);
  }

  {
    const uint64_t ids_n = rows / 4 + 1;
    std::vector<uint64_t> ids(ids_n);
    std::vector<float> grads(ids_n * dim);
    for (uint64_t i = 0; i < ids_n; ++i) {
      ids[i] = i;
      pseudo_sparse_grad(i, 1, std::span<float>(grads).subspan(i * dim, dim));
    }
    AdamParams adam;
    Timing t;
    t.serial = time_best_of(iters, [&] {
      EmbedTable scratch = table;
      GradAccumulator acc(dim, 1);
      acc.accumulate(ids, grads);
      acc.apply_serial(scratch, adam);
    });
    t.parallel = time_best_of(iters, [&] {
      EmbedTable scratch = table;
      GradAccumulator acc(dim, 1);
      acc.accumulate(ids, grads);
      acc.apply(scratch, adam);
    });
    // Verification pass outside the timer.
    EmbedTable a = table, b = table;
    GradAccumulator acc_a(dim, 1), acc_b(dim, 1);
    acc_a.accumulate(ids, grads);
    acc_b.accumulate(ids, grads);
    acc_a.apply_serial(a, adam);
    acc_b.apply(b, adam);
    t.match = true;
    for (uint64_t i = 0; i < ids_n && t.match; ++i) {
      auto ha = a.find(ids[i]), hb = b.find(ids[i]);
      auto ea = a.embedding(*ha), eb = b.embedding(*hb);
      t.match = std::equal(ea.begin(), ea.end(), eb.begin());
    }
    print_row("sparse_adam_apply", t);
  }

  {
    const size_t workers = 8;
    std::vector<uint64_t> sizes(workers);
    std::vector<std::vector<double>> grads(workers, std::vector<double>(rows));
    for (size_t w = 0; w < workers; ++w) {
      sizes[w] = w + 1;
      for (uint64_t e = 0; e < rows; ++e) {
        grads[w][e] = static_cast<double>(hash64(w * rows + e) >> 11) * 0x1.0p-53 - 0.5;
      }
    }
    std::vector<double> out_serial, out_parallel;
    Timing t;
    t.serial = time_best_of(iters, [&] { out_serial = weighted_grad_combine_serial(sizes, grads); });
    t.parallel = time_best_of(iters, [&] { out_parallel = weighted_grad_combine(sizes, grads); });
    t.match = out_serial == out_parallel;
    print_row("weighted_grad_combine", t);
  }

  return 0;
}
