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
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "recsparse/exchange_sim.hpp"
#include "recsparse/merge_registry.hpp"
#include "recsparse/seq_batcher.hpp"
#include "recsparse/sparse_update.hpp"

namespace recsparse {

// Deterministic RNG wrapper: raw engine output is mapped to floats with
// explicit arithmetic, never through std distributions (their algorithms
// are implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  uint64_t next_u64() { return engine_(); }
  // [0, 1)
  double next_unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  // (0, 1]
  double next_unit_pos() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

 private:
  std::mt19937_64 engine_;
};

/// Lognormal truncated to [1, max_value], with the log-mean solved
/// numerically so the mean AFTER truncation matches `mean` (plain moment
/// matching undershoots once the tail is cut).
class TruncatedLognormal {
 public:
  TruncatedLognormal(double mean, uint64_t max_value, double sigma);
  uint64_t sample(Rng& rng) const;
  double mu() const { return mu_; }

 private:
  double mu_;
  double sigma_;
  uint64_t max_;
};

// P(id = r) proportional to (r + 1)^-exponent over [0, vocab).
// exponent 0 degenerates to uniform.
class ZipfSampler {
 public:
  ZipfSampler(uint64_t vocab, double exponent);
  uint64_t sample(Rng& rng) const;

 private:
  std::vector<double> cdf_;
};

// All logical tables of a feature set in first-appearance order. Workload
// files tag every raw id with its table ordinal in the high bits, one
// encoding for the whole catalog, so a stored id is decodable without
// knowing the merge plan.
struct TableCatalog {
  std::vector<std::string> names;                          // ordinal-1 order
  std::unordered_map<std::string, uint32_t> ordinal_of;    // name -> [1, m]
  uint32_t k_bits = 1;

  uint64_t encode(uint32_t ordinal, uint64_t raw_id) const;
  std::pair<uint32_t, uint64_t> decode(uint64_t tagged_id) const;
};
TableCatalog catalog_from(std::span<const FeatureConfig> features);

struct LengthDistSpec {
  double mean = 600.0;
  uint64_t max_len = 3000;
  double sigma = 1.0;
};

// Simulated-time step cost: per-worker compute a*len + b*len^2 summed over
// batch samples, plus byte-, lookup- and round-proportional terms.
struct CostModel {
  double compute_a = 1.0;
  double compute_b = 0.01;
  double byte_cost = 1e-4;
  double lookup_cost = 0.05;
  double round_cost = 100.0;

  double sample_compute(uint64_t tokens) const {
    const auto len = static_cast<double>(tokens);
    return compute_a * len + compute_b * len * len;
  }
  // Nondecreasing in every argument (all coefficients are >= 0).
  double step_cost(double compute_max, uint64_t bytes, uint64_t lookups,
                   uint64_t rounds) const {
    return compute_max + byte_cost * static_cast<double>(bytes) +
           lookup_cost * static_cast<double>(lookups) +
           round_cost * static_cast<double>(rounds);
  }
};

struct WorkloadSpec {
  uint64_t seed = 1;
  uint64_t num_sequences = 1000;
  LengthDistSpec length;
  double zipf_exponent = 1.1;
  uint64_t vocab_size = 100000;                 // per logical table
  std::map<std::string, uint64_t> table_vocab;  // per-table overrides
  std::vector<FeatureConfig> features;          // empty -> default_features()
  uint64_t world_size = 8;
  uint64_t batch_size = 16;
  uint64_t accum_steps = 1;
  uint64_t chunk_samples = 256;  // batcher refill granularity
  CostModel cost;
  AdamParams adam;
  TableConfig shard_config{.capacity = 4096,
                           .embedding_dim = 16,  // overridden per merge group
                           .thread_groups = 1,
                           .max_load_factor = 0.75,
                           .chunk_rows = 4096};

  uint64_t target_tokens() const {
    return batch_size * static_cast<uint64_t>(length.mean);
  }
  std::vector<FeatureConfig> effective_features() const;
  uint64_t vocab_for(const std::string& table) const;
  void validate() const;
};

// Three dim-32 tables (one merged group of three) plus one dim-64 table.
std::vector<FeatureConfig> default_features();

// Flat key=value config file; '#' starts a comment. Unknown keys error.
WorkloadSpec load_spec_file(const std::filesystem::path& path);
void apply_spec_entry(WorkloadSpec& spec, const std::string& key, const std::string& value);

void generate_workload(const WorkloadSpec& spec, std::ostream& os);
void generate_workload_file(const WorkloadSpec& spec, const std::filesystem::path& path);
std::vector<SequenceSample> read_workload_file(const std::filesystem::path& path);

struct AblationToggles {
  bool merge = true;
  bool dedup_stage1 = true;
  bool dedup_stage2 = true;
  bool seq_balance = true;

  DedupMode dedup_mode() const;
};

struct RunStats {
  std::string label;
  AblationToggles toggles;
  uint64_t steps = 0;
  uint64_t samples = 0;
  uint64_t tokens = 0;
  uint64_t ids_requested = 0;
  uint64_t ids_sent = 0;
  uint64_t id_bytes = 0;
  uint64_t emb_vectors = 0;
  uint64_t emb_bytes = 0;
  uint64_t lookups = 0;
  uint64_t rounds = 0;
  uint64_t updated_rows = 0;
  double stage1_ratio = 1.0;
  double stage2_ratio = 1.0;
  double mean_spread = 0.0;
  double sim_time = 0.0;
  double throughput = 0.0;
  double emb_checksum = 0.0;
  double dense_checksum = 0.0;

  uint64_t bytes_total() const { return id_bytes + emb_bytes; }
};

// Deterministic pseudo-gradients standing in for a dense model: pure
// functions of (sample_id, step).
void pseudo_sparse_grad(uint64_t sample_id, uint64_t step, std::span<float> out);
void pseudo_dense_grad(uint64_t sample_id, uint64_t step, std::span<double> out);

// Full step loop over one toggle configuration: batching, sharded lookup
// with dedup, sparse accumulate/apply, weighted dense combine, cost model.
// Optional streams receive per-step records and per-direction traffic
// records.
RunStats run_workload(const WorkloadSpec& spec, std::span<const SequenceSample> samples,
                      const AblationToggles& toggles, std::ostream* step_records = nullptr,
                      std::ostream* pair_records = nullptr);

// The incremental ladder: baseline, +merge, +dedup stage 1, +stage 2,
// +sequence balancing.
std::vector<RunStats> run_ablation_ladder(const WorkloadSpec& spec,
                                          std::span<const SequenceSample> samples,
                                          std::ostream* step_records = nullptr);

std::string run_record_line(const RunStats& stats);
RunStats parse_run_record(const std::string& line);
std::vector<RunStats> read_run_records(std::istream& is);
std::string format_report_table(std::span<const RunStats> runs);

// Deterministic float formatting used by every report writer.
std::string fmt_double(double v);

}  // namespace recsparse
