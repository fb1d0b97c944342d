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

#include "recsparse/workload.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace recsparse {
namespace {

WorkloadSpec small_spec() {
  WorkloadSpec spec;
  spec.seed = 5;
  spec.num_sequences = 120;
  spec.length.mean = 40;
  spec.length.max_len = 200;
  spec.vocab_size = 500;
  spec.world_size = 4;
  spec.batch_size = 4;
  spec.shard_config.capacity = 1024;
  spec.shard_config.chunk_rows = 1024;
  return spec;
}

std::filesystem::path temp_file(const std::string& tag) {
  return std::filesystem::temp_directory_path() / ("recsparse_wl_" + tag + ".txt");
}

TEST(TruncatedLognormal, SolvedMeanMatchesTarget) {
  for (double sigma : {0.5, 1.0, 1.5}) {
    TruncatedLognormal dist(600.0, 3000, sigma);
    Rng rng(1);
    double sum = 0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) sum += static_cast<double>(dist.sample(rng));
    const double mean = sum / n;
    EXPECT_NEAR(mean, 600.0, 600.0 * 0.05) << "sigma " << sigma;
  }
}

TEST(TruncatedLognormal, SamplesWithinRange) {
  TruncatedLognormal dist(600.0, 3000, 1.2);
  Rng rng(2);
  for (int i = 0; i < 20000; ++i) {
    const uint64_t x = dist.sample(rng);
    ASSERT_GE(x, 1u);
    ASSERT_LE(x, 3000u);
  }
}

TEST(TruncatedLognormal, BadParamsThrow) {
  EXPECT_THROW(TruncatedLognormal(600.0, 3000, 0.0), ConfigError);
  EXPECT_THROW(TruncatedLognormal(3000.0, 3000, 1.0), ConfigError);
  EXPECT_THROW(TruncatedLognormal(0.5, 3000, 1.0), ConfigError);
}

TEST(ZipfSampler, ZeroExponentIsUniform) {
  const uint64_t vocab = 50;
  ZipfSampler zipf(vocab, 0.0);
  Rng rng(3);
  std::vector<uint64_t> counts(vocab, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[zipf.sample(rng)];
  // Chi-square against the uniform expectation; 49 dof, generous bound.
  const double expected = static_cast<double>(n) / vocab;
  double chi2 = 0;
  for (uint64_t c : counts) {
    const double d = static_cast<double>(c) - expected;
    chi2 += d * d / expected;
  }
  EXPECT_LT(chi2, 95.0);
}

TEST(ZipfSampler, PositiveExponentSkewsToHead) {
  ZipfSampler zipf(1000, 1.1);
  Rng rng(4);
  uint64_t head = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) head += zipf.sample(rng) < 10;
  // Under uniform sampling the first ten ids would get ~1%.
  EXPECT_GT(static_cast<double>(head) / n, 0.30);
}

TEST(TableCatalog, OrdinalRoundTrip) {
  const auto features = default_features();
  const TableCatalog catalog = catalog_from(features);
  ASSERT_EQ(catalog.names.size(), 4u);
  EXPECT_EQ(catalog.k_bits, 3u);  // ceil(log2(4 + 1))
  for (uint32_t ord = 1; ord <= 4; ++ord) {
    const uint64_t tagged = catalog.encode(ord, 12345);
    const auto [o, raw] = catalog.decode(tagged);
    EXPECT_EQ(o, ord);
    EXPECT_EQ(raw, 12345u);
  }
}

TEST(Generate, SameSeedIsByteIdentical) {
  const WorkloadSpec spec = small_spec();
  std::ostringstream a, b;
  generate_workload(spec, a);
  generate_workload(spec, b);
  EXPECT_EQ(a.str(), b.str());
  WorkloadSpec other = spec;
  other.seed = 6;
  std::ostringstream c;
  generate_workload(other, c);
  EXPECT_NE(a.str(), c.str());
}

TEST(Generate, RoundTripThroughFile) {
  const WorkloadSpec spec = small_spec();
  const auto path = temp_file("roundtrip");
  generate_workload_file(spec, path);
  const auto samples = read_workload_file(path);
  ASSERT_EQ(samples.size(), spec.num_sequences);
  const TableCatalog catalog = catalog_from(spec.effective_features());
  for (const auto& s : samples) {
    ASSERT_GE(s.token_count(), 1u);
    ASSERT_LE(s.token_count(), spec.length.max_len);
    for (uint64_t id : s.feature_ids) {
      const auto [ordinal, raw] = catalog.decode(id);
      ASSERT_GE(ordinal, 1u);
      ASSERT_LE(ordinal, 4u);
      ASSERT_LT(raw, spec.vocab_size);
    }
  }
}

TEST(Generate, EmpiricalMeanNearConfigured) {
  WorkloadSpec spec = small_spec();
  spec.num_sequences = 20000;
  spec.length.mean = 600;
  spec.length.max_len = 3000;
  const auto path = temp_file("mean");
  generate_workload_file(spec, path);
  const auto samples = read_workload_file(path);
  double total = 0;
  for (const auto& s : samples) total += static_cast<double>(s.token_count());
  const double mean = total / static_cast<double>(samples.size());
  EXPECT_NEAR(mean, 600.0, 600.0 * 0.05);
}

TEST(SpecFile, ParsesKeysAndFeatures) {
  const auto path = temp_file("cfg");
  {
    std::ofstream os(path);
    os << "# comment line\n"
       << "seed = 42\n"
       << "world = 2\n"
       << "mean_len = 50   # trailing comment\n"
       << "vocab = 999\n"
       << "vocab.item_table = 777\n"
       << "feature.user = 16:user_table:none\n"
       << "feature.pair = 16:user_table,item_table:mean\n";
  }
  const WorkloadSpec spec = load_spec_file(path);
  EXPECT_EQ(spec.seed, 42u);
  EXPECT_EQ(spec.world_size, 2u);
  EXPECT_DOUBLE_EQ(spec.length.mean, 50.0);
  EXPECT_EQ(spec.vocab_for("user_table"), 999u);
  EXPECT_EQ(spec.vocab_for("item_table"), 777u);
  ASSERT_EQ(spec.features.size(), 2u);
  EXPECT_EQ(spec.features[1].lookup_tables.size(), 2u);
  EXPECT_EQ(spec.features[1].pooling, Pooling::kMean);
}

TEST(SpecFile, UnknownKeyThrows) {
  const auto path = temp_file("badkey");
  std::ofstream(path) << "no_such_key = 1\n";
  EXPECT_THROW(load_spec_file(path), ConfigError);
}

TEST(SpecFile, BadNumberThrows) {
  const auto path = temp_file("badnum");
  std::ofstream(path) << "seed = twelve\n";
  EXPECT_THROW(load_spec_file(path), ConfigError);
}

TEST(PseudoGrad, DeterministicAndBounded) {
  std::vector<float> a(8), b(8);
  pseudo_sparse_grad(123, 4, a);
  pseudo_sparse_grad(123, 4, b);
  EXPECT_EQ(a, b);
  pseudo_sparse_grad(123, 5, b);
  EXPECT_NE(a, b);
  for (float x : a) EXPECT_LE(std::abs(x), 0.05f);
}

TEST(RunWorkload, DeterministicRecords) {
  const WorkloadSpec spec = small_spec();
  const auto path = temp_file("run");
  generate_workload_file(spec, path);
  const auto samples = read_workload_file(path);
  auto run_once = [&] {
    std::ostringstream steps;
    RunStats stats = run_workload(spec, samples, AblationToggles{}, &steps, nullptr);
    stats.label = "x";
    return run_record_line(stats) + "\n" + steps.str();
  };
  EXPECT_EQ(run_once(), run_once());
}

TEST(RunWorkload, SingleWorkerTokenConservationAcrossBatching) {
  WorkloadSpec spec = small_spec();
  spec.world_size = 1;
  const auto path = temp_file("conserve");
  generate_workload_file(spec, path);
  const auto samples = read_workload_file(path);
  uint64_t source_tokens = 0;
  for (const auto& s : samples) source_tokens += s.token_count();

  AblationToggles dynamic{};  // balance on
  AblationToggles fixed{};
  fixed.seq_balance = false;
  const RunStats a = run_workload(spec, samples, dynamic);
  const RunStats b = run_workload(spec, samples, fixed);
  EXPECT_EQ(a.tokens, source_tokens);
  EXPECT_EQ(b.tokens, source_tokens);
  EXPECT_EQ(a.samples, samples.size());
  EXPECT_EQ(b.samples, samples.size());
}

TEST(RunWorkload, AblationLadderImprovesTrafficAndBalance) {
  WorkloadSpec spec = small_spec();
  spec.num_sequences = 400;
  const auto path = temp_file("ladder");
  generate_workload_file(spec, path);
  const auto samples = read_workload_file(path);
  const auto runs = run_ablation_ladder(spec, samples);
  ASSERT_EQ(runs.size(), 5u);
  const RunStats& off = runs.front();
  const RunStats& on = runs.back();
  EXPECT_LT(on.bytes_total(), off.bytes_total());
  EXPECT_LT(on.mean_spread, off.mean_spread);
  EXPECT_GT(on.throughput, off.throughput);
  // Output embeddings are identical whatever the dedup mode; the merge +
  // balance rungs share the same first-step content, so the checksum is a
  // strong determinism probe within a rung.
  EXPECT_EQ(runs[2].emb_checksum, runs[3].emb_checksum);
}

TEST(RunRecords, EmptyRecordSetGivesHeaderOnlyTable) {
  std::istringstream empty("");
  const auto runs = read_run_records(empty);
  EXPECT_TRUE(runs.empty());
  const std::string table = format_report_table(runs);
  EXPECT_NE(table.find("config"), std::string::npos);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 1);
}

TEST(CostModel, StepCostNondecreasingInTokensAndBytes) {
  const CostModel cost;
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 2000; ++trial) {
    const uint64_t tokens = rng() % 3000;
    EXPECT_LE(cost.sample_compute(tokens), cost.sample_compute(tokens + 1 + rng() % 100));
    const double compute = static_cast<double>(rng() % 10000);
    const uint64_t bytes = rng() % 1000000;
    const uint64_t lookups = rng() % 10000;
    const uint64_t rounds = rng() % 8;
    const double base = cost.step_cost(compute, bytes, lookups, rounds);
    EXPECT_LE(base, cost.step_cost(compute, bytes + 1 + rng() % 5000, lookups, rounds));
    EXPECT_LE(base, cost.step_cost(compute + 1.0, bytes, lookups, rounds));
    EXPECT_LE(base, cost.step_cost(compute, bytes, lookups + 1, rounds + 1));
  }
}

TEST(RunRecords, RoundTripThroughText) {
  RunStats s;
  s.label = "merge+dedup1";
  s.toggles = {true, true, false, false};
  s.steps = 7;
  s.samples = 100;
  s.tokens = 4000;
  s.ids_requested = 4000;
  s.ids_sent = 1500;
  s.id_bytes = 12000;
  s.emb_vectors = 1500;
  s.emb_bytes = 192000;
  s.lookups = 1500;
  s.rounds = 14;
  s.updated_rows = 900;
  s.stage1_ratio = 0.375;
  s.stage2_ratio = 1.0;
  s.mean_spread = 0.25;
  s.sim_time = 123.5;
  s.throughput = 0.8097;
  s.emb_checksum = -3.25;
  s.dense_checksum = 0.125;
  const RunStats parsed = parse_run_record(run_record_line(s));
  EXPECT_EQ(parsed.label, s.label);
  EXPECT_EQ(parsed.steps, s.steps);
  EXPECT_EQ(parsed.bytes_total(), s.bytes_total());
  EXPECT_DOUBLE_EQ(parsed.stage1_ratio, s.stage1_ratio);
  EXPECT_DOUBLE_EQ(parsed.throughput, s.throughput);
  EXPECT_DOUBLE_EQ(parsed.emb_checksum, s.emb_checksum);

  std::istringstream records(run_record_line(s) + "\nkind=step step=0 tokens=5\n");
  const auto runs = read_run_records(records);
  ASSERT_EQ(runs.size(), 1u);
  const std::string table = format_report_table(runs);
  EXPECT_NE(table.find("merge+dedup1"), std::string::npos);
  EXPECT_NE(table.find("204000"), std::string::npos);  // bytes_total
}

}  // namespace
}  // namespace recsparse
