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

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "recsparse/exchange_sim.hpp"

namespace recsparse {
namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Mean of a lognormal(mu, sigma) conditioned on X <= upper.
double truncated_lognormal_mean(double mu, double sigma, double upper) {
  const double log_u = std::log(upper);
  const double numer =
      std::exp(mu + sigma * sigma / 2.0) * normal_cdf((log_u - mu - sigma * sigma) / sigma);
  const double denom = normal_cdf((log_u - mu) / sigma);
  return numer / denom;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": bad integer '" + v + "'");
  }
}

double parse_f64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": bad number '" + v + "'");
  }
}

Pooling parse_pooling(const std::string& v, const std::string& key) {
  if (v == "none") return Pooling::kNone;
  if (v == "sum") return Pooling::kSum;
  if (v == "mean") return Pooling::kMean;
  throw ConfigError("config key " + key + ": unknown pooling '" + v + "'");
}

constexpr size_t kDenseDim = 32;
constexpr double kDenseLr = 0.1;

}  // namespace

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

TruncatedLognormal::TruncatedLognormal(double mean, uint64_t max_value, double sigma)
    : sigma_(sigma), max_(max_value) {
  if (!(sigma > 0)) throw ConfigError("length sigma must be > 0");
  if (max_value < 2) throw ConfigError("length max must be >= 2");
  if (!(mean > 1.0) || mean >= static_cast<double>(max_value)) {
    throw ConfigError("length mean must lie in (1, max)");
  }
  // The truncated mean is monotone in mu; bisect until it matches.
  double lo = -20.0, hi = std::log(static_cast<double>(max_value)) + 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (truncated_lognormal_mean(mid, sigma_, static_cast<double>(max_value)) < mean) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  mu_ = 0.5 * (lo + hi);
}

uint64_t TruncatedLognormal::sample(Rng& rng) const {
  for (;;) {
    const double u1 = rng.next_unit_pos();
    const double u2 = rng.next_unit();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    const double x = std::exp(mu_ + sigma_ * z);
    if (x > static_cast<double>(max_)) continue;  // resample the tail
    const auto n = static_cast<uint64_t>(std::llround(x));
    return std::max<uint64_t>(1, std::min(n, max_));
  }
}

ZipfSampler::ZipfSampler(uint64_t vocab, double exponent) {
  if (vocab < 1) throw ConfigError("zipf vocab must be >= 1");
  if (exponent < 0) throw ConfigError("zipf exponent must be >= 0");
  cdf_.resize(vocab);
  double total = 0;
  for (uint64_t r = 0; r < vocab; ++r) {
    total += std::pow(static_cast<double>(r + 1), -exponent);
    cdf_[r] = total;
  }
  for (double& c : cdf_) c /= total;
  cdf_.back() = 1.0;
}

uint64_t ZipfSampler::sample(Rng& rng) const {
  const double u = rng.next_unit();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return static_cast<uint64_t>(std::min<size_t>(it - cdf_.begin(), cdf_.size() - 1));
}

uint64_t TableCatalog::encode(uint32_t ordinal, uint64_t raw_id) const {
  return encode_tagged_id(k_bits, ordinal, static_cast<uint32_t>(names.size()), raw_id);
}

std::pair<uint32_t, uint64_t> TableCatalog::decode(uint64_t tagged_id) const {
  return decode_tagged_id(k_bits, static_cast<uint32_t>(names.size()), tagged_id);
}

TableCatalog catalog_from(std::span<const FeatureConfig> features) {
  TableCatalog catalog;
  for (const FeatureConfig& f : features) {
    for (const std::string& table : f.lookup_tables) {
      if (catalog.ordinal_of.count(table)) continue;
      catalog.names.push_back(table);
      catalog.ordinal_of[table] = static_cast<uint32_t>(catalog.names.size());
    }
  }
  catalog.k_bits =
      std::max<uint32_t>(1, static_cast<uint32_t>(std::bit_width(catalog.names.size())));
  return catalog;
}

std::vector<FeatureConfig> default_features() {
  return {
      {"user", 32, {"user_table"}, Pooling::kNone},
      {"item", 32, {"item_table"}, Pooling::kNone},
      {"category", 32, {"category_table"}, Pooling::kNone},
      {"context", 64, {"context_table"}, Pooling::kNone},
  };
}

std::vector<FeatureConfig> WorkloadSpec::effective_features() const {
  return features.empty() ? default_features() : features;
}

uint64_t WorkloadSpec::vocab_for(const std::string& table) const {
  auto it = table_vocab.find(table);
  return it == table_vocab.end() ? vocab_size : it->second;
}

void WorkloadSpec::validate() const {
  if (num_sequences < 1) throw ConfigError("num_sequences must be >= 1");
  if (world_size < 1) throw ConfigError("world_size must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (accum_steps < 1) throw ConfigError("accum_steps must be >= 1");
  if (chunk_samples < 1) throw ConfigError("chunk_samples must be >= 1");
  if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
  if (zipf_exponent < 0) throw ConfigError("zipf_exponent must be >= 0");
  if (cost.compute_a < 0 || cost.compute_b < 0 || cost.byte_cost < 0 ||
      cost.lookup_cost < 0 || cost.round_cost < 0) {
    throw ConfigError("cost model coefficients must be >= 0");
  }
  shard_config.validate();
  TruncatedLognormal check(length.mean, length.max_len, length.sigma);
  (void)check;
  plan_merge(effective_features());  // validates feature configs
}

void apply_spec_entry(WorkloadSpec& spec, const std::string& key, const std::string& value) {
  if (key == "seed") spec.seed = parse_u64(value, key);
  else if (key == "sequences") spec.num_sequences = parse_u64(value, key);
  else if (key == "mean_len") spec.length.mean = parse_f64(value, key);
  else if (key == "max_len") spec.length.max_len = parse_u64(value, key);
  else if (key == "sigma") spec.length.sigma = parse_f64(value, key);
  else if (key == "zipf") spec.zipf_exponent = parse_f64(value, key);
  else if (key == "vocab") spec.vocab_size = parse_u64(value, key);
  else if (key == "world") spec.world_size = parse_u64(value, key);
  else if (key == "batch_size") spec.batch_size = parse_u64(value, key);
  else if (key == "accum_steps") spec.accum_steps = parse_u64(value, key);
  else if (key == "chunk_samples") spec.chunk_samples = parse_u64(value, key);
  else if (key == "adam_lr") spec.adam.lr = parse_f64(value, key);
  else if (key == "compute_a") spec.cost.compute_a = parse_f64(value, key);
  else if (key == "compute_b") spec.cost.compute_b = parse_f64(value, key);
  else if (key == "byte_cost") spec.cost.byte_cost = parse_f64(value, key);
  else if (key == "lookup_cost") spec.cost.lookup_cost = parse_f64(value, key);
  else if (key == "round_cost") spec.cost.round_cost = parse_f64(value, key);
  else if (key == "capacity") spec.shard_config.capacity = parse_u64(value, key);
  else if (key == "chunk_rows") {
    spec.shard_config.chunk_rows = static_cast<uint32_t>(parse_u64(value, key));
  } else if (key == "thread_groups") {
    spec.shard_config.thread_groups = static_cast<uint32_t>(parse_u64(value, key));
  } else if (key == "max_load_factor") {
    spec.shard_config.max_load_factor = parse_f64(value, key);
  } else if (key.rfind("vocab.", 0) == 0) {
    spec.table_vocab[key.substr(6)] = parse_u64(value, key);
  } else if (key.rfind("feature.", 0) == 0) {
    // feature.<name> = <dim>:<table,table,...>:<none|sum|mean>
    const std::vector<std::string> parts = split(value, ':');
    if (parts.size() != 3) {
      throw ConfigError("config key " + key + ": want <dim>:<tables>:<pooling>");
    }
    FeatureConfig f;
    f.feature_name = key.substr(8);
    f.embedding_dim = static_cast<uint32_t>(parse_u64(parts[0], key));
    for (const std::string& t : split(parts[1], ',')) {
      if (!t.empty()) f.lookup_tables.push_back(t);
    }
    f.pooling = parse_pooling(parts[2], key);
    spec.features.push_back(std::move(f));
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

WorkloadSpec load_spec_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path.string());
  WorkloadSpec spec;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected key=value");
    }
    apply_spec_entry(spec, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return spec;
}

void generate_workload(const WorkloadSpec& spec, std::ostream& os) {
  spec.validate();
  const std::vector<FeatureConfig> features = spec.effective_features();
  const TableCatalog catalog = catalog_from(features);
  const size_t tables = catalog.names.size();
  Rng rng(spec.seed);
  TruncatedLognormal lengths(spec.length.mean, spec.length.max_len, spec.length.sigma);
  std::vector<ZipfSampler> samplers;
  samplers.reserve(tables);
  for (const std::string& name : catalog.names) {
    samplers.emplace_back(spec.vocab_for(name), spec.zipf_exponent);
  }
  os << "# recsparse-workload v1 seed=" << spec.seed << " sequences=" << spec.num_sequences
     << " tables=" << tables << "\n";
  char label_buf[16];
  for (uint64_t sid = 1; sid <= spec.num_sequences; ++sid) {
    const uint64_t len = lengths.sample(rng);
    std::snprintf(label_buf, sizeof(label_buf), "%.4f", rng.next_unit());
    os << sid << '\t' << label_buf << '\t';
    for (uint64_t t = 0; t < len; ++t) {
      const auto ordinal = static_cast<uint32_t>(1 + t % tables);
      const uint64_t raw = samplers[ordinal - 1].sample(rng);
      if (t) os << ' ';
      os << catalog.encode(ordinal, raw);
    }
    os << '\n';
  }
}

void generate_workload_file(const WorkloadSpec& spec, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open workload file for writing: " + path.string());
  generate_workload(spec, os);
  os.flush();
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<SequenceSample> read_workload_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open workload file: " + path.string());
  std::vector<SequenceSample> samples;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SequenceSample s;
    if (!(ls >> s.sample_id >> s.label)) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad record");
    }
    uint64_t id;
    while (ls >> id) s.feature_ids.push_back(id);
    if (s.feature_ids.empty()) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": empty sequence");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

DedupMode AblationToggles::dedup_mode() const {
  if (dedup_stage1 && dedup_stage2) return DedupMode::kTwoStage;
  if (dedup_stage1) return DedupMode::kCommUnique;
  if (dedup_stage2) return DedupMode::kLookupUnique;
  return DedupMode::kNone;
}

void pseudo_sparse_grad(uint64_t sample_id, uint64_t step, std::span<float> out) {
  const uint64_t base =
      hash64(sample_id * 0x9e3779b97f4a7c15ULL + step * 0xbf58476d1ce4e5b9ULL + 1);
  for (size_t e = 0; e < out.size(); ++e) {
    const double u = static_cast<double>(hash64(base + e) >> 11) * 0x1.0p-53;
    out[e] = static_cast<float>((u - 0.5) * 0.1);
  }
}

void pseudo_dense_grad(uint64_t sample_id, uint64_t step, std::span<double> out) {
  const uint64_t base =
      hash64(sample_id * 0xd6e8feb86659fd93ULL + step * 0x2545f4914f6cdd1dULL + 2);
  for (size_t e = 0; e < out.size(); ++e) {
    const double u = static_cast<double>(hash64(base + e) >> 11) * 0x1.0p-53;
    out[e] = (u - 0.5) * 0.1;
  }
}

namespace {

// Pull-based per-worker batch stream: dynamic (token-targeted) or
// fixed-sample-count batches over the worker's round-robin share.
class WorkerStream {
 public:
  WorkerStream(std::span<const SequenceSample> all, std::vector<size_t> indices,
               bool dynamic, uint64_t target_tokens, uint64_t chunk_samples,
               uint64_t fixed_count)
      : all_(all), indices_(std::move(indices)), fixed_count_(fixed_count) {
    if (dynamic) {
      batcher_ = std::make_unique<SequenceBatcher>(
          target_tokens, [this, chunk_samples](std::vector<SequenceSample>& chunk) {
            if (cursor_ >= indices_.size()) return false;
            const size_t end = std::min(indices_.size(), cursor_ + chunk_samples);
            for (; cursor_ < end; ++cursor_) chunk.push_back(all_[indices_[cursor_]]);
            return true;
          });
    }
  }

  std::optional<std::vector<SequenceSample>> next() {
    if (batcher_) return batcher_->next_batch();
    if (cursor_ >= indices_.size()) return std::nullopt;
    std::vector<SequenceSample> batch;
    const size_t end = std::min(indices_.size(), cursor_ + fixed_count_);
    for (; cursor_ < end; ++cursor_) batch.push_back(all_[indices_[cursor_]]);
    return batch;
  }

 private:
  std::span<const SequenceSample> all_;
  std::vector<size_t> indices_;
  uint64_t fixed_count_;
  size_t cursor_ = 0;
  std::unique_ptr<SequenceBatcher> batcher_;
};

struct ClusterSlot {
  std::string label;
  uint32_t dim = 0;
  SimCluster cluster;
  std::vector<GradAccumulator> accumulators;  // one per shard

  ClusterSlot(std::string name, uint32_t d, const WorkloadSpec& spec, DedupMode mode)
      : label(std::move(name)), dim(d), cluster(spec.world_size, shard_config(spec, d), mode) {
    for (uint64_t s = 0; s < spec.world_size; ++s) {
      accumulators.emplace_back(d, spec.accum_steps);
    }
  }

  static TableConfig shard_config(const WorkloadSpec& spec, uint32_t dim) {
    TableConfig cfg = spec.shard_config;
    cfg.embedding_dim = dim;
    return cfg;
  }
};

}  // namespace

RunStats run_workload(const WorkloadSpec& spec, std::span<const SequenceSample> samples,
                      const AblationToggles& toggles, std::ostream* step_records,
                      std::ostream* pair_records) {
  spec.validate();
  const std::vector<FeatureConfig> features = spec.effective_features();
  const TableCatalog catalog = catalog_from(features);
  const MergePlan plan = plan_merge(features);
  const size_t world = spec.world_size;
  const DedupMode mode = toggles.dedup_mode();

  // One cluster per merged group, or one per logical table when merging
  // is off. Each catalog ordinal routes to exactly one cluster.
  std::vector<ClusterSlot> clusters;
  std::vector<size_t> cluster_of_ordinal(catalog.names.size() + 1, 0);
  std::vector<uint32_t> member_index(catalog.names.size() + 1, 0);
  if (toggles.merge) {
    for (size_t g = 0; g < plan.groups.size(); ++g) {
      clusters.emplace_back("group" + std::to_string(g), plan.groups[g].embedding_dim,
                            spec, mode);
    }
    for (uint32_t ord = 1; ord <= catalog.names.size(); ++ord) {
      const std::string& name = catalog.names[ord - 1];
      const size_t g = plan.group_index_for(name);
      cluster_of_ordinal[ord] = g;
      member_index[ord] = plan.groups[g].table_index_of.at(name);
    }
  } else {
    for (uint32_t ord = 1; ord <= catalog.names.size(); ++ord) {
      const std::string& name = catalog.names[ord - 1];
      const uint32_t dim = plan.groups[plan.group_index_for(name)].embedding_dim;
      cluster_of_ordinal[ord] = clusters.size();
      clusters.emplace_back("table_" + name, dim, spec, mode);
    }
  }

  // Round-robin sample partition, one stream per worker.
  std::vector<WorkerStream> streams;
  streams.reserve(world);
  for (size_t w = 0; w < world; ++w) {
    std::vector<size_t> indices;
    for (size_t i = w; i < samples.size(); i += world) indices.push_back(i);
    streams.emplace_back(samples, std::move(indices), toggles.seq_balance,
                         spec.target_tokens(), spec.chunk_samples, spec.batch_size);
  }

  RunStats stats;
  stats.toggles = toggles;
  std::vector<double> dense_param(kDenseDim, 0.0);
  double spread_sum = 0.0;
  uint64_t spread_steps = 0;
  uint64_t ids_received_total = 0;

  std::vector<std::vector<std::vector<uint64_t>>> requests(clusters.size());
  std::vector<std::vector<std::vector<uint64_t>>> grad_ids(clusters.size());
  std::vector<std::vector<std::vector<float>>> grad_rows(clusters.size());
  std::vector<std::vector<float>> sample_grad(clusters.size());
  std::vector<uint64_t> grad_sample(clusters.size());

  for (uint64_t step = 0;; ++step) {
    std::vector<std::optional<std::vector<SequenceSample>>> batches(world);
    bool any = false;
    for (size_t w = 0; w < world; ++w) {
      batches[w] = streams[w].next();
      any = any || batches[w].has_value();
    }
    if (!any) break;

    for (size_t c = 0; c < clusters.size(); ++c) {
      requests[c].assign(world, {});
      grad_ids[c].assign(world, {});
      grad_rows[c].assign(world, {});
      sample_grad[c].assign(clusters[c].dim, 0.0f);
      grad_sample[c] = ~uint64_t{0};
    }
    // grad_ids/grad_rows are grouped per owner shard, not per worker;
    // reuse the same [cluster][world] shape.
    std::vector<uint64_t> worker_tokens(world, 0);
    std::vector<double> worker_compute(world, 0.0);
    size_t active = 0;

    for (size_t w = 0; w < world; ++w) {
      if (!batches[w]) continue;
      ++active;
      for (const SequenceSample& sample : *batches[w]) {
        worker_tokens[w] += sample.token_count();
        worker_compute[w] += spec.cost.sample_compute(sample.token_count());
        for (uint64_t tagged : sample.feature_ids) {
          const auto [ordinal, raw] = catalog.decode(tagged);
          const size_t c = cluster_of_ordinal[ordinal];
          const uint64_t gid =
              toggles.merge ? plan.groups[c].encode_global_id(member_index[ordinal], raw)
                            : tagged;
          requests[c][w].push_back(gid);
          if (grad_sample[c] != sample.sample_id) {
            grad_sample[c] = sample.sample_id;
            pseudo_sparse_grad(sample.sample_id, step, sample_grad[c]);
          }
          const size_t owner = SimCluster::shard_of(gid, world);
          grad_ids[c][owner].push_back(gid);
          grad_rows[c][owner].insert(grad_rows[c][owner].end(), sample_grad[c].begin(),
                                     sample_grad[c].end());
        }
        stats.samples += 1;
        stats.tokens += sample.token_count();
      }
    }

    uint64_t step_bytes = 0;
    uint64_t step_lookups = 0;
    for (size_t c = 0; c < clusters.size(); ++c) {
      LookupResult result = distributed_lookup(clusters[c].cluster, requests[c]);
      const ExchangeTrace& trace = result.trace;
      stats.ids_requested += trace.ids_requested;
      stats.ids_sent += trace.ids_sent_total();
      stats.id_bytes += trace.id_bytes_total();
      stats.emb_vectors += trace.embs_sent_total();
      stats.emb_bytes += trace.emb_bytes_total();
      stats.lookups += trace.lookups_total();
      ids_received_total += trace.ids_received;
      step_bytes += trace.bytes_total();
      step_lookups += trace.lookups_total();
      for (const std::vector<float>& out : result.outputs) {
        for (float x : out) stats.emb_checksum += x;
      }
      if (pair_records) {
        for (size_t src = 0; src < world; ++src) {
          for (size_t dst = 0; dst < world; ++dst) {
            *pair_records << "kind=pair step=" << step << " cluster=" << clusters[c].label
                          << " src=" << src << " dst=" << dst
                          << " stage=ids count=" << trace.ids_sent[src][dst]
                          << " bytes=" << trace.ids_sent[src][dst] * trace.id_bytes << "\n"
                          << "kind=pair step=" << step << " cluster=" << clusters[c].label
                          << " src=" << src << " dst=" << dst
                          << " stage=embs count=" << trace.embs_sent[src][dst]
                          << " bytes=" << trace.embs_sent[src][dst] * trace.emb_bytes
                          << "\n";
          }
        }
      }
      for (size_t s = 0; s < world; ++s) {
        if (!grad_ids[c][s].empty()) {
          clusters[c].accumulators[s].accumulate(grad_ids[c][s], grad_rows[c][s]);
        }
      }
    }
    stats.rounds += clusters.size();

    if ((step + 1) % spec.accum_steps == 0) {
      for (ClusterSlot& slot : clusters) {
        for (size_t s = 0; s < world; ++s) {
          if (slot.accumulators[s].pending_ids() > 0) {
            stats.updated_rows += slot.accumulators[s].apply(slot.cluster.shards[s], spec.adam);
          }
        }
      }
    }

    // Dense side: per-worker per-sample mean gradients, combined with
    // batch-size weights so the update equals the global per-sample mean.
    std::vector<uint64_t> dense_sizes;
    std::vector<std::vector<double>> dense_grads;
    for (size_t w = 0; w < world; ++w) {
      if (!batches[w]) continue;
      std::vector<double> mean(kDenseDim, 0.0);
      std::vector<double> g(kDenseDim);
      for (const SequenceSample& sample : *batches[w]) {
        pseudo_dense_grad(sample.sample_id, step, g);
        for (size_t e = 0; e < kDenseDim; ++e) mean[e] += g[e];
      }
      const double inv = 1.0 / static_cast<double>(batches[w]->size());
      for (double& x : mean) x *= inv;
      dense_sizes.push_back(batches[w]->size());
      dense_grads.push_back(std::move(mean));
    }
    const std::vector<double> combined = weighted_grad_combine(dense_sizes, dense_grads);
    for (size_t e = 0; e < kDenseDim; ++e) dense_param[e] -= kDenseLr * combined[e];

    double compute_max = 0.0;
    for (size_t w = 0; w < world; ++w) compute_max = std::max(compute_max, worker_compute[w]);
    const double step_time =
        spec.cost.step_cost(compute_max, step_bytes, step_lookups, clusters.size());
    stats.sim_time += step_time;
    stats.steps += 1;

    double spread = -1.0;
    if (active == world) {
      spread = imbalance_report(worker_tokens).spread;
      spread_sum += spread;
      ++spread_steps;
    }
    if (step_records) {
      uint64_t step_tokens = 0;
      for (uint64_t t : worker_tokens) step_tokens += t;
      *step_records << "kind=step step=" << step << " active=" << active
                    << " tokens=" << step_tokens << " bytes=" << step_bytes
                    << " time=" << fmt_double(step_time);
      if (spread >= 0) *step_records << " spread=" << fmt_double(spread);
      *step_records << "\n";
    }
  }

  // Flush any gradients still pending after the final step.
  for (ClusterSlot& slot : clusters) {
    for (size_t s = 0; s < world; ++s) {
      if (slot.accumulators[s].pending_ids() > 0) {
        stats.updated_rows += slot.accumulators[s].apply(slot.cluster.shards[s], spec.adam);
      }
    }
  }

  if (stats.samples != samples.size()) {
    throw InvariantError("run_workload: emitted sample count diverged from source");
  }
  stats.stage1_ratio = stats.ids_requested == 0
                           ? 1.0
                           : static_cast<double>(stats.ids_sent) /
                                 static_cast<double>(stats.ids_requested);
  stats.stage2_ratio = ids_received_total == 0
                           ? 1.0
                           : static_cast<double>(stats.lookups) /
                                 static_cast<double>(ids_received_total);
  stats.mean_spread = spread_steps == 0 ? 0.0 : spread_sum / static_cast<double>(spread_steps);
  stats.throughput = stats.sim_time > 0
                         ? static_cast<double>(stats.samples) / stats.sim_time
                         : 0.0;
  for (double x : dense_param) stats.dense_checksum += x;
  return stats;
}

std::vector<RunStats> run_ablation_ladder(const WorkloadSpec& spec,
                                          std::span<const SequenceSample> samples,
                                          std::ostream* step_records) {
  struct Rung {
    const char* label;
    AblationToggles toggles;
  };
  const Rung ladder[] = {
      {"baseline", {false, false, false, false}},
      {"merge", {true, false, false, false}},
      {"merge+dedup1", {true, true, false, false}},
      {"merge+dedup1+dedup2", {true, true, true, false}},
      {"merge+dedup1+dedup2+balance", {true, true, true, true}},
  };
  std::vector<RunStats> results;
  for (const Rung& rung : ladder) {
    RunStats stats = run_workload(spec, samples, rung.toggles, step_records, nullptr);
    stats.label = rung.label;
    results.push_back(std::move(stats));
  }
  return results;
}

std::string run_record_line(const RunStats& s) {
  std::ostringstream os;
  os << "kind=config label=" << s.label << " merge=" << s.toggles.merge
     << " dedup1=" << s.toggles.dedup_stage1 << " dedup2=" << s.toggles.dedup_stage2
     << " balance=" << s.toggles.seq_balance << " steps=" << s.steps
     << " samples=" << s.samples << " tokens=" << s.tokens
     << " ids_requested=" << s.ids_requested << " ids_sent=" << s.ids_sent
     << " id_bytes=" << s.id_bytes << " emb_vectors=" << s.emb_vectors
     << " emb_bytes=" << s.emb_bytes << " bytes_total=" << s.bytes_total()
     << " lookups=" << s.lookups << " rounds=" << s.rounds
     << " updated_rows=" << s.updated_rows << " stage1_ratio=" << fmt_double(s.stage1_ratio)
     << " stage2_ratio=" << fmt_double(s.stage2_ratio)
     << " mean_spread=" << fmt_double(s.mean_spread) << " sim_time=" << fmt_double(s.sim_time)
     << " throughput=" << fmt_double(s.throughput)
     << " emb_checksum=" << fmt_double(s.emb_checksum)
     << " dense_checksum=" << fmt_double(s.dense_checksum);
  return os.str();
}

RunStats parse_run_record(const std::string& line) {
  RunStats s;
  std::istringstream is(line);
  std::string token;
  while (is >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    if (key == "kind") continue;
    else if (key == "label") s.label = value;
    else if (key == "merge") s.toggles.merge = value == "1";
    else if (key == "dedup1") s.toggles.dedup_stage1 = value == "1";
    else if (key == "dedup2") s.toggles.dedup_stage2 = value == "1";
    else if (key == "balance") s.toggles.seq_balance = value == "1";
    else if (key == "steps") s.steps = parse_u64(value, key);
    else if (key == "samples") s.samples = parse_u64(value, key);
    else if (key == "tokens") s.tokens = parse_u64(value, key);
    else if (key == "ids_requested") s.ids_requested = parse_u64(value, key);
    else if (key == "ids_sent") s.ids_sent = parse_u64(value, key);
    else if (key == "id_bytes") s.id_bytes = parse_u64(value, key);
    else if (key == "emb_vectors") s.emb_vectors = parse_u64(value, key);
    else if (key == "emb_bytes") s.emb_bytes = parse_u64(value, key);
    else if (key == "bytes_total") continue;  // derived
    else if (key == "lookups") s.lookups = parse_u64(value, key);
    else if (key == "rounds") s.rounds = parse_u64(value, key);
    else if (key == "updated_rows") s.updated_rows = parse_u64(value, key);
    else if (key == "stage1_ratio") s.stage1_ratio = parse_f64(value, key);
    else if (key == "stage2_ratio") s.stage2_ratio = parse_f64(value, key);
    else if (key == "mean_spread") s.mean_spread = parse_f64(value, key);
    else if (key == "sim_time") s.sim_time = parse_f64(value, key);
    else if (key == "throughput") s.throughput = parse_f64(value, key);
    else if (key == "emb_checksum") s.emb_checksum = parse_f64(value, key);
    else if (key == "dense_checksum") s.dense_checksum = parse_f64(value, key);
  }
  return s;
}

std::vector<RunStats> read_run_records(std::istream& is) {
  std::vector<RunStats> runs;
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("kind=config", 0) == 0) runs.push_back(parse_run_record(line));
  }
  return runs;
}

std::string format_report_table(std::span<const RunStats> runs) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-30s %14s %14s %8s %8s %10s %12s\n", "config",
                "bytes_total", "emb_bytes", "stage1", "stage2", "spread", "throughput");
  os << buf;
  for (const RunStats& s : runs) {
    std::snprintf(buf, sizeof(buf), "%-30s %14llu %14llu %8.3f %8.3f %10.4f %12.4f\n",
                  s.label.c_str(), static_cast<unsigned long long>(s.bytes_total()),
                  static_cast<unsigned long long>(s.emb_bytes), s.stage1_ratio,
                  s.stage2_ratio, s.mean_spread, s.throughput);
    os << buf;
  }
  return os.str();
}

}  // namespace recsparse
