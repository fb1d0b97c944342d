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

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <map>

#include "recsparse/checkpoint.hpp"
#include "recsparse/workload.hpp"

namespace {

using namespace recsparse;

struct SpecFlags {
  std::string config_file;
  std::vector<std::string> direct;  // key=value pairs captured from named flags
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "flat key=value config file");
    auto mirror = [this, cmd](const std::string& flag, const std::string& key,
                              const std::string& help) {
      cmd->add_option_function<std::string>(
          flag, [this, key](const std::string& v) { direct.push_back(key + "=" + v); },
          help);
    };
    mirror("--seed", "seed", "RNG seed");
    mirror("--sequences", "sequences", "number of sequences");
    mirror("--mean-len", "mean_len", "mean sequence length");
    mirror("--max-len", "max_len", "maximum sequence length");
    mirror("--sigma", "sigma", "length distribution shape");
    mirror("--zipf", "zipf", "id distribution exponent");
    mirror("--vocab", "vocab", "vocabulary size per logical table");
    mirror("--world", "world", "simulated worker count");
    mirror("--batch-size", "batch_size", "samples per batch (token target = batch * mean)");
    mirror("--accum-steps", "accum_steps", "gradient accumulation window");
    cmd->add_option("--set", overrides,
                    "override any config key, e.g. --set byte_cost=2e-4");
  }

  WorkloadSpec build() const {
    WorkloadSpec spec;
    if (!config_file.empty()) spec = load_spec_file(config_file);
    for (const std::vector<std::string>* source : {&direct, &overrides}) {
      for (const std::string& kv : *source) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set wants key=value, got " + kv);
        apply_spec_entry(spec, kv.substr(0, eq), kv.substr(eq + 1));
      }
    }
    spec.validate();
    return spec;
  }
};

int cmd_generate(const SpecFlags& flags, const std::string& out) {
  const WorkloadSpec spec = flags.build();
  generate_workload_file(spec, out);
  std::cout << "wrote " << out << " (" << spec.num_sequences << " sequences, seed "
            << spec.seed << ")\n";
  return 0;
}

AblationToggles toggles_from(bool no_merge, bool no_dedup1, bool no_dedup2, bool no_balance) {
  AblationToggles t;
  t.merge = !no_merge;
  t.dedup_stage1 = !no_dedup1;
  t.dedup_stage2 = !no_dedup2;
  t.seq_balance = !no_balance;
  return t;
}

int cmd_run(const SpecFlags& flags, const std::string& workload_file,
            const std::string& records_file, const std::string& trace_file,
            const AblationToggles& toggles) {
  const WorkloadSpec spec = flags.build();
  const std::vector<SequenceSample> samples = read_workload_file(workload_file);

  std::ofstream records;
  std::ofstream trace;
  std::ostream* step_os = nullptr;
  std::ostream* pair_os = nullptr;
  if (!records_file.empty()) {
    records.open(records_file, std::ios::trunc);
    if (!records) throw IoError("cannot open records file: " + records_file);
    step_os = &records;
  }
  if (!trace_file.empty()) {
    trace.open(trace_file, std::ios::trunc);
    if (!trace) throw IoError("cannot open trace file: " + trace_file);
    pair_os = &trace;
  }
  RunStats stats = run_workload(spec, samples, toggles, step_os, pair_os);
  stats.label = "run";
  if (step_os) *step_os << run_record_line(stats) << "\n";
  std::cout << format_report_table(std::span<const RunStats>(&stats, 1));
  return 0;
}

int cmd_ablate(const SpecFlags& flags, const std::string& workload_file,
               const std::string& records_file, const std::string& report_file) {
  const WorkloadSpec spec = flags.build();
  const std::vector<SequenceSample> samples = read_workload_file(workload_file);

  std::ofstream records;
  std::ostream* step_os = nullptr;
  if (!records_file.empty()) {
    records.open(records_file, std::ios::trunc);
    if (!records) throw IoError("cannot open records file: " + records_file);
    step_os = &records;
  }
  const std::vector<RunStats> runs = run_ablation_ladder(spec, samples, step_os);
  if (step_os) {
    for (const RunStats& s : runs) *step_os << run_record_line(s) << "\n";
  }
  const std::string table = format_report_table(runs);
  std::cout << table;
  if (!report_file.empty()) {
    std::ofstream report(report_file, std::ios::trunc);
    if (!report) throw IoError("cannot open report file: " + report_file);
    report << table;
  }
  return 0;
}

int cmd_report(const std::string& records_file, const std::string& out_file) {
  std::ifstream is(records_file);
  if (!is) throw IoError("cannot open records file: " + records_file);
  std::vector<RunStats> runs;
  uint64_t pair_id_bytes = 0, pair_emb_bytes = 0, pair_lines = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("kind=config", 0) == 0) {
      runs.push_back(parse_run_record(line));
    } else if (line.rfind("kind=pair", 0) == 0) {
      // Per-direction traffic record: pick out stage and bytes.
      const bool ids = line.find("stage=ids") != std::string::npos;
      const auto pos = line.rfind("bytes=");
      if (pos != std::string::npos) {
        const uint64_t bytes = std::stoull(line.substr(pos + 6));
        (ids ? pair_id_bytes : pair_emb_bytes) += bytes;
        ++pair_lines;
      }
    }
  }
  std::ostringstream out;
  out << format_report_table(runs);
  if (pair_lines > 0) {
    out << "traffic records: " << pair_lines << " directions, id bytes " << pair_id_bytes
        << ", embedding bytes " << pair_emb_bytes << "\n";
  }
  std::cout << out.str();
  if (!out_file.empty()) {
    std::ofstream os(out_file, std::ios::trunc);
    if (!os) throw IoError("cannot open report output: " + out_file);
    os << out.str();
  }
  return 0;
}

// Populates a single-group cluster from the workload, saves it, reloads at
// a different world size, and verifies that the entry multiset and the new
// ownership are exact. At unchanged world size the re-saved files must be
// byte-identical.
int cmd_ckpt_roundtrip(const SpecFlags& flags, const std::string& workload_file,
                       const std::string& dir, uint32_t load_world) {
  const WorkloadSpec spec = flags.build();
  const std::vector<SequenceSample> samples = read_workload_file(workload_file);
  const std::vector<FeatureConfig> features = spec.effective_features();
  const TableCatalog catalog = catalog_from(features);
  const MergePlan plan = plan_merge(features);
  const auto save_world = static_cast<uint32_t>(spec.world_size);
  const uint32_t new_world = load_world == 0 ? save_world : load_world;

  // Fill shards for merge group 0 via the distributed lookup (vivifies
  // rows), then one optimizer pass so aux state is non-trivial.
  TableConfig shard_cfg = spec.shard_config;
  shard_cfg.embedding_dim = plan.groups[0].embedding_dim;
  SimCluster cluster(save_world, shard_cfg);
  std::vector<std::vector<uint64_t>> requests(save_world);
  std::vector<GradAccumulator> accumulators(
      save_world, GradAccumulator(plan.groups[0].embedding_dim, 1));
  std::vector<float> grad(plan.groups[0].embedding_dim);
  for (size_t i = 0; i < samples.size(); ++i) {
    const SequenceSample& sample = samples[i];
    pseudo_sparse_grad(sample.sample_id, 0, grad);
    for (uint64_t tagged : sample.feature_ids) {
      const auto [ordinal, raw] = catalog.decode(tagged);
      const std::string& name = catalog.names[ordinal - 1];
      if (plan.group_index_for(name) != 0) continue;
      const uint64_t gid =
          plan.groups[0].encode_global_id(plan.groups[0].table_index_of.at(name), raw);
      requests[i % save_world].push_back(gid);
      accumulators[SimCluster::shard_of(gid, save_world)].accumulate(
          std::span<const uint64_t>(&gid, 1), grad);
    }
  }
  distributed_lookup(cluster, requests);
  for (uint32_t s = 0; s < save_world; ++s) {
    accumulators[s].apply(cluster.shards[s], spec.adam);
  }

  const std::vector<std::filesystem::path> files = save_cluster(cluster, dir);
  std::cout << "saved " << files.size() << " shard files under " << dir << "\n";

  SimCluster reloaded = load_cluster(dir, save_world, new_world, shard_cfg);

  // Entry multiset comparison over (id, embedding, aux), plus ownership.
  using Entry = std::vector<float>;
  std::map<uint64_t, Entry> before, after;
  auto collect = [](const SimCluster& c, std::map<uint64_t, Entry>& into) {
    for (size_t r = 0; r < c.world_size; ++r) {
      const EmbedTable& t = c.shards[r];
      t.for_each_occupied([&](uint64_t, uint64_t key, RowHandle h) {
        Entry e;
        auto emb = t.embedding(h);
        auto m = t.opt_m(h);
        auto v = t.opt_v(h);
        e.insert(e.end(), emb.begin(), emb.end());
        e.insert(e.end(), m.begin(), m.end());
        e.insert(e.end(), v.begin(), v.end());
        e.push_back(static_cast<float>(t.opt_step(h)));
        e.push_back(static_cast<float>(t.row_timestamp(h)));
        if (!into.emplace(key, std::move(e)).second) {
          throw InvariantError("duplicate id across shards: " + std::to_string(key));
        }
      });
    }
  };
  collect(cluster, before);
  collect(reloaded, after);
  if (before != after) throw InvariantError("reload changed the entry multiset");
  for (size_t r = 0; r < reloaded.world_size; ++r) {
    reloaded.shards[r].for_each_occupied([&](uint64_t, uint64_t key, RowHandle) {
      if (SimCluster::shard_of(key, new_world) != r) {
        throw InvariantError("entry " + std::to_string(key) + " on wrong shard");
      }
    });
  }
  std::cout << "reload " << save_world << " -> " << new_world << ": " << before.size()
            << " entries preserved, ownership correct\n";

  if (new_world == save_world) {
    const std::filesystem::path second = std::filesystem::path(dir) / "resave";
    const auto second_files = save_cluster(reloaded, second);
    for (size_t r = 0; r < files.size(); ++r) {
      std::ifstream a(files[r], std::ios::binary);
      std::ifstream b(second_files[r], std::ios::binary);
      const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
      const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
      if (bytes_a != bytes_b) {
        throw InvariantError("re-saved shard " + std::to_string(r) + " is not byte-identical");
      }
    }
    std::cout << "same-world re-save is byte-identical\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-side training machinery: workload generator, step-loop driver, "
               "ablation runner, checkpoint verifier"};
  app.require_subcommand(1);

  SpecFlags gen_flags, run_flags, ablate_flags, ckpt_flags;
  std::string out_file, workload_file, records_file, trace_file, report_file, ckpt_dir;
  uint32_t load_world = 0;
  bool no_merge = false, no_dedup1 = false, no_dedup2 = false, no_balance = false;

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic workload file");
  gen_flags.attach(generate);
  generate->add_option("--out", out_file, "output workload file")->required();

  CLI::App* run = app.add_subcommand("run", "run the step loop on one configuration");
  run_flags.attach(run);
  run->add_option("--workload", workload_file, "workload file")->required();
  run->add_option("--records", records_file, "line-delimited step/config records");
  run->add_option("--trace", trace_file, "per-direction traffic records");
  run->add_flag("--no-merge", no_merge, "disable table merging");
  run->add_flag("--no-dedup1", no_dedup1, "disable send-side id dedup");
  run->add_flag("--no-dedup2", no_dedup2, "disable receive-side id dedup");
  run->add_flag("--no-balance", no_balance, "use fixed-count batching");

  CLI::App* ablate = app.add_subcommand("ablate", "run the incremental toggle ladder");
  ablate_flags.attach(ablate);
  ablate->add_option("--workload", workload_file, "workload file")->required();
  ablate->add_option("--records", records_file, "line-delimited records output");
  ablate->add_option("--report", report_file, "write the report table here too");

  CLI::App* report = app.add_subcommand("report", "format a records file as a table");
  report->add_option("--records", records_file, "records file from run/ablate")->required();
  report->add_option("--out", report_file, "write the table here too");

  CLI::App* ckpt = app.add_subcommand("ckpt-roundtrip",
                                      "save, elastically reload, and verify a checkpoint");
  ckpt_flags.attach(ckpt);
  ckpt->add_option("--workload", workload_file, "workload file")->required();
  ckpt->add_option("--dir", ckpt_dir, "checkpoint directory")->required();
  ckpt->add_option("--load-world", load_world, "world size to reload at (default: same)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(gen_flags, out_file);
    if (run->parsed()) {
      return cmd_run(run_flags, workload_file, records_file, trace_file,
                     toggles_from(no_merge, no_dedup1, no_dedup2, no_balance));
    }
    if (ablate->parsed()) return cmd_ablate(ablate_flags, workload_file, records_file, report_file);
    if (report->parsed()) return cmd_report(records_file, report_file);
    if (ckpt->parsed()) return cmd_ckpt_roundtrip(ckpt_flags, workload_file, ckpt_dir, load_world);
  } catch (const InvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
