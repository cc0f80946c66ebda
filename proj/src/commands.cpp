// Copyright 2026 The Rollback Authors
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

#include "commands.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "rollback/checkpoint.hpp"
#include "rollback/metrics.hpp"
#include "rollback/trainer.hpp"

namespace rollback::cli {
namespace fs = std::filesystem;
namespace {

using Real = float;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

fs::path make_dir(const std::string& dir) {
  if (dir.empty()) throw ValidationError("output directory is empty");
  fs::create_directories(dir);
  return fs::path(dir);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + p.string() + "' for writing");
  return os;
}

/// key = value lines, then the effective configuration.
class Manifest {
 public:
  Manifest(const std::string& command, const Config& config) : config_(config) {
    add("command", command);
    add("config_hash", config.hash());
    add("started", utc_now());
  }
  void add(const std::string& key, const std::string& value) { lines_.emplace_back(key, value); }
  void artifact(const std::string& name, const fs::path& p) { add("artifact." + name, p.string()); }
  void write(const fs::path& dir) {
    add("finished", utc_now());
    auto os = open_out(dir / "manifest.txt");
    for (const auto& [k, v] : lines_) os << k << " = " << v << '\n';
    os << "[config]\n" << config_.effective();
    if (!os) throw Error("manifest write failed");
  }

 private:
  const Config& config_;
  std::vector<std::pair<std::string, std::string>> lines_;
};

struct Target {
  ImageSet<Real> train, query, gallery;
};

Dataset load_split(const Config& config, const std::string& name) {
  const fs::path p = fs::path(config.get_string("data.dir")) / (name + ".rbds");
  if (!fs::exists(p)) throw Error("missing dataset file '" + p.string() + "' (run 'gen' first)");
  return load_dataset(p.string());
}

Target load_target(const Config& config) {
  return {to_image_set<Real>(load_split(config, "train")), to_image_set<Real>(load_split(config, "query")),
          to_image_set<Real>(load_split(config, "gallery"))};
}

std::size_t label_count(const ImageSet<Real>& set) {
  int top = -1;
  for (int y : set.labels) top = std::max(top, y);
  return static_cast<std::size_t>(top + 1);
}

/// Pre-trained blocks with a fresh classifier for the target label space.
NetworkParams<Real> target_network(const NetworkParams<Real>& pretrained, const ImageSet<Real>& train,
                                   std::uint64_t seed) {
  NetworkParams<Real> params = pretrained;
  reset_classifier(params, label_count(train), seed);
  return params;
}

NetworkParams<Real> load_pretrained(const Config& config) {
  const std::string path = config.get_string("run.pretrained");
  if (path.empty()) throw ValidationError("run.pretrained is not set (run 'pretrain' first)");
  return load_checkpoint<Real>(path);
}

struct RunResult {
  TrainLog log;
  NetworkParams<Real> params;
  RetrievalReport report;
};

/// One strategy run. With `checkpoint_dir` set, parameters and optimizer
/// state are saved before and after every period boundary.
RunResult run_strategy(const NetworkParams<Real>& start, const Strategy& strategy, const TrainConfig& tc,
                       const Target& data, const fs::path* checkpoint_dir, bool eval_at_period_end) {
  RunResult r{{}, start, {}};
  const auto plans = build_schedule(strategy, r.params.num_blocks());
  const auto snap = snapshot(r.params);
  TrainHooks<Real> hooks;
  hooks.query = &data.query;
  hooks.gallery = &data.gallery;
  if (checkpoint_dir) {
    hooks.on_boundary = [checkpoint_dir](const PeriodPlan& plan, BoundaryStage stage, const NetworkParams<Real>& p,
                                         const NesterovSgd<Real>& opt) {
      const std::string name = "period" + std::to_string(plan.index) +
                               (stage == BoundaryStage::kBefore ? "_pre" : "_post") + ".rbck";
      save_checkpoint((*checkpoint_dir / name).string(), p, &opt);
    };
  }
  TrainConfig config = tc;
  config.eval_at_period_end = eval_at_period_end;
  r.log = run(r.params, data.train, plans, snap, config, hooks);
  r.report = evaluate(r.params, data.query, data.gallery, tc.flip_fusion);
  return r;
}

void write_report(const fs::path& dir, const RetrievalReport& report, const std::vector<int>& query_labels,
                  Manifest& manifest) {
  {
    auto os = open_out(dir / "report.csv");
    write_report_csv(os, report);
  }
  {
    auto os = open_out(dir / "per_query_ap.csv");
    write_per_query_ap_csv(os, report, query_labels);
  }
  manifest.artifact("report", dir / "report.csv");
  manifest.artifact("per_query_ap", dir / "per_query_ap.csv");
}

void print_report(std::ostream& out, const RetrievalReport& r) {
  out << "mAP " << fixed(r.map(), 4);
  for (std::size_t i = 0; i < r.cmc.ranks.size(); ++i)
    out << "  rank-" << r.cmc.ranks[i] << ' ' << fixed(r.cmc.values[i], 4);
  out << '\n';
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

}  // namespace

void cmd_gen(const Config& config, std::ostream& out) {
  const DatasetSpec spec = config.dataset_spec();
  const fs::path dir = make_dir(config.get_string("data.dir"));
  Manifest manifest("gen", config);
  manifest.add("seed", std::to_string(spec.seed));
  const SyntheticData data = generate(spec);
  for (const Dataset* d : {&data.source, &data.train, &data.query, &data.gallery}) {
    const fs::path p = dir / (d->name + ".rbds");
    save_dataset(p.string(), *d);
    manifest.artifact(d->name, p);
    out << d->name << ": " << d->samples.size() << " samples, " << d->identities().size() << " identities -> "
        << p.string() << '\n';
  }
  manifest.write(dir);
}

void cmd_pretrain(const Config& config, std::ostream& out) {
  const PretrainConfig pc = config.pretrain();
  const NetworkConfig net = config.network();
  const auto source = to_image_set<Real>(load_split(config, "source"));
  const fs::path dir = make_dir(config.get_string("run.out"));
  Manifest manifest("pretrain", config);
  manifest.add("seed", std::to_string(pc.train.seed));
  PretrainResult result;
  const NetworkParams<Real> params = pretrain<Real>(net, source, pc, &result);
  save_checkpoint((dir / "pretrained.rbck").string(), params);
  {
    auto os = open_out(dir / "pretrain_log.csv");
    result.log.write_csv(os);
  }
  manifest.add("holdout_accuracy", fixed(result.holdout_accuracy));
  manifest.add("checkpoint_hash", std::to_string(params_fingerprint(params)));
  manifest.artifact("checkpoint", dir / "pretrained.rbck");
  manifest.artifact("log", dir / "pretrain_log.csv");
  manifest.write(dir);
  out << "pretrained " << pc.epochs << " epochs on " << source.size() << " samples, held-out accuracy "
      << fixed(result.holdout_accuracy, 4) << " -> " << (dir / "pretrained.rbck").string() << '\n';
}

void cmd_run(const Config& config, std::ostream& out) {
  const Strategy strategy = config.strategy();
  const TrainConfig tc = config.train();
  const Target data = load_target(config);
  const auto start = target_network(load_pretrained(config), data.train, tc.seed);
  const fs::path dir = make_dir(config.get_string("run.out"));
  const fs::path ckpt = dir / "checkpoints";
  fs::create_directories(ckpt);

  Manifest manifest("run", config);
  manifest.add("strategy", strategy.name());
  manifest.add("seed", std::to_string(tc.seed));
  const auto plans = build_schedule(strategy, start.num_blocks());
  {
    auto os = open_out(dir / "schedule.txt");
    os << schedule_manifest(plans);
  }
  for (const auto& plan : plans) manifest.add("period." + std::to_string(plan.index), "retained=" + retained_label(plan));

  const RunResult r = run_strategy(start, strategy, tc, data, &ckpt, true);
  save_checkpoint((dir / "final.rbck").string(), r.params);
  {
    auto os = open_out(dir / "train_log.csv");
    r.log.write_csv(os);
  }
  write_report(dir, r.report, data.query.labels, manifest);
  manifest.add("final_map", fixed(r.report.map()));
  manifest.add("final_rank1", fixed(r.report.rank1()));
  manifest.add("checkpoint_hash", std::to_string(params_fingerprint(r.params)));
  manifest.artifact("schedule", dir / "schedule.txt");
  manifest.artifact("log", dir / "train_log.csv");
  manifest.artifact("checkpoints", ckpt);
  manifest.artifact("final", dir / "final.rbck");
  manifest.write(dir);
  out << strategy.name() << ": " << r.log.records.size() << " epochs in " << fixed(r.log.wall_seconds, 1) << " s\n";
  print_report(out, r.report);
}

void cmd_eval(const Config& config, std::ostream& out) {
  const std::string path = config.get_string("eval.checkpoint");
  if (path.empty()) throw ValidationError("eval.checkpoint is not set");
  const auto params = load_checkpoint<Real>(path);
  const auto query = to_image_set<Real>(load_split(config, "query"));
  const auto gallery = to_image_set<Real>(load_split(config, "gallery"));
  const bool fusion = config.get_bool("train.flip_fusion");
  const auto report = evaluate(params, query, gallery, fusion);
  const fs::path dir = make_dir(config.get_string("run.out"));
  Manifest manifest("eval", config);
  manifest.add("checkpoint", path);
  manifest.add("flip_fusion", fusion ? "true" : "false");
  write_report(dir, report, query.labels, manifest);
  manifest.write(dir);
  print_report(out, report);
}

void cmd_ablation(const Config& config, std::ostream& out) {
  const TrainConfig base_tc = config.train();
  const Target data = load_target(config);
  const auto seeds = config.get_sizes("ablation.seeds");
  const auto names = config.get_strings("ablation.strategies");
  std::vector<Strategy> strategies;
  for (const auto& n : names) strategies.push_back(config.strategy(n));
  const fs::path dir = make_dir(config.get_string("run.out"));
  Manifest manifest("ablation", config);

  std::optional<NetworkParams<Real>> shared;
  std::optional<ImageSet<Real>> source;
  if (!config.get_string("run.pretrained").empty()) {
    shared = load_pretrained(config);
  } else {
    source = to_image_set<Real>(load_split(config, "source"));
  }

  struct Row {
    std::string strategy;
    std::size_t seed, period, epoch;
    std::string retained;
    double map, rank1;
  };
  std::vector<Row> rows;
  for (auto seed : seeds) {
    TrainConfig tc = base_tc;
    tc.seed = seed;
    NetworkParams<Real> pretrained;
    if (shared) {
      pretrained = *shared;
    } else {
      PretrainConfig pc = config.pretrain();
      pc.train.seed = seed;
      pretrained = pretrain<Real>(config.network(), *source, pc);
    }
    const auto start = target_network(pretrained, data.train, seed);
    for (const auto& s : strategies) {
      const auto plans = build_schedule(s, start.num_blocks());
      const RunResult r = run_strategy(start, s, tc, data, nullptr, true);
      for (const auto& plan : plans) {
        const auto recs = r.log.period(plan.index);
        if (recs.empty() || !recs.back().map) continue;
        rows.push_back({s.name(), seed, plan.index, recs.back().epoch, retained_label(plan), *recs.back().map,
                        *recs.back().rank1});
      }
      out << "seed " << seed << ' ' << s.name() << ": final mAP " << fixed(r.report.map(), 4) << '\n';
    }
  }

  {
    auto os = open_out(dir / "ablation_runs.csv");
    os << "strategy,seed,period,epoch,retained,map,rank1\n";
    for (const auto& r : rows)
      os << r.strategy << ',' << r.seed << ',' << r.period << ',' << r.epoch << ',' << r.retained << ','
         << fixed(r.map) << ',' << fixed(r.rank1) << '\n';
  }
  // Aggregate over seeds, keeping strategy order then period order.
  std::vector<std::pair<std::string, std::size_t>> keys;
  std::map<std::pair<std::string, std::size_t>, std::vector<const Row*>> groups;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.strategy, r.period);
    if (!groups.contains(key)) keys.push_back(key);
    groups[key].push_back(&r);
  }
  {
    auto os = open_out(dir / "ablation.csv");
    os << "strategy,period,retained,seeds,map_mean,map_std,rank1_mean,rank1_std\n";
    out << "strategy        period retained        mAP              rank-1\n";
    for (const auto& key : keys) {
      const auto& g = groups[key];
      std::vector<double> maps, r1s;
      for (const Row* r : g) {
        maps.push_back(r->map);
        r1s.push_back(r->rank1);
      }
      const auto [mm, ms] = mean_std(maps);
      const auto [rm, rs] = mean_std(r1s);
      os << key.first << ',' << key.second << ',' << g.front()->retained << ',' << g.size() << ',' << fixed(mm)
         << ',' << fixed(ms) << ',' << fixed(rm) << ',' << fixed(rs) << '\n';
      char line[160];
      std::snprintf(line, sizeof line, "%-15s %6zu %-15s %.4f +- %.4f  %.4f +- %.4f\n", key.first.c_str(),
                    key.second, g.front()->retained.c_str(), mm, ms, rm, rs);
      out << line;
    }
  }
  manifest.add("seeds", config.raw("ablation.seeds"));
  manifest.add("strategies", config.raw("ablation.strategies"));
  manifest.artifact("runs", dir / "ablation_runs.csv");
  manifest.artifact("summary", dir / "ablation.csv");
  manifest.write(dir);
}

void cmd_describe(const std::string& path, std::ostream& out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "' for reading");
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (is.gcount() != 4) throw FormatError("truncated input reading magic at offset " + std::to_string(is.gcount()));
  is.seekg(0);
  if (magic == kDatasetMagic) {
    io::Reader r(is);
    const DatasetHeader h = read_dataset_header(r);
    out << "kind = dataset\nversion = " << h.version << "\nname = " << h.name
        << "\nimage_shape = " << shape_str(h.image_shape) << "\nsamples = " << h.total << "\ntrain = " << h.train
        << "\nquery = " << h.query << "\ngallery = " << h.gallery << '\n';
    return;
  }
  if (magic == kContainerMagic) {
    const Container c = read_container(is);
    std::size_t values = 0;
    for (const auto& e : c.entries) values += e.values.size();
    out << "kind = container\nversion = " << kContainerVersion << "\nentries = " << c.entries.size()
        << "\nvalues = " << values << '\n';
    for (const auto& [k, v] : c.meta)
      if (!k.starts_with("opt.")) out << k << " = " << v << '\n';
    return;
  }
  throw FormatError("bad magic at offset 0: not a dataset or checkpoint file");
}

}  // namespace rollback::cli
