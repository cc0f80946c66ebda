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

// rollback_cli: dataset generation, pre-training, strategy runs, evaluation
// and ablation sweeps.
//
//   rollback_cli gen      [--config F] [--out DIR] [--seed N]
//   rollback_cli pretrain [--config F] [--out DIR] [--seed N]
//   rollback_cli run      [--config F] --strategy S [--seed N] [--out DIR]
//                         [--periods M] [--epochs-per-period E]
//   rollback_cli eval     [--config F] --checkpoint CKPT [--flip-fusion BOOL]
//   rollback_cli ablation [--config F] [--out DIR]
//   rollback_cli describe FILE
//
// Any config key can also be given as --set key=value. Failures print one
// line "error: <kind>: <message>" on stderr and exit nonzero.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

using rollback::cli::Config;

struct Flags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::string> strategy, out, checkpoint, flip_fusion;
  std::optional<std::size_t> seed, periods, epochs_per_period;
  std::string describe_path;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "flat key = value config file");
  cmd->add_option("--set", f.sets, "override a config key (key=value); repeatable");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "seed");
}

void add_training(CLI::App* cmd, Flags& f) {
  cmd->add_option("--strategy", f.strategy, "rollback | baseline | base_cy | fc_warmup | remain_block=i");
  cmd->add_option("--periods", f.periods, "periods M");
  cmd->add_option("--epochs-per-period", f.epochs_per_period, "epochs per period E");
  cmd->add_option("--flip-fusion", f.flip_fusion, "fuse flipped features at evaluation (true/false)");
}

Config build_config(const std::string& command, const Flags& f) {
  Config c;
  if (!f.config_path.empty()) c.merge_file(f.config_path);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw rollback::ValidationError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.out) c.set(command == "gen" ? "data.dir" : "run.out", *f.out);
  if (f.seed) c.set(command == "gen" ? "data.seed" : "train.seed", std::to_string(*f.seed));
  if (f.strategy) c.set("strategy.name", *f.strategy);
  if (f.periods) c.set("strategy.periods", std::to_string(*f.periods));
  if (f.epochs_per_period) c.set("strategy.epochs_per_period", std::to_string(*f.epochs_per_period));
  if (f.flip_fusion) c.set("train.flip_fusion", *f.flip_fusion);
  if (f.checkpoint) c.set("eval.checkpoint", *f.checkpoint);
  return c;
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rollback refine-tuning experiments"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen", "generate the synthetic datasets");
  add_common(gen, f);
  auto* pre = app.add_subcommand("pretrain", "pre-train on the source classes");
  add_common(pre, f);
  auto* run = app.add_subcommand("run", "run one strategy on the target task");
  add_common(run, f);
  add_training(run, f);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on query/gallery");
  add_common(eval, f);
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint file");
  eval->add_option("--flip-fusion", f.flip_fusion, "fuse flipped features (true/false)");
  auto* abl = app.add_subcommand("ablation", "per-period results over seeds and strategies");
  add_common(abl, f);
  add_training(abl, f);
  auto* desc = app.add_subcommand("describe", "print header metadata of a dataset or checkpoint");
  desc->add_option("file", f.describe_path, "dataset (.rbds) or checkpoint (.rbck)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (desc->parsed()) {
      rollback::cli::cmd_describe(f.describe_path, std::cout);
      return 0;
    }
    const std::string name = app.get_subcommands().front()->get_name();
    const Config config = build_config(name, f);
    if (name == "gen") rollback::cli::cmd_gen(config, std::cout);
    if (name == "pretrain") rollback::cli::cmd_pretrain(config, std::cout);
    if (name == "run") rollback::cli::cmd_run(config, std::cout);
    if (name == "eval") rollback::cli::cmd_eval(config, std::cout);
    if (name == "ablation") rollback::cli::cmd_ablation(config, std::cout);
  } catch (const rollback::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
