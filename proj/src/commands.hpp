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

#pragma once

#include <ostream>
#include <string>

#include "config.hpp"

namespace rollback::cli {

// Every command writes its artifacts under run.out (gen: data.dir), prints a
// short summary to `out` and throws rollback::Error on failure.

/// source.rbds, train.rbds, query.rbds, gallery.rbds and manifest.txt.
void cmd_gen(const Config& config, std::ostream& out);

/// pretrained.rbck, pretrain_log.csv, manifest.txt.
void cmd_pretrain(const Config& config, std::ostream& out);

/// schedule.txt, train_log.csv, checkpoints/period<p>_{pre,post}.rbck,
/// final.rbck, report.csv, per_query_ap.csv, manifest.txt.
void cmd_run(const Config& config, std::ostream& out);

/// report.csv (and per_query_ap.csv) for eval.checkpoint on the query and
/// gallery splits of data.dir.
void cmd_eval(const Config& config, std::ostream& out);

/// ablation_runs.csv (one row per strategy, seed and period) and
/// ablation.csv (mean and std over seeds).
void cmd_ablation(const Config& config, std::ostream& out);

/// Header metadata of a dataset or checkpoint file.
void cmd_describe(const std::string& path, std::ostream& out);

}  // namespace rollback::cli
