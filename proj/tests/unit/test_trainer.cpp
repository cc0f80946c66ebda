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

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "rollback/trainer.hpp"

namespace rollback {
namespace {

DatasetSpec tiny_spec() {
  DatasetSpec s;
  s.source_classes = 6;
  s.source_samples_per_class = 10;
  s.train_ids = 5;
  s.train_samples_per_id = 6;
  s.test_ids = 4;
  s.query_per_id = 1;
  s.gallery_per_id = 3;
  s.height = 16;
  s.width = 8;
  s.shift_range = 1;
  return s;
}

NetworkConfig tiny_network() {
  NetworkConfig c;
  c.widths = {4, 4, 8, 8, 8};
  c.input = {1, 16, 8};
  c.embedding_width = 8;
  c.num_classes = 5;
  return c;
}

struct Fixture {
  SyntheticData data = generate(tiny_spec());
  ImageSet<float> train = to_image_set<float>(data.train);
  ImageSet<float> query = to_image_set<float>(data.query);
  ImageSet<float> gallery = to_image_set<float>(data.gallery);
};

Strategy short_strategy(const std::string& name, std::size_t E = 2) {
  Strategy s = Strategy::parse(name);
  s.periods = 3;
  s.epochs_per_period = E;
  s.decay_every = 1;
  s.warmup_epochs = 1;
  return s;
}

TrainConfig small_batches() {
  TrainConfig c;
  c.batch_size = 8;
  return c;
}

TEST(Run, BaselineSmoke) {
  Fixture f;
  auto params = build_network<float>(tiny_network(), 1);
  const auto before = params_fingerprint(params);
  Strategy s = short_strategy("baseline", 1);
  s.periods = 1;
  const auto snap = snapshot(params);
  const auto log = run(params, f.train, build_schedule(s, 5), snap, small_batches());
  ASSERT_EQ(log.records.size(), 1u);
  EXPECT_TRUE(std::isfinite(log.records[0].loss));
  EXPECT_GT(log.records[0].loss, 0.0);
  EXPECT_NE(params_fingerprint(params), before);
  EXPECT_EQ(log.groups, (std::vector<std::string>{"Block1", "Block2", "Block3", "Block4", "Block5", "FC"}));
}

TEST(Run, DeterministicForEveryStrategy) {
  Fixture f;
  for (const char* name : {"rollback", "baseline", "base_cy", "fc_warmup", "remain_block=2"}) {
    auto once = [&] {
      auto params = build_network<float>(tiny_network(), 2);
      const auto snap = snapshot(params);
      TrainConfig c = small_batches();
      c.eval_every = 2;
      TrainHooks<float> hooks;
      hooks.query = &f.query;
      hooks.gallery = &f.gallery;
      auto log = run(params, f.train, build_schedule(short_strategy(name), 5), snap, c, hooks);
      std::ostringstream csv;
      log.write_csv(csv);
      return std::make_pair(csv.str(), params_fingerprint(params));
    };
    const auto a = once(), b = once();
    EXPECT_EQ(a.first, b.first) << name;
    EXPECT_EQ(a.second, b.second) << name;
  }
}

TEST(Run, EpochsAreStrictlyIncreasing) {
  Fixture f;
  auto params = build_network<float>(tiny_network(), 3);
  const auto snap = snapshot(params);
  const auto log = run(params, f.train, build_schedule(short_strategy("rollback"), 5), snap, small_batches());
  ASSERT_EQ(log.records.size(), 6u);
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    EXPECT_EQ(log.records[i].epoch, i + 1);
    EXPECT_EQ(log.records[i].period, i / 2 + 1);
    EXPECT_TRUE(std::isfinite(log.records[i].loss));
  }
  EXPECT_EQ(log.period(2).size(), 2u);
}

TEST(Run, LabelOutOfRange) {
  Fixture f;
  auto params = build_network<float>(tiny_network(), 1);
  f.train.labels[3] = 5;
  const auto snap = snapshot(params);
  try {
    run(params, f.train, build_schedule(short_strategy("baseline"), 5), snap, small_batches());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 3 has label 5"), std::string::npos);
  }
}

TEST(Run, NonFiniteLossNamesEpochAndBatch) {
  Fixture f;
  auto params = build_network<float>(tiny_network(), 1);
  for (std::size_t i = 0; i < f.train.images.size(); ++i) f.train.images[i] = NAN;
  const auto snap = snapshot(params);
  TrainConfig c = small_batches();
  try {
    run(params, f.train, build_schedule(short_strategy("baseline"), 5), snap, c);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss at epoch 1, batch 0"), std::string::npos);
  }
}

TEST(Run, RejectsTinyBatches) {
  Fixture f;
  auto params = build_network<float>(tiny_network(), 1);
  const auto snap = snapshot(params);
  TrainConfig c;
  c.batch_size = 1;
  EXPECT_THROW(run(params, f.train, build_schedule(short_strategy("baseline"), 5), snap, c), ValidationError);
}

TEST(Run, DropsSingletonTailBatch) {
  Fixture f;
  // 30 samples in batches of 29 leave a tail of one.
  auto params = build_network<float>(tiny_network(), 1);
  const auto snap = snapshot(params);
  TrainConfig c;
  c.batch_size = 29;
  Strategy s = short_strategy("baseline", 1);
  s.periods = 1;
  const auto log = run(params, f.train, build_schedule(s, 5), snap, c);
  EXPECT_TRUE(std::isfinite(log.records[0].loss));
}

TEST(Run, FcWarmupFreezesBlocks) {
  Fixture f;
  auto params = build_network<float>(tiny_network(), 4);
  const auto initial = params;
  const auto snap = snapshot(params);
  TrainHooks<float> hooks;
  bool checked = false;
  hooks.on_boundary = [&](const PeriodPlan& plan, BoundaryStage stage, const NetworkParams<float>& p,
                          const NesterovSgd<float>&) {
    if (plan.index != 2 || stage != BoundaryStage::kBefore) return;
    const auto now = state_groups(p);
    const auto then = state_groups(initial);
    for (std::size_t b = 0; b < 5; ++b)
      for (std::size_t t = 0; t < now[b].tensors.size(); ++t)
        EXPECT_TRUE(bit_equal(*now[b].tensors[t].tensor, *then[b].tensors[t].tensor)) << now[b].id;
    bool fc_moved = false;
    for (std::size_t t = 0; t < now[5].tensors.size(); ++t)
      fc_moved = fc_moved || !bit_equal(*now[5].tensors[t].tensor, *then[5].tensors[t].tensor);
    EXPECT_TRUE(fc_moved);
    checked = true;
  };
  run(params, f.train, build_schedule(short_strategy("fc_warmup"), 5), snap, small_batches(), hooks);
  EXPECT_TRUE(checked);
}

TEST(Run, BoundaryHooksSeeRollback) {
  Fixture f;
  auto params = build_network<float>(tiny_network(), 5);
  const auto snap = snapshot(params);
  std::vector<std::pair<std::size_t, BoundaryStage>> calls;
  TrainHooks<float> hooks;
  hooks.on_boundary = [&](const PeriodPlan& plan, BoundaryStage stage, const NetworkParams<float>& p,
                          const NesterovSgd<float>& opt) {
    calls.emplace_back(plan.index, stage);
    if (plan.index < 2) return;
    const auto groups = state_groups(p);
    const auto& block = groups[plan.index - 1];  // first rolled-back block
    bool equal = true;
    for (std::size_t t = 0; t < block.tensors.size(); ++t)
      equal = equal && bit_equal(*block.tensors[t].tensor, snap.group(block.id).tensors[t].second);
    EXPECT_EQ(equal, stage == BoundaryStage::kAfter);
    if (stage == BoundaryStage::kAfter) {
      for (const auto& g : opt.groups())
        for (const auto& buf : g.buffers)
          for (float v : buf.values()) ASSERT_EQ(v, 0.0f);
    }
  };
  run(params, f.train, build_schedule(short_strategy("rollback"), 5), snap, small_batches(), hooks);
  EXPECT_EQ(calls.size(), 6u);
}

TEST(Run, LogLearningRatesFollowTimeline) {
  Fixture f;
  auto params = build_network<float>(tiny_network(), 6);
  const auto plans = build_schedule(short_strategy("rollback"), 5);
  const auto timeline = lr_timeline(params, plans);
  const auto snap = snapshot(params);
  const auto log = run(params, f.train, plans, snap, small_batches());
  ASSERT_EQ(log.records.size(), timeline.size());
  for (std::size_t i = 0; i < timeline.size(); ++i) EXPECT_EQ(log.records[i].lrs, timeline[i].lrs);
}

TEST(Run, RepeatedBatchLossDecreases) {
  const DatasetSpec spec;
  DatasetSpec small = spec;
  small.source_samples_per_class = 1;
  small.train_samples_per_id = 1;
  const auto data = generate(small);
  const auto train = to_image_set<float>(data.train);
  std::vector<std::size_t> idx(32);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Tensor<float> batch = gather_rows(train.images, idx);
  std::vector<int> labels(train.labels.begin(), train.labels.begin() + 32);

  auto params = build_network<float>(NetworkConfig{}, 7);
  NesterovSgd<float> opt(params, 0.001);
  ForwardOptions fopts;
  fopts.mode = Mode::kTrain;
  float prev = INFINITY;
  for (int step = 0; step < 50; ++step) {
    const float loss = train_step(params, opt, batch, labels, fopts);
    EXPECT_LT(loss, prev) << "step " << step;
    prev = loss;
  }
}

TEST(Log, CsvColumns) {
  TrainLog log;
  log.groups = {"Block1", "Block2", "FC"};
  EpochRecord r;
  r.epoch = 1;
  r.period = 1;
  r.loss = 0.5;
  r.lrs = {0.01, 0.01, 0.1};
  log.records.push_back(r);
  r.epoch = 2;
  r.map = 0.25;
  r.rank1 = 0.5;
  log.records.push_back(r);
  std::ostringstream os;
  log.write_csv(os);
  EXPECT_EQ(os.str(),
            "epoch,period,loss,lr_block1,lr_block2,lr_fc,map,rank1\n"
            "1,1,0.5,0.01,0.01,0.1,,\n"
            "2,1,0.5,0.01,0.01,0.1,0.250000,0.500000\n");
}

TEST(Pretrain, HeadRebuildKeepsBlocks) {
  Fixture f;
  const auto source = to_image_set<float>(f.data.source);
  PretrainConfig pc;
  pc.epochs = 2;
  pc.train.batch_size = 8;
  PretrainResult result;
  auto params = pretrain<float>(tiny_network(), source, pc, &result);
  EXPECT_EQ(params.num_classes(), 6u);
  EXPECT_EQ(result.log.records.size(), 2u);
  EXPECT_GE(result.holdout_accuracy, 0.0);
  const auto before = params;
  reset_classifier(params, 5, 99);
  EXPECT_EQ(params.num_classes(), 5u);
  const auto a = state_groups(params);
  const auto b = state_groups(before);
  for (std::size_t g = 0; g < 5; ++g)
    for (std::size_t t = 0; t < a[g].tensors.size(); ++t)
      EXPECT_TRUE(bit_equal(*a[g].tensors[t].tensor, *b[g].tensors[t].tensor));
  EXPECT_NE(params.classifier.class_weight.shape(), before.classifier.class_weight.shape());
}

TEST(Pretrain, ZeroEpochsReturnsInitialization) {
  Fixture f;
  const auto source = to_image_set<float>(f.data.source);
  PretrainConfig pc;
  pc.epochs = 0;
  auto params = pretrain<float>(tiny_network(), source, pc);
  NetworkConfig cfg = tiny_network();
  cfg.num_classes = 6;
  EXPECT_EQ(params_fingerprint(params), params_fingerprint(build_network<float>(cfg, pc.train.seed)));
}

TEST(Pretrain, HoldoutSplit) {
  Fixture f;
  const auto source = to_image_set<float>(f.data.source);
  const auto [fit, held] = split_holdout(source, 5);
  EXPECT_EQ(held.size(), 12u);
  EXPECT_EQ(fit.size(), 48u);
  EXPECT_EQ(held.labels[0], 0);
  EXPECT_EQ(held.labels[2], 1);
}

}  // namespace
}  // namespace rollback
