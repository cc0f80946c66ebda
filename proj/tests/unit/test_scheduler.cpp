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

#include <random>

#include "rollback/scheduler.hpp"

namespace rollback {
namespace {

NetworkParams<float> network(std::uint64_t seed = 1) { return build_network<float>(NetworkConfig{}, seed); }

void perturb(NetworkParams<float>& p, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 0.1f);
  for (const auto& g : state_groups(p))
    for (const auto& t : g.tensors)
      for (auto& v : t.tensor->values()) v += n(rng);
}

bool group_equal(const TensorGroup<Tensor<float>>& a, const TensorGroup<Tensor<float>>& b) {
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (!bit_equal(*a.tensors[i].tensor, *b.tensors[i].tensor)) return false;
  return true;
}

bool group_equal(const TensorGroup<Tensor<float>>& a, const SnapshotStore<float>::Group& s) {
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (!bit_equal(*a.tensors[i].tensor, s.tensors[i].second)) return false;
  return true;
}

std::vector<std::vector<std::size_t>> retained_sets(const std::vector<PeriodPlan>& plans) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& p : plans) out.push_back(p.retained);
  return out;
}

Strategy make(const std::string& name, std::size_t M = 4, std::size_t E = 40) {
  Strategy s = Strategy::parse(name);
  s.periods = M;
  s.epochs_per_period = E;
  s.decay_every = E / 2;
  return s;
}

TEST(Snapshot, HoldsBlocksOnlyAndIsADeepCopy) {
  auto p = network();
  const auto snap = snapshot(p);
  EXPECT_EQ(snap.size(), 5u);
  EXPECT_FALSE(snap.contains("FC"));
  const auto before = snap.fingerprint();
  std::mt19937_64 rng(1);
  perturb(p, rng);
  EXPECT_EQ(snap.fingerprint(), before);
}

TEST(Snapshot, ImmediateRestoreIsIdentity) {
  auto p = network();
  const auto copy = p;
  const auto snap = snapshot(p);
  restore_blocks(p, snap, {1, 2, 3, 4, 5});
  EXPECT_EQ(params_fingerprint(p), params_fingerprint(copy));
}

TEST(ApplyRollback, PeriodTwoKeepsFirstBlock) {
  auto p = network();
  const auto snap = snapshot(p);
  std::mt19937_64 rng(2);
  perturb(p, rng);
  const auto trained = p;
  apply_rollback(p, snap, 2);
  auto live = state_groups(p);
  auto before = state_groups(const_cast<NetworkParams<float>&>(trained));
  EXPECT_TRUE(group_equal(live[0], before[0]));
  for (std::size_t b = 1; b < 5; ++b) EXPECT_TRUE(group_equal(live[b], snap.group(live[b].id)));
  EXPECT_TRUE(group_equal(live[5], before[5]));
}

TEST(ApplyRollback, PastLastBlockIsNoOp) {
  auto p = network();
  const auto snap = snapshot(p);
  std::mt19937_64 rng(3);
  perturb(p, rng);
  const auto h = params_fingerprint(p);
  apply_rollback(p, snap, 6);
  EXPECT_EQ(params_fingerprint(p), h);
  EXPECT_THROW(apply_rollback(p, snap, 1), ValidationError);
}

TEST(ApplyRollback, PerturbedSecondBlockSurvivesPeriodThree) {
  auto p = network();
  const auto snap = snapshot(p);
  auto groups = state_groups(p);
  for (std::size_t b : {1u, 2u})
    for (const auto& t : groups[b].tensors)
      for (auto& v : t.tensor->values()) v += 1.0f;
  apply_rollback(p, snap, 3);
  for (std::size_t i = 0; i < groups[1].tensors.size(); ++i) {
    const auto& saved = snap.group("Block2").tensors[i].second;
    for (std::size_t k = 0; k < saved.size(); ++k) EXPECT_EQ((*groups[1].tensors[i].tensor)[k], saved[k] + 1.0f);
  }
  EXPECT_TRUE(group_equal(groups[2], snap.group("Block3")));
}

TEST(ApplyRollback, ExactnessOverRandomCases) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    NetworkConfig cfg;
    cfg.widths = {2, 3, 3, 4, 4};
    cfg.input = {1, 16, 8};
    cfg.embedding_width = 4;
    cfg.num_classes = 3;
    auto p = build_network<float>(cfg, rng());
    const auto snap = snapshot(p);
    perturb(p, rng);
    const auto before = p;
    const std::size_t period = std::uniform_int_distribution<std::size_t>(2, 5)(rng);
    apply_rollback(p, snap, period);
    auto live = state_groups(p);
    auto prior = state_groups(const_cast<NetworkParams<float>&>(before));
    for (std::size_t b = 1; b <= 5; ++b) {
      if (b < period) {
        EXPECT_TRUE(group_equal(live[b - 1], prior[b - 1])) << trial;
      } else {
        EXPECT_TRUE(group_equal(live[b - 1], snap.group(live[b - 1].id))) << trial;
      }
    }
    EXPECT_TRUE(group_equal(live[5], prior[5])) << trial;
  }
}

TEST(ApplyRollback, ShapeMismatchLeavesParamsUntouched) {
  auto small = network();
  const auto snap = snapshot(small);
  NetworkConfig wide;
  wide.widths = {8, 16, 32, 64, 96};
  auto p = build_network<float>(wide, 1);
  const auto h = params_fingerprint(p);
  EXPECT_THROW(apply_rollback(p, snap, 2), ShapeError);
  EXPECT_EQ(params_fingerprint(p), h);
}

TEST(BuildSchedule, RollbackRetainedSets) {
  const auto plans = build_schedule(make("rollback"), 5);
  ASSERT_EQ(plans.size(), 4u);
  EXPECT_EQ(retained_sets(plans),
            (std::vector<std::vector<std::size_t>>{{}, {1}, {1, 2}, {1, 2, 3}}));
  EXPECT_EQ(retained_label(plans[0]), "none");
  EXPECT_EQ(retained_label(plans[1]), "B1+FC");
  EXPECT_EQ(retained_label(plans[3]), "B1+B2+B3+FC");
  for (std::size_t p = 1; p < plans.size(); ++p) {
    EXPECT_EQ(plans[p].retained.size(), p);
    EXPECT_TRUE(plans[p].restore);
    EXPECT_TRUE(plans[p].reset_momentum);
    EXPECT_EQ(plans[p].lr_of("FC"), 0.01);
    for (auto b : plans[p].rolled_back) EXPECT_EQ(plans[p].lr_of(block_group_id(b)), 0.01);
    for (auto b : plans[p].retained) EXPECT_EQ(plans[p].lr_of(block_group_id(b)), 0.001);
  }
  EXPECT_EQ(plans[0].lr_of("FC"), 0.1);
  EXPECT_EQ(plans[0].lr_of("Block1"), 0.01);
}

TEST(BuildSchedule, ManifestText) {
  const auto text = schedule_manifest(build_schedule(make("rollback"), 5));
  const std::string expected =
      "period=1 strategy=rollback retained=none rolled_back=none restore=no "
      "lr=Block1:0.01,Block2:0.01,Block3:0.01,Block4:0.01,Block5:0.01,FC:0.1 frozen=none epochs=40 "
      "decay=20x0.1@40 reset_momentum=no\n"
      "period=2 strategy=rollback retained=B1+FC rolled_back=B2+B3+B4+B5 restore=yes "
      "lr=Block1:0.001,Block2:0.01,Block3:0.01,Block4:0.01,Block5:0.01,FC:0.01 frozen=none epochs=40 "
      "decay=20x0.1@40 reset_momentum=yes\n"
      "period=3 strategy=rollback retained=B1+B2+FC rolled_back=B3+B4+B5 restore=yes "
      "lr=Block1:0.001,Block2:0.001,Block3:0.01,Block4:0.01,Block5:0.01,FC:0.01 frozen=none epochs=40 "
      "decay=20x0.1@40 reset_momentum=yes\n"
      "period=4 strategy=rollback retained=B1+B2+B3+FC rolled_back=B4+B5 restore=yes "
      "lr=Block1:0.001,Block2:0.001,Block3:0.001,Block4:0.01,Block5:0.01,FC:0.01 frozen=none epochs=40 "
      "decay=20x0.1@40 reset_momentum=yes\n";
  EXPECT_EQ(text, expected);
}

TEST(BuildSchedule, BaseCyMatchesRollbackExceptRestore) {
  const auto r = build_schedule(make("rollback"), 5);
  const auto c = build_schedule(make("base_cy"), 5);
  ASSERT_EQ(r.size(), c.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(r[i].learning_rates, c[i].learning_rates);
    EXPECT_EQ(r[i].epochs, c[i].epochs);
    EXPECT_EQ(r[i].reset_momentum, c[i].reset_momentum);
    EXPECT_FALSE(c[i].restore);
  }
  const auto net = network();
  EXPECT_EQ(lr_timeline(net, r), lr_timeline(net, c));
}

TEST(BuildSchedule, SinglePeriodRollbackEqualsShortBaseline) {
  const auto r = build_schedule(make("rollback", 1), 5);
  const auto b = build_schedule(make("baseline", 1), 5);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(schedule_manifest(r).substr(schedule_manifest(r).find(" retained")),
            schedule_manifest(b).substr(schedule_manifest(b).find(" retained")));
}

TEST(BuildSchedule, BaselineHoldsRateAfterFirstPeriod) {
  const auto plans = build_schedule(make("baseline"), 5);
  ASSERT_EQ(plans.size(), 1u);
  EXPECT_EQ(plans[0].epochs, 160u);
  const auto rows = lr_timeline(network(), plans);
  ASSERT_EQ(rows.size(), 160u);
  for (const auto& row : rows) {
    const double block = row.epoch <= 20 ? 0.01 : 0.001;
    const double fc = row.epoch <= 20 ? 0.1 : 0.01;
    for (std::size_t b = 0; b < 5; ++b) EXPECT_NEAR(row.lrs[b], block, 1e-15) << row.epoch;
    EXPECT_NEAR(row.lrs[5], fc, 1e-15) << row.epoch;
  }
}

TEST(BuildSchedule, FcWarmupFreezesBlocks) {
  const auto plans = build_schedule(make("fc_warmup"), 5);
  ASSERT_EQ(plans.size(), 2u);
  EXPECT_EQ(plans[0].epochs, 20u);
  EXPECT_EQ(plans[0].lr_of("FC"), 0.1);
  for (std::size_t b = 1; b <= 5; ++b) EXPECT_TRUE(plans[0].frozen(block_group_id(b)));
  EXPECT_FALSE(plans[0].frozen("FC"));
  EXPECT_TRUE(plans[1].frozen_groups.empty());
  EXPECT_EQ(plans[1].epochs, 160u);
}

TEST(BuildSchedule, RemainBlock) {
  const auto plans = build_schedule(make("remain_block=2"), 5);
  ASSERT_EQ(plans.size(), 2u);
  EXPECT_EQ(retained_label(plans[1]), "B2+FC");
  EXPECT_EQ(plans[1].rolled_back, (std::vector<std::size_t>{1, 3, 4, 5}));
  EXPECT_THROW(build_schedule(make("remain_block=6"), 5), ValidationError);
  EXPECT_THROW(Strategy::parse("remain_block=0"), ValidationError);
  EXPECT_THROW(Strategy::parse("remain_block=x"), ValidationError);
  EXPECT_THROW(Strategy::parse("warm"), ValidationError);
}

TEST(BuildSchedule, RetainedSetsAreMonotone) {
  for (std::size_t M = 1; M <= 6; ++M) {
    const auto plans = build_schedule(make("rollback", M), 5);
    for (std::size_t i = 1; i < plans.size(); ++i) {
      const auto& prev = plans[i - 1].retained;
      const auto& next = plans[i].retained;
      EXPECT_TRUE(std::includes(next.begin(), next.end(), prev.begin(), prev.end()));
      EXPECT_EQ(next.size(), std::min<std::size_t>(i, 5));
    }
  }
}

TEST(PeriodBoundary, RollbackEntrySetsRatesAndClearsMomentum) {
  auto p = network();
  const auto snap = snapshot(p);
  NesterovSgd<float> opt(p, 0.01);
  Gradients<float> g;
  for (const auto& grp : parameter_groups(p))
    for (const auto& t : grp.tensors)
      if (t.trainable) g.accumulate(t.tensor, Tensor<float>(t.tensor->shape(), 0.1f));
  opt.step(p, g);
  const auto plans = build_schedule(make("rollback"), 5);
  period_boundary(p, opt, snap, plans[1]);
  EXPECT_EQ(opt.group_lr("Block1"), 0.001);
  for (std::size_t b = 2; b <= 5; ++b) EXPECT_EQ(opt.group_lr(block_group_id(b)), 0.01);
  EXPECT_EQ(opt.group_lr("FC"), 0.01);
  for (const auto& grp : opt.groups())
    for (const auto& buf : grp.buffers)
      for (float v : buf.values()) EXPECT_EQ(v, 0.0f);
  auto live = state_groups(p);
  for (std::size_t b = 1; b < 5; ++b) EXPECT_TRUE(group_equal(live[b], snap.group(live[b].id)));
  EXPECT_FALSE(group_equal(live[0], snap.group("Block1")));
}

TEST(PeriodBoundary, BaseCyEntryLeavesWeights) {
  auto p = network();
  const auto snap = snapshot(p);
  std::mt19937_64 rng(6);
  perturb(p, rng);
  const auto h = params_fingerprint(p);
  NesterovSgd<float> opt(p, 0.01);
  const auto plans = build_schedule(make("base_cy"), 5);
  period_boundary(p, opt, snap, plans[1]);
  EXPECT_EQ(params_fingerprint(p), h);
  EXPECT_EQ(opt.group_lr("Block1"), 0.001);
  EXPECT_EQ(opt.group_lr("Block2"), 0.01);
}

TEST(LrTimeline, RollbackTable) {
  const auto rows = lr_timeline(network(), build_schedule(make("rollback"), 5));
  ASSERT_EQ(rows.size(), 160u);
  for (const auto& row : rows) {
    const std::size_t in_period = (row.epoch - 1) % 40;
    const double decay = in_period < 20 ? 1.0 : 0.1;
    EXPECT_EQ(row.period, (row.epoch - 1) / 40 + 1);
    for (std::size_t b = 1; b <= 5; ++b) {
      const bool retained = row.period >= 2 && b < row.period;
      EXPECT_NEAR(row.lrs[b - 1], (retained ? 0.001 : 0.01) * decay, 1e-15) << row.epoch << " B" << b;
    }
    EXPECT_NEAR(row.lrs[5], (row.period == 1 ? 0.1 : 0.01) * decay, 1e-15) << row.epoch;
  }
}

}  // namespace
}  // namespace rollback
