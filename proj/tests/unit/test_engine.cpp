#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "baseline.hpp"
#include "unmix/engine.hpp"
#include "unmix/error.hpp"

using namespace unmix;
using unmix::test::tiny_config;

namespace {

std::shared_ptr<const LabeledDataset> dataset(const RunConfig& cfg) {
  return std::make_shared<const LabeledDataset>(make_synthetic(cfg.data.synthetic));
}

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<std::vector<float>> snapshot(const NamedTensors& ts) {
  std::vector<std::vector<float>> out;
  for (const auto& t : ts) out.push_back(values(t.value));
  return out;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("unmix_engine_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(ScheduledLr, WarmupThenTwoDecays) {
  OptimConfig o;
  o.lr = 1.0;
  o.warmup_steps = 10;
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 0, 100), 0.1);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 4, 100), 0.5);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 9, 100), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 94, 100), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 95, 100), 0.2);
  EXPECT_NEAR(scheduled_lr(o, 97, 100), 0.04, 1e-15);
  o.warmup_steps = 0;
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 0, 100), 1.0);
}

TEST(Sampler, EachEpochIsAPermutationWithDropLast) {
  auto cfg = tiny_config();
  cfg.batch_size = 5;  // 32 images → 6 batches, 2 dropped
  Trainer t(cfg, dataset(cfg), 100);
  ASSERT_EQ(t.steps_per_epoch(), 6);
  auto ids = [&](std::int64_t step) {
    // images are distinct, so pixel blocks identify them
    const auto b = t.batch_for_step(step);
    std::vector<std::vector<std::uint8_t>> out;
    for (int i = 0; i < b.count; ++i) out.emplace_back(b.image(i).begin(), b.image(i).end());
    return out;
  };
  std::set<std::vector<std::uint8_t>> epoch0, epoch1;
  for (int s = 0; s < 6; ++s)
    for (auto& img : ids(s)) EXPECT_TRUE(epoch0.insert(img).second);
  for (int s = 6; s < 12; ++s)
    for (auto& img : ids(s)) epoch1.insert(img);
  EXPECT_EQ(epoch0.size(), 30u);
  EXPECT_NE(ids(0), ids(6));
  EXPECT_EQ(ids(3), ids(3));
}

TEST(Trainer, MixDisabledIsTheBaselineBitForBit) {
  for (BaseLoss base : {BaseLoss::SimCLR, BaseLoss::MoCo, BaseLoss::BYOL}) {
    auto cfg = tiny_config();
    cfg.mix.enabled = false;
    cfg.loss.base = base;
    const auto data = dataset(cfg);
    const auto expect = unmix::test::baseline_run(cfg, *data, 10, 40);
    for (LossMode mode : {LossMode::OriginalOnly, LossMode::Combined}) {
      cfg.loss.mode = mode;
      Trainer t(cfg, data, 40);
      for (int s = 0; s < 10; ++s) {
        const auto r = t.step();
        ASSERT_EQ(r.total, expect[static_cast<std::size_t>(s)].total) << to_string(base) << " step " << s;
        ASSERT_EQ(r.l_ori, expect[static_cast<std::size_t>(s)].l_ori);
        EXPECT_FALSE(r.mode.has_value());
      }
    }
  }
}

TEST(Trainer, OriginalOnlyWithMixingEnabledIgnoresMixing) {
  auto cfg = tiny_config();
  cfg.loss.mode = LossMode::OriginalOnly;
  const auto data = dataset(cfg);
  const auto expect = unmix::test::baseline_run(cfg, *data, 5, 40);
  Trainer t(cfg, data, 40);
  for (int s = 0; s < 5; ++s) EXPECT_EQ(t.step().total, expect[static_cast<std::size_t>(s)].total);
}

TEST(Trainer, BankReplaysLastKeysInOrder) {
  for (BankInit init : {BankInit::Random, BankInit::Empty}) {
    auto cfg = tiny_config();
    cfg.bank_size = 16;
    cfg.batch_size = 4;
    cfg.bank_init = init;
    Trainer t(cfg, dataset(cfg), 40);
    std::vector<std::pair<std::vector<float>, KeyTag>> log;
    t.set_key_observer([&](int bank, const Tensor& keys, const KeyTag& tag) {
      ASSERT_EQ(bank, 0);
      for (std::int64_t i = 0; i < keys.dim(0); ++i)
        log.emplace_back(std::vector<float>(keys.data().begin() + i * 16, keys.data().begin() + (i + 1) * 16), tag);
    });
    for (int s = 0; s < 5; ++s) t.step();
    ASSERT_EQ(log.size(), 20u);
    const auto& bank = t.banks()[0];
    ASSERT_EQ(bank.size(), 16);
    const auto keys = values(bank.keys());
    const auto tags = bank.tags();
    for (int i = 0; i < 16; ++i) {
      const auto& [k, tag] = log[static_cast<std::size_t>(4 + i)];
      EXPECT_EQ(std::vector<float>(keys.begin() + i * 16, keys.begin() + (i + 1) * 16), k);
      EXPECT_EQ(tags[static_cast<std::size_t>(i)], tag);
    }
  }
}

TEST(Trainer, BankHoldsOnlyUnmixedKeysOverAHundredSteps) {
  auto cfg = tiny_config();
  cfg.loss.symmetric = true;  // queries from both views, still only unmixed keys go in
  Trainer t(cfg, dataset(cfg), 100);
  int pushes = 0;
  t.set_key_observer([&](int, const Tensor&, const KeyTag& tag) {
    ++pushes;
    EXPECT_EQ(tag.source, KeySource::Unmixed);
  });
  std::set<MixMode> modes;
  for (int s = 0; s < 100; ++s) modes.insert(*t.step().mode);
  EXPECT_EQ(pushes, 200);
  EXPECT_EQ(modes.size(), 2u);
  for (const auto& tag : t.banks()[0].tags()) EXPECT_EQ(tag.source, KeySource::Unmixed);
}

TEST(MultiScale, SingleScaleListEqualsPlainStep) {
  auto cfg = tiny_config();
  const auto data = dataset(cfg);
  Trainer plain(cfg, data, 20);
  cfg.scales = {16};
  Trainer listed(cfg, data, 20);
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(plain.step().total, listed.step().total, 1e-6);
}

TEST(MultiScale, TotalIsSumOfIsolatedScales) {
  auto cfg = tiny_config();
  const auto data = dataset(cfg);
  cfg.scales = {16, 12};
  Trainer both(cfg, data, 20);
  cfg.scales = {16};
  Trainer big(cfg, data, 20);
  cfg.scales = {12};
  Trainer small(cfg, data, 20);
  const auto r = both.step();
  const auto a = big.step(), b = small.step();
  EXPECT_NEAR(r.total, a.total + b.total, 1e-6);
  EXPECT_NEAR(r.l_ori, a.l_ori + b.l_ori, 1e-6);
}

TEST(MultiScale, BanksNeverCrossContaminate) {
  auto cfg = tiny_config();
  cfg.scales = {16, 12};
  Trainer t(cfg, dataset(cfg), 100);
  ASSERT_EQ(t.banks().size(), 2u);
  std::map<int, std::vector<std::vector<float>>> produced;
  t.set_key_observer([&](int bank, const Tensor& keys, const KeyTag& tag) {
    EXPECT_EQ(tag.scale, t.extents()[static_cast<std::size_t>(bank)]);
    for (std::int64_t i = 0; i < keys.dim(0); ++i)
      produced[tag.scale].emplace_back(keys.data().begin() + i * 16, keys.data().begin() + (i + 1) * 16);
  });
  for (int s = 0; s < 100; ++s) t.step();
  for (std::size_t b = 0; b < 2; ++b) {
    const auto& bank = t.banks()[b];
    const int scale = t.extents()[b];
    EXPECT_EQ(bank.scale(), scale);
    const auto keys = values(bank.keys());
    const auto& mine = produced[scale];
    const auto& other = produced[t.extents()[1 - b]];
    for (int i = 0; i < bank.size(); ++i) {
      const std::vector<float> k(keys.begin() + i * 16, keys.begin() + (i + 1) * 16);
      EXPECT_NE(std::find(mine.begin(), mine.end(), k), mine.end());
      EXPECT_EQ(std::find(other.begin(), other.end(), k), other.end());
      EXPECT_EQ(bank.tags()[static_cast<std::size_t>(i)].scale, scale);
    }
  }
}

TEST(MultiScale, RejectsExtentAboveSource) {
  auto cfg = tiny_config();
  cfg.scales = {24};
  EXPECT_THROW(Trainer(cfg, dataset(cfg), 10), ConfigError);
}

TEST(Trainer, CheckpointRoundTripContinuesIdentically) {
  for (BaseLoss base : {BaseLoss::MoCo, BaseLoss::BYOL, BaseLoss::SimCLR}) {
    auto cfg = tiny_config();
    cfg.loss.base = base;
    const auto data = dataset(cfg);
    Trainer straight(cfg, data, 30);
    for (int s = 0; s < 3; ++s) straight.step();
    const auto bytes = encode_checkpoint(straight.save());
    std::vector<double> expect;
    for (int s = 0; s < 5; ++s) expect.push_back(straight.step().total);

    Trainer resumed(cfg, data, 30);
    resumed.load(decode_checkpoint(bytes));
    EXPECT_EQ(resumed.step_count(), 3);
    for (int s = 0; s < 5; ++s) EXPECT_NEAR(resumed.step().total, expect[static_cast<std::size_t>(s)], 1e-6);
  }
}

TEST(Trainer, LoadRejectsDifferentModel) {
  auto cfg = tiny_config();
  Trainer a(cfg, dataset(cfg), 10);
  cfg.encoder.embedding_dim = 8;
  Trainer b(cfg, dataset(cfg), 10);
  EXPECT_ANY_THROW(b.load(a.save()));
}

TEST(Trainer, KeyEncoderMovesOnlyByMomentum) {
  auto cfg = tiny_config();
  cfg.encoder_momentum = 0.9;
  Trainer t(cfg, dataset(cfg), 20);
  for (int s = 0; s < 3; ++s) {
    const auto key_before = snapshot(t.key_encoder()->parameters());
    t.step();
    const auto online_after = snapshot(t.online().parameters());
    const auto key_after = snapshot(t.key_encoder()->parameters());
    for (std::size_t i = 0; i < key_after.size(); ++i)
      for (std::size_t j = 0; j < key_after[i].size(); ++j) {
        const float expect = 0.9f * key_before[i][j] + 0.1f * online_after[i][j];
        ASSERT_NEAR(key_after[i][j], expect, 1e-6f);
      }
    for (const auto& p : t.key_encoder()->parameters())
      for (float g : p.value.grad()) ASSERT_EQ(g, 0.0f);
  }
}

TEST(Trainer, NonFiniteLossAbortsWithReport) {
  auto cfg = tiny_config();
  cfg.optim.kind = OptimizerKind::Sgd;
  cfg.optim.lr = 1e30;
  cfg.optim.warmup_steps = 0;
  Trainer t(cfg, dataset(cfg), 20);
  try {
    for (int s = 0; s < 20; ++s) t.step();
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("l_ori"), std::string::npos) << e.what();
  }
}

TEST(Trainer, MixedOnlyNeedsMixing) {
  auto cfg = tiny_config();
  cfg.loss.mode = LossMode::MixedOnly;
  cfg.mix.enabled = false;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Trainer, EveryModeAndBaseRuns) {
  for (BaseLoss base : {BaseLoss::SimCLR, BaseLoss::MoCo, BaseLoss::BYOL})
    for (LossMode mode : {LossMode::OriginalOnly, LossMode::MixedOnly, LossMode::Combined, LossMode::BothBranch}) {
      auto cfg = tiny_config();
      cfg.loss.base = base;
      cfg.loss.mode = mode;
      Trainer t(cfg, dataset(cfg), 4);
      for (int s = 0; s < 2; ++s) {
        const auto r = t.step();
        EXPECT_TRUE(std::isfinite(r.total)) << to_string(base) << " " << to_string(mode);
        if (mode == LossMode::MixedOnly) EXPECT_EQ(r.l_ori, 0.0);
      }
      EXPECT_EQ(t.banks().size(), base == BaseLoss::MoCo ? 1u : 0u);
    }
}

TEST(RunTraining, WritesMetricsConfigAndCheckpoints) {
  auto cfg = tiny_config();
  cfg.output_dir = scratch("run").string();
  cfg.max_steps = 6;
  cfg.eval_every = 3;
  cfg.checkpoint_every = 3;
  std::vector<std::int64_t> seen;
  const auto summary = run_training(cfg, [&](std::int64_t done, std::int64_t total, const LossReport&,
                                             const std::optional<double>& knn) {
    EXPECT_EQ(total, 6);
    EXPECT_EQ(knn.has_value(), done % 3 == 0);
    seen.push_back(done);
  });
  EXPECT_EQ(seen, (std::vector<std::int64_t>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(summary.steps, 6);
  ASSERT_TRUE(summary.final_knn.has_value());
  const std::filesystem::path dir = cfg.output_dir;
  EXPECT_TRUE(std::filesystem::exists(dir / "config.resolved"));
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint.umx"));
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / "step_0000003.umx"));
  std::ifstream in(dir / "metrics.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, MetricsWriter::header());
  int rows = 0, with_knn = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() >= 9 && !cols[8].empty()) ++with_knn;
    EXPECT_TRUE(line.back() == ',') << "wall_ms column is blank by default: " << line;
  }
  EXPECT_EQ(rows, 6);
  EXPECT_EQ(with_knn, 2);

  const auto ckpt = load_checkpoint(dir / "checkpoint.umx");
  EXPECT_EQ(resolved_text(config_from_checkpoint(ckpt)), resolved_text(cfg));
  auto enc = encoder_from_checkpoint(ckpt);
  EXPECT_EQ(enc.spec().embedding_dim, cfg.encoder.embedding_dim);
  EXPECT_EQ(enc.spec().stages.size(), cfg.encoder.stages.size());
}

TEST(RunTraining, SameSeedSameMetricsBytes) {
  auto read = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  auto cfg = tiny_config();
  cfg.max_steps = 5;
  cfg.eval_every = 5;
  cfg.output_dir = scratch("det_a").string();
  run_training(cfg);
  const auto a = read(std::filesystem::path(cfg.output_dir) / "metrics.csv");
  cfg.output_dir = scratch("det_b").string();
  run_training(cfg);
  EXPECT_EQ(a, read(std::filesystem::path(cfg.output_dir) / "metrics.csv"));
  cfg.seed = 6;
  cfg.output_dir = scratch("det_c").string();
  run_training(cfg);
  EXPECT_NE(a, read(std::filesystem::path(cfg.output_dir) / "metrics.csv"));
}

TEST(PlannedSteps, EpochsTimesBatchesCappedByMaxSteps) {
  auto cfg = tiny_config();
  cfg.epochs = 3;
  EXPECT_EQ(planned_steps(cfg, 32), 12);
  cfg.max_steps = 5;
  EXPECT_EQ(planned_steps(cfg, 32), 5);
  cfg.batch_size = 64;
  EXPECT_THROW(planned_steps(cfg, 32), ConfigError);
}
