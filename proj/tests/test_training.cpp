#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "camulenet/ad/checkpoint.hpp"
#include "support/tiny_world.hpp"

using namespace camulenet;
using test_support::tiny_world;

namespace {

// Reference scan: the first epoch at which `patience` consecutive epochs have
// passed without beating the running best by more than min_delta.
std::pair<std::size_t, std::size_t> scan(const std::vector<double>& v, std::size_t patience, double min_delta) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0, since = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (best - v[i] > min_delta) {
      best = v[i];
      best_epoch = i + 1;
      since = 0;
    } else if (++since == patience) {
      return {i + 1, best_epoch};
    }
  }
  return {v.size(), best_epoch};
}

SynthConfig small_corpus() {
  SynthConfig sc;
  sc.n_speakers = 6;
  sc.clips_per_speaker = 4;
  sc.duration_s = 0.3;
  return sc;
}

}  // namespace

TEST(EarlyStopper, AgreesWithReferenceScan) {
  CounterRng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(25), patience = 1 + rng.below(5);
    const double min_delta = rng.uniform() < 0.5 ? 0.0 : 0.01;
    std::vector<double> v(n);
    double level = 1.0;
    for (auto& x : v) {
      level += rng.uniform(-0.05, 0.03);
      x = rng.uniform() < 0.2 ? level + 0.005 : level;
    }
    EarlyStopper s(patience, min_delta);
    std::size_t stop = n;
    for (std::size_t e = 1; e <= n; ++e) {
      if (s.observe(e, v[e - 1])) {
        stop = e;
        break;
      }
    }
    const auto [want_stop, want_best] = scan(v, patience, min_delta);
    ASSERT_EQ(stop, want_stop) << "trial " << trial;
    ASSERT_EQ(s.best_epoch(), want_best) << "trial " << trial;
  }
}

TEST(EarlyStopper, SmallImprovementsDoNotCount) {
  EarlyStopper s(2, 1e-4);
  EXPECT_FALSE(s.observe(1, 1.0));
  EXPECT_FALSE(s.observe(2, 0.99995));
  EXPECT_TRUE(s.observe(3, 0.99991));
  EXPECT_EQ(s.best_epoch(), 1u);
}

TEST(Training, LossDecreasesOnLearnableData) {
  auto w = tiny_world(small_corpus());
  const auto split = split_validation_speakers(w.data.samples, 0.2, 1);
  w.train.max_epochs = 6;
  w.train.patience = 10;
  Model<float> model(w.model, 3);
  const auto r = train(model, split.train, split.val, w.train);
  ASSERT_EQ(r.log.epochs.size(), 6u);
  EXPECT_LT(r.log.epochs.back().train_loss, r.log.epochs.front().train_loss);
}

TEST(Training, SameSeedGivesIdenticalLog) {
  auto w = tiny_world(small_corpus());
  const auto split = split_validation_speakers(w.data.samples, 0.2, 1);
  w.train.max_epochs = 3;
  std::string logs[2];
  std::vector<std::uint8_t> ckpts[2];
  for (int k = 0; k < 2; ++k) {
    Model<float> model(w.model, 3);
    auto r = train(model, split.train, split.val, w.train);
    logs[k] = r.log.to_jsonl();
    ckpts[k] = std::move(r.checkpoint);
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(ckpts[0], ckpts[1]);
  EXPECT_EQ(logs[0].find("wall_clock"), std::string::npos);
}

TEST(Training, RestoredCheckpointReproducesValidationLoss) {
  auto w = tiny_world(small_corpus());
  const auto split = split_validation_speakers(w.data.samples, 0.2, 1);
  w.train.max_epochs = 4;
  Model<float> model(w.model, 3);
  const auto r = train(model, split.train, split.val, w.train);
  const auto& best = r.log.epochs.at(r.log.best_epoch - 1);
  EXPECT_EQ(evaluate(model, split.val, w.train).loss, best.val_loss);

  Model<float> fresh(w.model, 99);
  ad::restore_params(ad::decode_checkpoint(r.checkpoint, "checkpoint"), fresh.params());
  EXPECT_EQ(evaluate(fresh, split.val, w.train).loss, best.val_loss);
}

TEST(Training, EmptySplitsAreRejected) {
  auto w = tiny_world(small_corpus());
  Model<float> model(w.model, 3);
  EXPECT_THROW(train(model, {}, w.data.samples, w.train), EmptySplit);
  EXPECT_THROW(train(model, w.data.samples, {}, w.train), EmptySplit);
  EXPECT_THROW(evaluate(model, {}, w.train), EmptySplit);
}

TEST(Training, NonFiniteInputReportsDivergence) {
  auto w = tiny_world(small_corpus());
  auto bad = w.data.samples;
  bad[0].xw.values[0] = std::numeric_limits<float>::quiet_NaN();
  Model<float> model(w.model, 3);
  try {
    train(model, bad, w.data.samples, w.train);
    FAIL();
  } catch (const DivergedError& e) {
    EXPECT_EQ(e.epoch(), 1u);
  }
}

TEST(Training, ConfigValidationAndDefaults) {
  EXPECT_DOUBLE_EQ(TrainConfig::defaults(ModelMode::baseline).lr, 1e-4);
  EXPECT_DOUBLE_EQ(TrainConfig::defaults(ModelMode::camulenet).lr, 5e-5);
  EXPECT_EQ(TrainConfig::defaults(ModelMode::camulenet).batch_size, 64u);
  TrainConfig c;
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.val_speaker_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SpeakerSplit, HoldsOutWholeSpeakers) {
  auto w = tiny_world(small_corpus());
  const auto split = split_validation_speakers(w.data.samples, 0.1, 4);
  EXPECT_EQ(split.val_speakers.size(), 1u);
  EXPECT_EQ(split.val.size(), 4u);
  EXPECT_EQ(split.train.size(), 20u);
  for (const auto& s : split.train) EXPECT_NE(s.speaker_id, split.val_speakers[0]);
  std::vector<Sample> one(w.data.samples.begin(), w.data.samples.begin() + 4);
  EXPECT_THROW(split_validation_speakers(one, 0.1, 4), InsufficientSpeakers);
}

TEST(Batching, ShapesAndErrors) {
  auto w = tiny_world(small_corpus());
  const auto b = make_batch<float>(w.data.samples, {0, 3, 5}, w.model);
  EXPECT_EQ(b.plane.shape(), (ad::Shape{3, 1, 32, 32}));
  EXPECT_EQ(b.xw.shape(), (ad::Shape{3, 8, 16}));
  EXPECT_EQ(b.mfcc.dim(2), 40u);
  EXPECT_EQ(b.emotion[1], w.data.samples[3].emotion);
  EXPECT_THROW(make_batch<float>(w.data.samples, {}, w.model), EmptySplit);
  auto mc = w.model;
  mc.fusion.L = 9;
  EXPECT_THROW(make_batch<float>(w.data.samples, {0}, mc), ShapeError);
}
