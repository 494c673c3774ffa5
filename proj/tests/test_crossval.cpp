#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "camulenet/tensor_file.hpp"
#include "support/tiny_world.hpp"

using namespace camulenet;
using test_support::tiny_world;

namespace {

std::vector<std::string> numbered_speakers(std::size_t n) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(synth_speaker_id(i));
  return v;
}

SynthConfig cv_corpus() {
  SynthConfig sc;
  sc.n_speakers = 6;
  sc.clips_per_speaker = 3;
  sc.duration_s = 0.3;
  return sc;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("camulenet_cv_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(FoldPlan, NinetyOneSpeakersGiveOneTenAndNineNines) {
  const auto plan = build_fold_plan(numbered_speakers(91), 10, "iemocap-like", 5);
  ASSERT_EQ(plan.k(), 10u);
  std::multiset<std::size_t> sizes;
  std::set<std::string> all;
  for (const auto& f : plan.folds) {
    sizes.insert(f.size());
    all.insert(f.begin(), f.end());
  }
  EXPECT_EQ(sizes, (std::multiset<std::size_t>{9, 9, 9, 9, 9, 9, 9, 9, 9, 10}));
  EXPECT_EQ(all.size(), 91u);
  EXPECT_NO_THROW(validate_fold_plan(plan, numbered_speakers(91)));
}

TEST(FoldPlan, TenSpeakersGiveSingletons) {
  const auto plan = build_fold_plan(numbered_speakers(10));
  for (const auto& f : plan.folds) EXPECT_EQ(f.size(), 1u);
}

TEST(FoldPlan, IndependentOfInputOrderAndDuplicates) {
  auto s = numbered_speakers(23);
  auto shuffled = s;
  CounterRng rng(3);
  shuffle(shuffled.begin(), shuffled.end(), rng);
  shuffled.push_back(s[4]);
  EXPECT_EQ(nlohmann::json(build_fold_plan(s, 5)).dump(), nlohmann::json(build_fold_plan(shuffled, 5)).dump());
}

TEST(FoldPlan, Errors) {
  EXPECT_THROW(build_fold_plan(numbered_speakers(9), 10), InsufficientSpeakers);
  EXPECT_THROW(build_fold_plan(numbered_speakers(9), 1), ConfigError);
  auto plan = build_fold_plan(numbered_speakers(12), 4);
  plan.folds[1].push_back(plan.folds[0][0]);
  EXPECT_THROW(validate_fold_plan(plan, numbered_speakers(12)), SpeakerLeakError);
  plan = build_fold_plan(numbered_speakers(12), 4);
  plan.folds[3].pop_back();
  EXPECT_THROW(validate_fold_plan(plan, numbered_speakers(12)), SpeakerLeakError);
}

TEST(FoldPlan, JsonRoundTrip) {
  const auto plan = build_fold_plan(numbered_speakers(12), 4, "toy", 9);
  const nlohmann::json j = plan;
  EXPECT_EQ(nlohmann::json(j.get<FoldPlan>()).dump(), j.dump());
}

TEST(Crossval, DoctoredPlanAbortsWithLeak) {
  auto w = tiny_world(cv_corpus());
  auto plan = build_fold_plan(w.data.speakers(), 3);
  plan.folds[1].push_back(plan.folds[0][0]);
  EXPECT_THROW(run_crossval(w.data, plan, w.model, w.train), SpeakerLeakError);
  // The per-fold check catches the same plan even when the up-front validation is skipped.
  EXPECT_THROW(run_fold(w.data, plan, 0, w.model, w.train, AccuracyKind::balanced), SpeakerLeakError);
}

TEST(Crossval, ReportIsConsistentAndDeterministic) {
  auto w = tiny_world(cv_corpus());
  w.train.max_epochs = 2;
  const auto plan = build_fold_plan(w.data.speakers(), 3, w.data.id);
  const auto a = run_crossval(w.data, plan, w.model, w.train);
  CrossvalOptions two_jobs;
  two_jobs.jobs = 2;
  const auto b = run_crossval(w.data, plan, w.model, w.train, two_jobs);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());

  ASSERT_EQ(a.folds.size(), 3u);
  double wa = 0.0, wf1 = 0.0, g = 0.0;
  for (const auto& f : a.folds) {
    EXPECT_EQ(f.n_test, 6u);
    EXPECT_EQ(f.n_train + f.n_val, 12u);
    EXPECT_EQ(f.confusion.total(), f.n_test);
    EXPECT_EQ(f.metrics.wa, weighted_metrics(f.confusion).wa);
    for (const auto& v : f.val_speakers)
      for (const auto& t : f.test_speakers) EXPECT_NE(v, t);
    ASSERT_TRUE(f.gender_accuracy.has_value());
    wa += f.metrics.wa;
    wf1 += f.metrics.wf1;
    g += *f.gender_accuracy;
  }
  EXPECT_DOUBLE_EQ(a.mean_wa, wa / 3.0);
  EXPECT_DOUBLE_EQ(a.mean_wf1, wf1 / 3.0);
  EXPECT_DOUBLE_EQ(*a.mean_gender_accuracy, g / 3.0);
  const auto j = a.to_json();
  for (const char* key : {"dataset_id", "mode", "fingerprint", "emotions", "config", "folds", "mean"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}

TEST(Crossval, SingleTaskReportHasNoGenderAccuracy) {
  auto w = tiny_world(cv_corpus(), ModelMode::camulenet_single_task);
  w.train.max_epochs = 1;
  const auto r = run_crossval(w.data, build_fold_plan(w.data.speakers(), 3), w.model, w.train);
  EXPECT_FALSE(r.mean_gender_accuracy.has_value());
  EXPECT_TRUE(r.to_json()["mean"]["gender_accuracy"].is_null());
}

TEST(Crossval, ModeMismatchIsAConfigError) {
  auto w = tiny_world(cv_corpus());
  w.train.mode = ModelMode::baseline;
  EXPECT_THROW(run_crossval(w.data, build_fold_plan(w.data.speakers(), 3), w.model, w.train), ConfigError);
}

TEST(Crossval, WriteReportEmitsJsonAndConfusions) {
  auto w = tiny_world(cv_corpus());
  w.train.max_epochs = 1;
  const auto r = run_crossval(w.data, build_fold_plan(w.data.speakers(), 3), w.model, w.train);
  const auto dir = scratch("report");
  write_report(r, dir);
  std::ifstream in(dir / "report.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("folds").size(), 3u);
  for (int f = 0; f < 3; ++f) EXPECT_TRUE(std::filesystem::exists(dir / ("confusion_fold" + std::to_string(f) + ".csv")));
  std::filesystem::remove_all(dir);
}

TEST(Export, OneFilePerClipPlusLabels) {
  auto w = tiny_world(cv_corpus());
  Model<float> model(w.model, 1);
  const auto dir = scratch("export");
  EXPECT_EQ(export_embeddings(w.data, model, dir, "abc"), 18u);
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) n += e.path().extension() == ".cmlt";
  EXPECT_EQ(n, 18u);
  const auto& s = w.data.samples[4];
  const auto tf = read_tensor_file((dir / (s.clip_id + ".cmlt")).string());
  EXPECT_EQ(tf.shape, (std::vector<std::size_t>{w.model.embedding_width()}));
  EXPECT_EQ(tf.meta.at("clip_id"), s.clip_id);
  EXPECT_EQ(tf.meta.at("source_tag"), "camulenet-camulenet");
  std::ifstream in(dir / "labels.csv");
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "clip_id,emotion,gender,speaker_id");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 18u);
  std::filesystem::remove_all(dir);
}
