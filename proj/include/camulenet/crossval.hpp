#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <cstdio>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "camulenet/tensor_file.hpp"
#include "camulenet/training.hpp"

namespace camulenet {

struct FoldPlan {
  std::vector<std::vector<std::string>> folds;
  std::string dataset_id;
  std::uint64_t construction_seed = 0;

  std::size_t k() const { return folds.size(); }
};

inline void to_json(nlohmann::json& j, const FoldPlan& p) {
  j = {{"dataset_id", p.dataset_id}, {"construction_seed", p.construction_seed}, {"folds", p.folds}};
}

inline void from_json(const nlohmann::json& j, FoldPlan& p) {
  p.dataset_id = j.at("dataset_id");
  p.construction_seed = j.at("construction_seed");
  p.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
}

// Sorted speakers dealt round-robin: fold f receives speakers f, f+k, f+2k, ...
inline FoldPlan build_fold_plan(std::vector<std::string> speakers, std::size_t k = 10, std::string dataset_id = "",
                                std::uint64_t seed = 0) {
  std::sort(speakers.begin(), speakers.end());
  speakers.erase(std::unique(speakers.begin(), speakers.end()), speakers.end());
  if (k < 2) throw ConfigError("cross-validation needs k >= 2");
  if (speakers.size() < k) {
    throw InsufficientSpeakers("cannot build " + std::to_string(k) + " speaker folds from " + std::to_string(speakers.size()) +
                               " speakers");
  }
  FoldPlan plan;
  plan.dataset_id = std::move(dataset_id);
  plan.construction_seed = seed;
  plan.folds.resize(k);
  for (std::size_t i = 0; i < speakers.size(); ++i) plan.folds[i % k].push_back(speakers[i]);
  return plan;
}

// Checks pairwise disjointness and coverage of `speakers`.
inline void validate_fold_plan(const FoldPlan& plan, const std::vector<std::string>& speakers) {
  std::map<std::string, std::size_t> owner;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    if (plan.folds[f].empty()) throw SpeakerLeakError("fold " + std::to_string(f) + " is empty");
    for (const auto& s : plan.folds[f]) {
      const auto [it, fresh] = owner.emplace(s, f);
      if (!fresh) {
        throw SpeakerLeakError("speaker '" + s + "' appears in folds " + std::to_string(it->second) + " and " + std::to_string(f));
      }
    }
  }
  for (const auto& s : speakers) {
    if (!owner.count(s)) throw SpeakerLeakError("speaker '" + s + "' is not assigned to any fold");
  }
}

struct FoldRecord {
  std::size_t fold = 0;
  std::vector<std::string> test_speakers;
  std::vector<std::string> val_speakers;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  Metrics metrics;
  std::optional<double> gender_accuracy;
  ConfusionMatrix confusion;
  TrainLog log;
};

struct EvalReport {
  std::string dataset_id;
  ModelMode mode = ModelMode::camulenet;
  std::vector<std::string> emotion_names;
  nlohmann::json config;
  std::string fingerprint;
  std::vector<FoldRecord> folds;
  double mean_wa = 0.0;
  double mean_wf1 = 0.0;
  std::optional<double> mean_gender_accuracy;

  nlohmann::json to_json() const {
    nlohmann::json fj = nlohmann::json::array();
    for (const auto& f : folds) {
      fj.push_back({{"fold", f.fold},
                    {"test_speakers", f.test_speakers},
                    {"val_speakers", f.val_speakers},
                    {"n_train", f.n_train},
                    {"n_val", f.n_val},
                    {"n_test", f.n_test},
                    {"wa", f.metrics.wa},
                    {"wf1", f.metrics.wf1},
                    {"gender_accuracy", f.gender_accuracy ? nlohmann::json(*f.gender_accuracy) : nlohmann::json()},
                    {"confusion", confusion_to_json(f.confusion)},
                    {"best_epoch", f.log.best_epoch},
                    {"stopping_epoch", f.log.stopping_epoch}});
    }
    return {{"dataset_id", dataset_id},
            {"mode", to_string(mode)},
            {"fingerprint", fingerprint},
            {"emotions", emotion_names},
            {"config", config},
            {"folds", fj},
            {"mean",
             {{"wa", mean_wa},
              {"wf1", mean_wf1},
              {"gender_accuracy", mean_gender_accuracy ? nlohmann::json(*mean_gender_accuracy) : nlohmann::json()}}}};
  }
};

struct CrossvalOptions {
  std::size_t jobs = 1;
  AccuracyKind accuracy = AccuracyKind::balanced;
  bool verbose = false;
};

inline std::string run_fingerprint(const ModelConfig& mc, const TrainConfig& tc, const FoldPlan& plan) {
  const nlohmann::json j = {{"model", mc}, {"train", tc}, {"plan", plan}};
  return io::hex64(io::fnv1a(j.dump()));
}

// Seed for one fold and purpose, derived from the run seed.
inline std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold, std::uint64_t purpose) {
  return CounterRng(seed).split(fold).split(purpose).key();
}

inline FoldRecord run_fold(const Dataset& data, const FoldPlan& plan, std::size_t f, const ModelConfig& mc,
                           const TrainConfig& tc, AccuracyKind accuracy) {
  FoldRecord rec;
  rec.fold = f;
  rec.test_speakers = plan.folds[f];
  std::set<std::string> test(plan.folds[f].begin(), plan.folds[f].end());
  std::set<std::string> train_speakers;
  for (std::size_t g = 0; g < plan.folds.size(); ++g)
    if (g != f) train_speakers.insert(plan.folds[g].begin(), plan.folds[g].end());

  std::vector<Sample> test_set, train_pool;
  for (const auto& s : data.samples) {
    if (test.count(s.speaker_id)) test_set.push_back(s);
    if (train_speakers.count(s.speaker_id)) train_pool.push_back(s);
  }
  for (const auto& s : train_pool) {
    if (test.count(s.speaker_id)) {
      throw SpeakerLeakError("fold " + std::to_string(f) + ": clip '" + s.clip_id + "' of test speaker '" + s.speaker_id +
                             "' is in the training stream");
    }
  }
  if (test_set.empty()) throw EmptySplit("fold " + std::to_string(f) + " has no test clips");
  if (train_pool.empty()) throw EmptySplit("fold " + std::to_string(f) + " has no training clips");

  TrainConfig fold_cfg = tc;
  fold_cfg.seed = fold_seed(tc.seed, f, 0);
  auto split = split_validation_speakers(train_pool, tc.val_speaker_fraction, fold_seed(tc.seed, f, 1));
  rec.val_speakers = split.val_speakers;
  rec.n_train = split.train.size();
  rec.n_val = split.val.size();
  rec.n_test = test_set.size();

  Model<float> model(mc, fold_seed(tc.seed, f, 2));
  auto result = train(model, split.train, split.val, fold_cfg);
  rec.log = std::move(result.log);
  const auto ev = evaluate(model, test_set, fold_cfg);
  rec.confusion = confusion_matrix(ev.predictions, ev.truth, mc.n_emotions);
  rec.metrics = weighted_metrics(rec.confusion, accuracy);
  if (!ev.gender_predictions.empty()) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < ev.gender_predictions.size(); ++i) hit += ev.gender_predictions[i] == ev.gender_truth[i];
    rec.gender_accuracy = static_cast<double>(hit) / static_cast<double>(ev.gender_predictions.size());
  }
  return rec;
}

// Leave-speaker-out cross-validation. Folds may run on `jobs` worker threads;
// the report is assembled by fold index.
inline EvalReport run_crossval(const Dataset& data, const FoldPlan& plan, const ModelConfig& mc, const TrainConfig& tc,
                               const CrossvalOptions& opt = {}) {
  if (mc.mode != tc.mode) throw ConfigError("model mode and training mode differ");
  mc.validate();
  tc.validate();
  validate_fold_plan(plan, data.speakers());

  EvalReport report;
  report.dataset_id = data.id;
  report.mode = mc.mode;
  report.emotion_names = data.emotion_names;
  report.config = {{"model", mc}, {"train", tc}, {"plan", plan}};
  report.fingerprint = run_fingerprint(mc, tc, plan);
  report.folds.resize(plan.k());

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(plan.k());
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t f; (f = next++) < plan.k();) {
      try {
        report.folds[f] = run_fold(data, plan, f, mc, tc, opt.accuracy);
        if (opt.verbose) {
          std::lock_guard lock(log_mutex);
          std::fprintf(stderr, "fold %zu: WA %.4f WF1 %.4f (stopped at epoch %zu)\n", f, report.folds[f].metrics.wa,
                       report.folds[f].metrics.wf1, report.folds[f].log.stopping_epoch);
        }
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(opt.jobs, 1, plan.k());
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  double g_sum = 0.0;
  bool has_gender = true;
  for (const auto& f : report.folds) {
    report.mean_wa += f.metrics.wa;
    report.mean_wf1 += f.metrics.wf1;
    if (f.gender_accuracy) g_sum += *f.gender_accuracy;
    else has_gender = false;
  }
  const double k = static_cast<double>(plan.k());
  report.mean_wa /= k;
  report.mean_wf1 /= k;
  if (has_gender) report.mean_gender_accuracy = g_sum / k;
  return report;
}

// report.json plus one confusion CSV per fold.
inline void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_text_atomic((dir / "report.json").string(), report.to_json().dump(2) + "\n");
  for (const auto& f : report.folds) {
    io::write_text_atomic((dir / ("confusion_fold" + std::to_string(f.fold) + ".csv")).string(),
                          confusion_to_csv(f.confusion, report.emotion_names));
  }
}

// One rank-1 TensorFile of the pre-classifier embedding per clip, plus labels.csv.
template <class T>
std::size_t export_embeddings(const Dataset& data, Model<T>& model, const std::filesystem::path& out_dir,
                              const std::string& fingerprint = "") {
  std::filesystem::create_directories(out_dir);
  TrainConfig cfg = TrainConfig::defaults(model.config().mode);
  const auto ev = evaluate(model, data.samples, cfg, true);
  std::string csv = "clip_id,emotion,gender,speaker_id\n";
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    TensorFile tf;
    tf.shape = {ev.embeddings[i].size()};
    tf.values.assign(ev.embeddings[i].begin(), ev.embeddings[i].end());
    tf.meta = {{"clip_id", s.clip_id}, {"source_tag", "camulenet-" + to_string(model.config().mode)}, {"fingerprint", fingerprint}};
    const auto path = out_dir / (s.clip_id + ".cmlt");
    try {
      write_tensor_file(path.string(), tf);
    } catch (const std::exception& e) {
      throw IoError("clip '" + s.clip_id + "': " + e.what());
    }
    csv += s.clip_id + "," + data.emotion_names.at(static_cast<std::size_t>(s.emotion)) + "," +
           (s.gender == 0 ? "male" : "female") + "," + s.speaker_id + "\n";
  }
  io::write_text_atomic((out_dir / "labels.csv").string(), csv);
  return data.samples.size();
}

}  // namespace camulenet
