// camulenet: command-line front end.
//
// Exit codes: 0 success, 1 failure, 2 speaker leak detected, 3 training diverged.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "camulenet.hpp"

namespace fs = std::filesystem;
using namespace camulenet;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitLeak = 2;
constexpr int kExitDiverged = 3;

struct CommonOptions {
  std::string config_path;
  std::string manifest;
  std::string mode = "camulenet";
  std::uint64_t seed = 42;
  std::vector<std::string> tiny_encoder;
  std::string embeddings_root;
  std::string source_tag = "whisper-base";
  std::string dataset_id;
  std::vector<std::string> vocabulary;
  bool tiny_model = false;
  double clip_seconds = -1.0;
  std::size_t plane = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  std::size_t epochs = 0;
  std::size_t patience = 0;
};

// Defaults, then the config file (JSON merge patch), then explicit flags.
struct RunConfig {
  FeatureConfig features;
  TrainConfig train;
  ModelConfig model;
  EmbeddingSource embeddings;
  std::string dataset_id;
  bool tiny_model = false;

  json to_json() const {
    return {{"features", features}, {"train", train}, {"model", model}, {"dataset_id", dataset_id},
            {"embeddings", {{"reference", embeddings.reference()},
                            {"root", embeddings.root ? embeddings.root->string() : ""},
                            {"source_tag", embeddings.source_tag},
                            {"L", embeddings.L},
                            {"W", embeddings.W}}}};
  }
  std::string fingerprint() const { return io::hex64(io::fnv1a(to_json().dump())); }
};

void add_common(CLI::App* cmd, CommonOptions& o, bool training) {
  cmd->add_option("--config", o.config_path, "JSON config file; flags override its values");
  cmd->add_option("--manifest", o.manifest, "dataset manifest (CSV or .jsonl)")->required();
  cmd->add_option("--mode", o.mode, "baseline | camulenet | camulenet_single_task | camulenet_no_coattention");
  cmd->add_option("--seed", o.seed, "seed for every random stream (default 42)");
  cmd->add_option("--tiny-encoder", o.tiny_encoder, "use the built-in reference encoder, e.g. --tiny-encoder L=64 W=32")
      ->expected(0, 2);
  cmd->add_option("--embeddings", o.embeddings_root, "root directory of exported pretrained embeddings");
  cmd->add_option("--source-tag", o.source_tag, "embedding source tag (subdirectory name)");
  cmd->add_option("--dataset-id", o.dataset_id, "dataset name (defaults to the manifest's directory name)");
  cmd->add_option("--vocabulary", o.vocabulary, "ordered emotion labels (default: sorted labels in the manifest)");
  cmd->add_flag("--tiny-model", o.tiny_model, "reduced encoder widths for quick runs");
  cmd->add_option("--clip-seconds", o.clip_seconds, "pad/truncate length after preprocessing (default 10)");
  cmd->add_option("--plane", o.plane, "spectrogram image side (default 224, tiny 32)");
  if (training) {
    cmd->add_option("--batch-size", o.batch_size, "mini-batch size");
    cmd->add_option("--lr", o.lr, "Adam learning rate");
    cmd->add_option("--epochs", o.epochs, "maximum epochs (default 20)");
    cmd->add_option("--patience", o.patience, "early-stopping patience in epochs (default 3)");
  }
}

RunConfig resolve(const CommonOptions& o, const Manifest& m, const std::string& manifest_path) {
  RunConfig rc;
  const auto mode = parse_model_mode(o.mode);
  rc.train = TrainConfig::defaults(mode);
  rc.tiny_model = o.tiny_model;
  if (o.tiny_model) rc.features.plane = 32;
  rc.dataset_id = o.dataset_id.empty() ? fs::absolute(manifest_path).parent_path().filename().string() : o.dataset_id;

  json file = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw IoError("cannot open config " + o.config_path);
    file = json::parse(in);
  }
  if (file.contains("features")) {
    json j = rc.features;
    j.merge_patch(file["features"]);
    rc.features = j.get<FeatureConfig>();
  }
  if (file.contains("train")) {
    json j = rc.train;
    j.merge_patch(file["train"]);
    rc.train = j.get<TrainConfig>();
  }
  rc.train.mode = mode;
  rc.train.seed = o.seed;
  if (o.batch_size) rc.train.batch_size = o.batch_size;
  if (o.lr > 0.0) rc.train.lr = o.lr;
  if (o.epochs) rc.train.max_epochs = o.epochs;
  if (o.patience) rc.train.patience = o.patience;
  if (o.clip_seconds > 0.0) rc.features.clip_seconds = o.clip_seconds;
  if (o.plane) rc.features.plane = o.plane;

  if (!o.embeddings_root.empty()) {
    rc.embeddings.root = fs::path(o.embeddings_root);
    rc.embeddings.source_tag = o.source_tag;
  } else {
    for (const auto& kv : o.tiny_encoder) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--tiny-encoder expects L=<n> and/or W=<n>, got '" + kv + "'");
      const auto key = kv.substr(0, eq);
      const auto val = std::stoul(kv.substr(eq + 1));
      if (key == "L") rc.embeddings.L = val;
      else if (key == "W") rc.embeddings.W = val;
      else throw ConfigError("unknown --tiny-encoder key '" + key + "'");
    }
    rc.embeddings.source_tag = "reference-tiny";
    rc.embeddings.seed = o.seed;
  }

  // L and W follow the embeddings actually present.
  std::size_t L = rc.embeddings.L, W = rc.embeddings.W;
  if (!rc.embeddings.reference() && !m.rows.empty()) {
    const auto path = embedding_path(*rc.embeddings.root, rc.dataset_id, rc.embeddings.source_tag, m.rows[0].clip_id);
    const auto tf = read_tensor_file(path.string());
    if (tf.shape.size() == 2) {
      L = tf.shape[0];
      W = tf.shape[1];
    } else if (tf.shape.size() == 1) {
      L = 1;
      W = tf.shape[0];
    }
  }
  const std::size_t c = m.vocabulary.size();
  rc.model = o.tiny_model ? ModelConfig::tiny(mode, c, L, W) : ModelConfig::full(mode, c, L, W);
  rc.model.spectrogram.plane = rc.features.plane;
  if (file.contains("model")) {
    json j = rc.model;
    j.merge_patch(file["model"]);
    rc.model = j.get<ModelConfig>();
  }
  if (file.contains("loss")) {
    json j = rc.train.loss;
    j.merge_patch(file["loss"]);
    rc.train.loss = j.get<MultitaskLossConfig>();
  }
  rc.model.validate();
  rc.train.validate();
  return rc;
}

Manifest read_manifest(const CommonOptions& o) {
  ManifestOptions mo;
  mo.vocabulary = o.vocabulary;
  mo.check_files = true;
  return load_manifest(o.manifest, mo);
}

Dataset load_dataset(const Manifest& m, const RunConfig& rc) {
  const bool freq = rc.model.mode != ModelMode::baseline;
  return build_dataset(m, rc.features, rc.embeddings, rc.dataset_id, freq);
}

void print_table_row(const EvalReport& r) {
  std::printf("%-28s %-10s %8s %8s\n", "Model", "Dataset", "WA", "WF1");
  std::printf("%-28s %-10s %7.2f%% %7.2f%%\n", to_string(r.mode).c_str(), r.dataset_id.c_str(), 100.0 * r.mean_wa,
              100.0 * r.mean_wf1);
  if (r.mean_gender_accuracy) std::printf("gender accuracy: %.2f%%\n", 100.0 * *r.mean_gender_accuracy);
}

int cmd_synth(const SynthConfig& cfg, const std::string& out) {
  const auto m = write_synth_corpus(cfg, out);
  std::printf("wrote %zu clips from %zu speakers to %s\n", m.rows.size(), cfg.n_speakers, out.c_str());
  return 0;
}

int cmd_featurize(const CommonOptions& o, std::string out) {
  const auto m = read_manifest(o);
  const auto rc = resolve(o, m, o.manifest);
  if (out.empty()) {
    const char* env = std::getenv("CAMULENET_CACHE");
    out = env && *env ? (fs::path(env) / rc.dataset_id).string() : "feature_cache";
  }
  const auto summary = featurize_manifest(m, out, rc.features);
  std::printf("featurize: %zu computed, %zu up to date, %zu failed -> %s\n", summary.computed, summary.skipped,
              summary.failures.size(), out.c_str());
  for (const auto& f : summary.failures) std::fprintf(stderr, "failed: %s\n", f.c_str());
  return summary.failures.empty() ? 0 : kExitFailure;
}

int cmd_train(const CommonOptions& o, const std::string& out) {
  const auto m = read_manifest(o);
  const auto rc = resolve(o, m, o.manifest);
  const auto data = load_dataset(m, rc);
  const auto split = split_validation_speakers(data.samples, rc.train.val_speaker_fraction, rc.train.seed);
  Model<float> model(rc.model, rc.train.seed);
  auto result = train(model, split.train, split.val, rc.train);
  fs::create_directories(out);
  auto params = model.params();
  json meta = checkpoint_meta(rc.model, rc.train);
  meta["fingerprint"] = rc.fingerprint();
  meta["emotions"] = data.emotion_names;
  meta["features"] = rc.features;
  ad::save_checkpoint((fs::path(out) / "model.cmlc").string(), params, meta);
  io::write_text_atomic((fs::path(out) / "train_log.jsonl").string(), result.log.to_jsonl());
  io::write_text_atomic((fs::path(out) / "run_config.json").string(), rc.to_json().dump(2) + "\n");
  std::printf("trained %zu epochs (best %zu), checkpoint in %s\n", result.log.stopping_epoch, result.log.best_epoch,
              out.c_str());
  return 0;
}

int cmd_crossval(const CommonOptions& o, const std::string& out, std::size_t folds, std::size_t jobs, bool plain_accuracy,
                 bool verbose) {
  const auto m = read_manifest(o);
  const auto rc = resolve(o, m, o.manifest);
  const auto data = load_dataset(m, rc);
  const auto plan = build_fold_plan(data.speakers(), folds, data.id, rc.train.seed);
  CrossvalOptions opt;
  opt.jobs = jobs;
  opt.accuracy = plain_accuracy ? AccuracyKind::plain : AccuracyKind::balanced;
  opt.verbose = verbose;
  auto report = run_crossval(data, plan, rc.model, rc.train, opt);
  report.config["run"] = rc.to_json();
  report.fingerprint = rc.fingerprint() + "-" + report.fingerprint;
  write_report(report, out);
  print_table_row(report);
  return 0;
}

int cmd_kappa(const std::string& annotations, const std::string& out) {
  std::ifstream in(annotations);
  if (!in) throw IoError("cannot open " + annotations);
  const auto m = annotations_from_csv(in);
  const double kappa = fleiss_kappa(m);
  const json j = {{"items", m.n_items}, {"categories", m.categories}, {"fleiss_kappa", kappa}};
  if (!out.empty()) io::write_text_atomic(out, j.dump(2) + "\n");
  std::printf("Fleiss kappa: %.6f over %zu items\n", kappa, m.n_items);
  return 0;
}

int cmd_stats(const std::string& manifest, const std::vector<std::string>& vocab, const std::string& out,
              std::size_t threshold) {
  ManifestOptions mo;
  mo.vocabulary = vocab;
  const auto m = load_manifest(manifest, mo);
  const auto r = corpus_stats(m, threshold);
  if (!out.empty()) {
    fs::create_directories(out);
    io::write_text_atomic((fs::path(out) / "stats.json").string(), r.to_json().dump(2) + "\n");
    io::write_text_atomic((fs::path(out) / "emotions.csv").string(), r.emotion_csv());
    io::write_text_atomic((fs::path(out) / "speakers.csv").string(), r.speaker_csv());
  }
  std::printf("%s\n", r.to_json().dump(2).c_str());
  return 0;
}

int cmd_export(const CommonOptions& o, const std::string& checkpoint, const std::string& out) {
  const auto ckpt = ad::read_checkpoint(checkpoint);
  const auto m = read_manifest(o);
  auto rc = resolve(o, m, o.manifest);
  rc.model = ckpt.meta.at("model").get<ModelConfig>();
  if (ckpt.meta.contains("features")) rc.features = ckpt.meta["features"].get<FeatureConfig>();
  const auto data = load_dataset(m, rc);
  Model<float> model(rc.model, 0);
  ad::restore_params(ckpt, model.params());
  const auto n = export_embeddings(data, model, out, ckpt.meta.value("fingerprint", std::string()));
  std::printf("exported %zu embeddings of width %zu to %s\n", n, rc.model.embedding_width(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CAMuLeNet speech emotion recognition toolkit"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string out;
  std::size_t folds = 10, jobs = 1, threshold = 41;
  bool plain_accuracy = false, verbose = false;
  std::string annotations, checkpoint;
  std::vector<std::string> vocab;
  SynthConfig synth;

  auto* featurize = app.add_subcommand("featurize", "extract spectrogram and MFCC TensorFiles (cached by content hash)");
  add_common(featurize, common, false);
  featurize->add_option("--out", out, "output directory (default $CAMULENET_CACHE/<dataset>)");

  auto* train_cmd = app.add_subcommand("train", "train one model on all speakers with a held-out validation slice");
  add_common(train_cmd, common, true);
  train_cmd->add_option("--out", out, "output directory")->required();

  auto* cv = app.add_subcommand("crossval", "leave-speaker-out cross-validation");
  add_common(cv, common, true);
  cv->add_option("--out", out, "report directory")->required();
  cv->add_option("--folds", folds, "number of speaker folds (default 10)");
  cv->add_option("--jobs", jobs, "folds trained in parallel (default 1)");
  cv->add_flag("--plain-accuracy", plain_accuracy, "report plain accuracy instead of mean per-class recall as WA");
  cv->add_flag("--verbose", verbose, "print per-fold progress");

  auto* kappa = app.add_subcommand("kappa", "Fleiss kappa from item_id,annotator,label CSV");
  kappa->add_option("annotations", annotations, "annotation CSV")->required();
  kappa->add_option("--out", out, "write the result as JSON");

  auto* stats = app.add_subcommand("stats", "corpus statistics");
  std::string stats_manifest;
  stats->add_option("--manifest", stats_manifest, "dataset manifest")->required();
  stats->add_option("--vocabulary", vocab, "ordered emotion labels");
  stats->add_option("--others-threshold", threshold, "speakers with at most this many clips become 'Others' (default 41)");
  stats->add_option("--out", out, "directory for stats.json and CSV tables");

  auto* exp = app.add_subcommand("export-embeddings", "write pre-classifier embeddings for every clip");
  add_common(exp, common, false);
  exp->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  exp->add_option("--out", out, "output directory")->required();

  auto* syn = app.add_subcommand("synth", "generate a synthetic corpus (WAV files and manifest)");
  syn->add_option("--out", out, "output directory")->required();
  syn->add_option("--speakers", synth.n_speakers, "number of speakers");
  syn->add_option("--clips", synth.clips_per_speaker, "clips per speaker");
  syn->add_option("--emotions", synth.n_emotions, "number of emotion classes");
  syn->add_option("--duration", synth.duration_s, "clip length in seconds");
  syn->add_option("--seed", synth.seed, "random seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*featurize) return cmd_featurize(common, out);
    if (*train_cmd) return cmd_train(common, out);
    if (*cv) return cmd_crossval(common, out, folds, jobs, plain_accuracy, verbose);
    if (*kappa) return cmd_kappa(annotations, out);
    if (*stats) return cmd_stats(stats_manifest, vocab, out, threshold);
    if (*exp) return cmd_export(common, checkpoint, out);
    if (*syn) return cmd_synth(synth, out);
  } catch (const SpeakerLeakError& e) {
    std::fprintf(stderr, "speaker leak: %s\n", e.what());
    return kExitLeak;
  } catch (const DivergedError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
