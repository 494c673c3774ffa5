#pragma once

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "camulenet/ad/adam.hpp"
#include "camulenet/ad/checkpoint.hpp"
#include "camulenet/features.hpp"
#include "camulenet/metrics.hpp"
#include "camulenet/model.hpp"

namespace camulenet {

struct TrainConfig {
  std::size_t batch_size = 64;
  double lr = 5e-5;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  double min_delta = 1e-4;
  std::uint64_t seed = 42;
  ModelMode mode = ModelMode::camulenet;
  MultitaskLossConfig loss;
  double val_speaker_fraction = 0.1;

  // Baseline head: Adam 1e-4. CAMuLeNet and its ablations: 5e-5, batches of 64.
  static TrainConfig defaults(ModelMode mode) {
    TrainConfig c;
    c.mode = mode;
    if (mode == ModelMode::baseline) c.lr = 1e-4;
    return c;
  }

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(val_speaker_fraction > 0.0 && val_speaker_fraction < 1.0)) {
      throw ConfigError("val_speaker_fraction must lie in (0, 1)");
    }
    loss.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size}, {"lr", c.lr},         {"max_epochs", c.max_epochs},
       {"patience", c.patience},     {"min_delta", c.min_delta}, {"seed", c.seed},
       {"mode", to_string(c.mode)},  {"loss", c.loss},     {"val_speaker_fraction", c.val_speaker_fraction}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.at("batch_size");
  c.lr = j.at("lr");
  c.max_epochs = j.at("max_epochs");
  c.patience = j.at("patience");
  c.min_delta = j.at("min_delta");
  c.seed = j.at("seed");
  c.mode = parse_model_mode(j.at("mode").get<std::string>());
  c.loss = j.at("loss").get<MultitaskLossConfig>();
  c.val_speaker_fraction = j.at("val_speaker_fraction");
}

// Stops once validation loss has failed to beat the best value by more than
// min_delta for `patience` consecutive epochs.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  // Returns true when training should stop after this epoch.
  bool observe(std::size_t epoch, double val_loss) {
    if (val_loss < best_ - min_delta_) {
      best_ = val_loss;
      best_epoch_ = epoch;
      bad_ = 0;
      return false;
    }
    return ++bad_ >= patience_;
  }

  bool improved_at(std::size_t epoch) const { return best_epoch_ == epoch && bad_ == 0; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t bad_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_wa = 0.0;
  double val_wf1 = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t stopping_epoch = 0;
  std::size_t best_epoch = 0;
  double wall_clock_s = 0.0;

  // One JSON object per epoch; wall-clock time only when requested.
  std::string to_jsonl(bool with_timing = false) const {
    std::string out;
    for (const auto& e : epochs) {
      nlohmann::json j = {{"epoch", e.epoch},       {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                          {"val_wa", e.val_wa},     {"val_wf1", e.val_wf1},       {"best_epoch", best_epoch},
                          {"stopping_epoch", stopping_epoch}};
      if (with_timing) j["wall_clock_s"] = wall_clock_s;
      out += j.dump() + "\n";
    }
    return out;
  }
};

struct EvalResult {
  double loss = 0.0;
  std::vector<int> predictions;
  std::vector<int> truth;
  std::vector<int> gender_predictions;  // empty for single-task models
  std::vector<int> gender_truth;
  std::vector<std::vector<float>> embeddings;  // filled when requested
};

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

template <class T>
EvalResult evaluate(Model<T>& model, const std::vector<Sample>& samples, const TrainConfig& cfg,
                    bool keep_embeddings = false) {
  if (samples.empty()) throw EmptySplit("evaluation set is empty");
  ad::NoGradGuard no_grad;
  CounterRng unused(0);
  EvalResult r;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += cfg.batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + cfg.batch_size); ++i) idx.push_back(i);
    const auto batch = make_batch<T>(samples, idx, model.config());
    const auto out = model.forward(batch, ad::Mode::eval, unused);
    loss_sum += static_cast<double>(model.loss(out, batch, cfg.loss).total.item()) * static_cast<double>(idx.size());
    const auto& logits = out.heads.emotion_logits;
    const std::size_t c = logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = logits.data().subspan(b * c, c);
      r.predictions.push_back(argmax(row.begin(), row.end()));
      r.truth.push_back(batch.emotion[b]);
      if (out.heads.gender_logit.defined()) {
        r.gender_predictions.push_back(out.heads.gender_logit[b] > T(0) ? 1 : 0);
        r.gender_truth.push_back(batch.gender[b]);
      }
      if (keep_embeddings) {
        const std::size_t w = out.embedding.dim(1);
        const auto e = out.embedding.data().subspan(b * w, w);
        r.embeddings.emplace_back(e.begin(), e.end());
      }
    }
  }
  r.loss = loss_sum / static_cast<double>(samples.size());
  return r;
}

struct TrainResult {
  std::vector<std::uint8_t> checkpoint;
  TrainLog log;
};

inline nlohmann::json checkpoint_meta(const ModelConfig& mc, const TrainConfig& tc) {
  return {{"model", mc}, {"train", tc}};
}

// Trains `model` in place. On return the model holds the parameters from the
// epoch with the lowest validation loss.
template <class T>
TrainResult train(Model<T>& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw EmptySplit("training set is empty");
  if (val_set.empty()) throw EmptySplit("validation set is empty");
  const auto started = std::chrono::steady_clock::now();
  auto params = model.params();
  ad::Adam<T> opt(params, ad::AdamConfig{cfg.lr});
  EarlyStopper stopper(cfg.patience, cfg.min_delta);
  const CounterRng root(cfg.seed);
  const std::size_t n_classes = model.config().n_emotions;

  std::vector<std::vector<T>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : params) best.emplace_back(p.tensor->data().begin(), p.tensor->data().end());
  };
  snapshot();

  TrainLog log;
  std::vector<std::size_t> order = all_indices(train_set.size());
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    CounterRng shuffle_rng = root.split(2 * epoch);
    CounterRng dropout_rng = root.split(2 * epoch + 1);
    shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
        const auto batch = make_batch<T>(train_set, idx, model.config());
        opt.zero_grad();
        const auto out = model.forward(batch, ad::Mode::train, dropout_rng);
        const auto terms = model.loss(out, batch, cfg.loss);
        const double l = static_cast<double>(terms.total.item());
        if (!std::isfinite(l)) throw DivergedError(epoch, "training loss is " + std::to_string(l));
        terms.total.backward();
        opt.step();
        loss_sum += l * static_cast<double>(idx.size());
      }
    } catch (const NonFiniteError& e) {
      throw DivergedError(epoch, e.what());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    EvalResult val;
    try {
      val = evaluate(model, val_set, cfg);
    } catch (const NonFiniteError& e) {
      throw DivergedError(epoch, e.what());
    }
    if (!std::isfinite(val.loss)) throw DivergedError(epoch, "validation loss is " + std::to_string(val.loss));
    rec.val_loss = val.loss;
    const auto m = weighted_metrics(val.predictions, val.truth, n_classes);
    rec.val_wa = m.wa;
    rec.val_wf1 = m.wf1;
    log.epochs.push_back(rec);
    const bool stop = stopper.observe(epoch, val.loss);
    if (stopper.improved_at(epoch)) snapshot();
    log.stopping_epoch = epoch;
    if (stop) break;
  }
  log.best_epoch = stopper.best_epoch();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params[k].tensor->mutable_data();
    std::copy(best[k].begin(), best[k].end(), dst.begin());
  }
  log.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {ad::encode_checkpoint(params, checkpoint_meta(model.config(), cfg)), log};
}

// Holds out a fraction of speakers (at least one) for early stopping.
struct SpeakerSplit {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<std::string> val_speakers;
};

inline SpeakerSplit split_validation_speakers(const std::vector<Sample>& samples, double fraction, std::uint64_t seed) {
  std::vector<std::string> speakers;
  for (const auto& s : samples) speakers.push_back(s.speaker_id);
  std::sort(speakers.begin(), speakers.end());
  speakers.erase(std::unique(speakers.begin(), speakers.end()), speakers.end());
  if (speakers.size() < 2) {
    throw InsufficientSpeakers("need at least two training speakers to hold out a validation speaker, got " +
                               std::to_string(speakers.size()));
  }
  CounterRng rng(seed);
  shuffle(speakers.begin(), speakers.end(), rng);
  const auto n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fraction * static_cast<double>(speakers.size()))),
                                             1, speakers.size() - 1);
  SpeakerSplit out;
  out.val_speakers.assign(speakers.begin(), speakers.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(out.val_speakers.begin(), out.val_speakers.end());
  for (const auto& s : samples) {
    const bool is_val = std::binary_search(out.val_speakers.begin(), out.val_speakers.end(), s.speaker_id);
    (is_val ? out.val : out.train).push_back(s);
  }
  return out;
}

}  // namespace camulenet
