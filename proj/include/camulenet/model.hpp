#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "camulenet/encoders.hpp"
#include "camulenet/fusion.hpp"
#include "camulenet/heads.hpp"

namespace camulenet {

enum class ModelMode { baseline, camulenet, camulenet_single_task, camulenet_no_coattention };

inline std::string to_string(ModelMode m) {
  switch (m) {
    case ModelMode::baseline: return "baseline";
    case ModelMode::camulenet: return "camulenet";
    case ModelMode::camulenet_single_task: return "camulenet_single_task";
    case ModelMode::camulenet_no_coattention: return "camulenet_no_coattention";
  }
  return "?";
}

inline ModelMode parse_model_mode(const std::string& s) {
  if (s == "baseline") return ModelMode::baseline;
  if (s == "camulenet") return ModelMode::camulenet;
  if (s == "camulenet_single_task") return ModelMode::camulenet_single_task;
  if (s == "camulenet_no_coattention") return ModelMode::camulenet_no_coattention;
  throw ConfigError("unknown model mode '" + s + "'");
}

// Only the full model trains the gender head; both ablations are single-task.
inline bool is_multitask(ModelMode m) { return m == ModelMode::camulenet; }

struct ModelConfig {
  ModelMode mode = ModelMode::camulenet;
  std::size_t n_emotions = 7;
  SpectrogramEncoderConfig spectrogram;
  MfccEncoderConfig mfcc;
  FusionConfig fusion;  // L and W follow the pretrained embedding
  BaselineHeadConfig baseline;

  std::size_t L() const { return fusion.L; }
  std::size_t W() const { return fusion.W; }

  // Full-size defaults for a pretrained embedding of shape L × W.
  static ModelConfig full(ModelMode mode, std::size_t n_emotions, std::size_t L, std::size_t W) {
    ModelConfig c;
    c.mode = mode;
    c.n_emotions = n_emotions;
    c.fusion.L = L;
    c.fusion.W = W;
    c.fusion.mfcc_dim = 2 * c.mfcc.hidden;
    return c;
  }

  // Reduced widths for fast runs: tiny image encoder, 16-unit GRU, T = D_hidden = 32.
  static ModelConfig tiny(ModelMode mode, std::size_t n_emotions, std::size_t L, std::size_t W) {
    ModelConfig c = full(mode, n_emotions, L, W);
    c.spectrogram = SpectrogramEncoderConfig::tiny(32);
    c.mfcc.hidden = 16;
    c.fusion.mfcc_dim = 32;
    c.fusion.T = 32;
    c.fusion.D_hidden = 32;
    c.baseline.conv_channels = 8;
    c.baseline.fc_hidden = 32;
    return c;
  }

  void validate() const {
    if (n_emotions < 2) throw ConfigError("need at least two emotion classes");
    if (fusion.mfcc_dim != 2 * mfcc.hidden) throw ConfigError("fusion mfcc_dim must equal twice the GRU hidden size");
    fusion.validate();
  }

  // Width of the embedding handed to the classification heads.
  std::size_t embedding_width() const {
    switch (mode) {
      case ModelMode::baseline: return baseline.fc_hidden;
      case ModelMode::camulenet_no_coattention: return fusion.spec_dim + fusion.mfcc_dim + fusion.W;
      default: return fusion.fused_width();
    }
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"mode", to_string(c.mode)},
       {"n_emotions", c.n_emotions},
       {"spectrogram", {{"preset", to_string(c.spectrogram.preset)}, {"plane", c.spectrogram.plane}, {"dropout", c.spectrogram.dropout}}},
       {"mfcc", {{"n_mfcc", c.mfcc.n_mfcc}, {"hidden", c.mfcc.hidden}, {"layers", c.mfcc.layers}, {"dropout", c.mfcc.dropout}}},
       {"fusion", c.fusion},
       {"baseline", c.baseline}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.mode = parse_model_mode(j.at("mode").get<std::string>());
  c.n_emotions = j.at("n_emotions");
  const auto& s = j.at("spectrogram");
  c.spectrogram.preset = parse_preset(s.at("preset").get<std::string>());
  c.spectrogram.plane = s.at("plane");
  c.spectrogram.dropout = s.at("dropout");
  const auto& m = j.at("mfcc");
  c.mfcc.n_mfcc = m.at("n_mfcc");
  c.mfcc.hidden = m.at("hidden");
  c.mfcc.layers = m.at("layers");
  c.mfcc.dropout = m.at("dropout");
  c.fusion = j.at("fusion").get<FusionConfig>();
  c.baseline = j.at("baseline").get<BaselineHeadConfig>();
}

// One mini-batch of prepared features.
template <class T>
struct BatchTensors {
  ad::Tensor<T> plane;   // [B, 1, P, P]
  ad::Tensor<T> mfcc;    // [B, S, n_mfcc]
  ad::Tensor<T> xw;      // [B, L, W]
  ad::Tensor<T> pooled;  // [B, W]
  std::vector<int> emotion;
  std::vector<int> gender;
  std::size_t size() const { return emotion.size(); }
};

template <class T>
struct ForwardOutput {
  HeadOutputs<T> heads;
  ad::Tensor<T> embedding;  // input to the classification layer(s)
  FusionTrace<T> trace;     // populated in co-attention modes
};

// CAMuLeNet, its ablations and the pooled-embedding baseline behind one forward().
template <class T>
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    CounterRng rng(seed);
    if (cfg_.mode == ModelMode::baseline) {
      baseline_ = BaselineClassifier<T>(cfg_.fusion.W, cfg_.n_emotions, cfg_.baseline, rng);
      return;
    }
    spec_enc_ = SpectrogramEncoder<T>(cfg_.spectrogram, rng);
    mfcc_enc_ = MfccEncoder<T>(cfg_.mfcc, rng);
    if (cfg_.mode != ModelMode::camulenet_no_coattention) fusion_ = CoAttentionFusion<T>(cfg_.fusion, rng);
    heads_ = MultitaskHeads<T>(cfg_.embedding_width(), cfg_.n_emotions, is_multitask(cfg_.mode), rng);
  }

  const ModelConfig& config() const { return cfg_; }

  ForwardOutput<T> forward(const BatchTensors<T>& batch, ad::Mode mode, CounterRng& rng) {
    ForwardOutput<T> out;
    if (cfg_.mode == ModelMode::baseline) {
      auto b = baseline_(batch.pooled, mode, rng);
      out.heads.emotion_logits = b.logits;
      out.embedding = b.hidden;
      return out;
    }
    const auto x_s = spec_enc_(batch.plane, mode, rng);
    const auto x_m = mfcc_enc_(batch.mfcc, mode, rng);
    if (cfg_.mode == ModelMode::camulenet_no_coattention) {
      const auto pooled = ad::mean_axis(batch.xw, 1);
      out.embedding = ad::dropout(ad::concat<T>({x_s, x_m.final_state, pooled}, 1), cfg_.fusion.dropout, mode, rng);
    } else {
      out.trace = fusion_(x_s, x_m.final_state, batch.xw, mode, rng);
      out.embedding = out.trace.fused;
    }
    out.heads = heads_(out.embedding);
    return out;
  }

  LossTerms<T> loss(const ForwardOutput<T>& out, const BatchTensors<T>& batch, const MultitaskLossConfig& cfg) const {
    if (cfg_.mode == ModelMode::baseline) {
      LossTerms<T> t;
      t.total = ad::cross_entropy(out.heads.emotion_logits, batch.emotion);
      t.emotion = t.total.item();
      return t;
    }
    MultitaskLossConfig effective = cfg;
    if (!is_multitask(cfg_.mode)) effective.beta = 0.0;
    return multitask_loss(out.heads, batch.emotion, batch.gender, effective);
  }

  ad::ParamList<T> params() {
    ad::ParamList<T> out;
    if (cfg_.mode == ModelMode::baseline) {
      baseline_.collect(out, "baseline");
      return out;
    }
    spec_enc_.collect(out, "spectrogram");
    mfcc_enc_.collect(out, "mfcc");
    if (cfg_.mode != ModelMode::camulenet_no_coattention) fusion_.collect(out, "fusion");
    heads_.collect(out, "heads");
    return out;
  }

  SpectrogramEncoder<T>& spectrogram_encoder() { return spec_enc_; }
  MfccEncoder<T>& mfcc_encoder() { return mfcc_enc_; }
  CoAttentionFusion<T>& fusion() { return fusion_; }
  MultitaskHeads<T>& heads() { return heads_; }

 private:
  ModelConfig cfg_;
  SpectrogramEncoder<T> spec_enc_;
  MfccEncoder<T> mfcc_enc_;
  CoAttentionFusion<T> fusion_;
  MultitaskHeads<T> heads_;
  BaselineClassifier<T> baseline_;
};

}  // namespace camulenet
