#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "camulenet/ad/nn.hpp"

namespace camulenet {

struct MultitaskLossConfig {
  double alpha = 0.4;  // emotion (categorical CE) weight
  double beta = 0.1;   // gender (binary CE) weight
  double gamma = 0.2;  // additive constant

  void validate() const {
    if (!(alpha > 0.0)) throw ConfigError("loss weight alpha must be positive");
    if (!(beta >= 0.0)) throw ConfigError("loss weight beta must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const MultitaskLossConfig& c) {
  j = {{"alpha", c.alpha}, {"beta", c.beta}, {"gamma", c.gamma}};
}
inline void from_json(const nlohmann::json& j, MultitaskLossConfig& c) {
  c.alpha = j.at("alpha");
  c.beta = j.at("beta");
  c.gamma = j.at("gamma");
}

template <class T>
struct HeadOutputs {
  ad::Tensor<T> emotion_logits;  // [B, C]
  ad::Tensor<T> gender_logit;    // [B]; undefined for single-task models
};

// Emotion head: FC to C logits. Gender head: FC to one logit (sigmoid + BCE).
template <class T>
struct MultitaskHeads {
  ad::Linear<T> emotion;
  ad::Linear<T> gender;
  bool has_gender = true;

  MultitaskHeads() = default;
  MultitaskHeads(std::size_t in, std::size_t n_emotions, bool with_gender, CounterRng& rng) : has_gender(with_gender) {
    if (n_emotions < 2) throw ConfigError("need at least two emotion classes, got " + std::to_string(n_emotions));
    emotion = ad::Linear<T>(in, n_emotions, rng);
    if (has_gender) gender = ad::Linear<T>(in, 1, rng);
  }

  HeadOutputs<T> operator()(const ad::Tensor<T>& fused) const {
    if (fused.rank() != 2 || fused.dim(1) != emotion.in_features()) {
      throw ShapeError("heads expect [B, " + std::to_string(emotion.in_features()) + "], got " + ad::shape_str(fused.shape()));
    }
    HeadOutputs<T> out;
    out.emotion_logits = emotion(fused);
    if (has_gender) out.gender_logit = ad::reshape(gender(fused), {fused.dim(0)});
    return out;
  }

  void collect(ad::ParamList<T>& out, const std::string& prefix) {
    emotion.collect(out, prefix + ".emotion");
    if (has_gender) gender.collect(out, prefix + ".gender");
  }
};

template <class T>
struct LossTerms {
  ad::Tensor<T> total;
  T emotion = T(0);
  T gender = T(0);
};

// total = α·CE(emotion) + β·BCE(gender) + γ. The gender term is omitted when the
// model has no gender head or β = 0.
template <class T>
LossTerms<T> multitask_loss(const HeadOutputs<T>& out, const std::vector<int>& emotion_labels,
                            const std::vector<int>& gender_labels, const MultitaskLossConfig& cfg) {
  cfg.validate();
  LossTerms<T> terms;
  const auto ce = ad::cross_entropy(out.emotion_logits, emotion_labels);
  terms.emotion = ce.item();
  auto total = ad::scale(ce, static_cast<T>(cfg.alpha));
  if (out.gender_logit.defined() && cfg.beta > 0.0) {
    const auto bce = ad::bce_with_logits(out.gender_logit, gender_labels);
    terms.gender = bce.item();
    total = ad::add(total, ad::scale(bce, static_cast<T>(cfg.beta)));
  }
  terms.total = ad::add_scalar(total, static_cast<T>(cfg.gamma));
  return terms;
}

struct BaselineHeadConfig {
  std::size_t conv_channels = 64;
  std::size_t kernel = 5;
  std::size_t pool = 2;
  std::size_t fc_hidden = 128;
  double dropout = 0.3;
};

inline void to_json(nlohmann::json& j, const BaselineHeadConfig& c) {
  j = {{"conv_channels", c.conv_channels}, {"kernel", c.kernel}, {"pool", c.pool}, {"fc_hidden", c.fc_hidden},
       {"dropout", c.dropout}};
}
inline void from_json(const nlohmann::json& j, BaselineHeadConfig& c) {
  c.conv_channels = j.at("conv_channels");
  c.kernel = j.at("kernel");
  c.pool = j.at("pool");
  c.fc_hidden = j.at("fc_hidden");
  c.dropout = j.at("dropout");
}

template <class T>
struct BaselineOutput {
  ad::Tensor<T> logits;  // [B, C]
  ad::Tensor<T> hidden;  // [B, fc_hidden], penultimate activations
};

// Classifier over a mean-pooled pretrained embedding:
// conv1d -> batch norm -> ReLU -> dropout -> max pool -> flatten -> FC -> ReLU -> FC.
template <class T>
struct BaselineClassifier {
  BaselineHeadConfig cfg;
  std::size_t input_width = 0;
  ad::Tensor<T> conv_weight;  // [channels, 1, 1, kernel]
  ad::Tensor<T> conv_bias;
  ad::BatchNorm<T> bn;
  ad::Linear<T> fc1, fc2;

  BaselineClassifier() = default;
  BaselineClassifier(std::size_t width, std::size_t n_classes, const BaselineHeadConfig& c, CounterRng& rng)
      : cfg(c), input_width(width) {
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw ConfigError("baseline dropout must lie in [0, 1)");
    if (cfg.kernel == 0 || cfg.pool == 0 || cfg.conv_channels == 0) throw ConfigError("baseline conv sizes must be positive");
    if (width < cfg.kernel + cfg.pool - 1) {
      throw ShapeError("baseline input width " + std::to_string(width) + " is too small for kernel " +
                       std::to_string(cfg.kernel) + " and pool " + std::to_string(cfg.pool));
    }
    if (n_classes < 2) throw ConfigError("need at least two emotion classes");
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.kernel));
    conv_weight = ad::uniform_param<T>({cfg.conv_channels, 1, 1, cfg.kernel}, bound, rng);
    conv_bias = ad::uniform_param<T>({cfg.conv_channels}, bound, rng);
    bn = ad::BatchNorm<T>(cfg.conv_channels);
    fc1 = ad::Linear<T>(cfg.conv_channels * pooled_length(), cfg.fc_hidden, rng);
    fc2 = ad::Linear<T>(cfg.fc_hidden, n_classes, rng);
  }

  std::size_t conv_length() const { return input_width - cfg.kernel + 1; }
  std::size_t pooled_length() const { return (conv_length() - cfg.pool) / cfg.pool + 1; }

  // x: [B, D]
  BaselineOutput<T> operator()(const ad::Tensor<T>& x, ad::Mode mode, CounterRng& rng) {
    if (x.rank() != 2 || x.dim(1) != input_width) {
      throw ShapeError("baseline head expects [B, " + std::to_string(input_width) + "], got " + ad::shape_str(x.shape()));
    }
    const std::size_t bs = x.dim(0), ch = cfg.conv_channels;
    auto h = ad::conv2d(ad::reshape(x, {bs, 1, 1, input_width}), conv_weight, &conv_bias, 1, 0);
    h = ad::reshape(h, {bs, ch, conv_length()});
    h = ad::relu(bn(h, mode));
    h = ad::dropout(h, cfg.dropout, mode, rng);
    h = ad::maxpool2d(ad::reshape(h, {bs, ch, 1, conv_length()}), 1, cfg.pool, 1, cfg.pool);
    h = ad::reshape(h, {bs, ch * pooled_length()});
    BaselineOutput<T> out;
    out.hidden = ad::relu(fc1(h));
    out.logits = fc2(out.hidden);
    return out;
  }

  void collect(ad::ParamList<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".conv.weight", &conv_weight, true});
    out.push_back({prefix + ".conv.bias", &conv_bias, true});
    bn.collect(out, prefix + ".bn");
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

}  // namespace camulenet
