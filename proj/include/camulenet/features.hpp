#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "camulenet/dsp/audio.hpp"
#include "camulenet/dsp/spectral.hpp"
#include "camulenet/encoders.hpp"
#include "camulenet/model.hpp"

namespace camulenet {

struct FeatureConfig {
  int sample_rate = dsp::kCanonicalSampleRate;
  double clip_seconds = 10.0;
  dsp::StftConfig stft;
  dsp::MfccConfig mfcc;
  std::size_t plane = 224;
};

inline void to_json(nlohmann::json& j, const FeatureConfig& c) {
  j = {{"sample_rate", c.sample_rate},
       {"clip_seconds", c.clip_seconds},
       {"stft", {{"window", c.stft.window}, {"hop", c.stft.hop}, {"n_fft", c.stft.n_fft},
                 {"lengths_in_samples", c.stft.lengths_in_samples}, {"log_floor", c.stft.log_floor}}},
       {"mfcc", {{"n_mfcc", c.mfcc.n_mfcc}, {"hop_samples", c.mfcc.hop_samples}, {"n_mels", c.mfcc.n_mels},
                 {"window_samples", c.mfcc.window_samples}, {"n_fft", c.mfcc.n_fft}, {"log_floor", c.mfcc.log_floor}}},
       {"plane", c.plane}};
}

inline void from_json(const nlohmann::json& j, FeatureConfig& c) {
  c.sample_rate = j.at("sample_rate");
  c.clip_seconds = j.at("clip_seconds");
  const auto& s = j.at("stft");
  c.stft.window = s.at("window");
  c.stft.hop = s.at("hop");
  c.stft.n_fft = s.at("n_fft");
  c.stft.lengths_in_samples = s.at("lengths_in_samples");
  c.stft.log_floor = s.at("log_floor");
  const auto& m = j.at("mfcc");
  c.mfcc.n_mfcc = m.at("n_mfcc");
  c.mfcc.hop_samples = m.at("hop_samples");
  c.mfcc.n_mels = m.at("n_mels");
  c.mfcc.window_samples = m.at("window_samples");
  c.mfcc.n_fft = m.at("n_fft");
  c.mfcc.log_floor = m.at("log_floor");
  c.plane = j.at("plane");
}

// Network-ready features for one clip.
struct Sample {
  std::string clip_id;
  std::string speaker_id;
  int emotion = 0;
  int gender = 0;  // 0 male, 1 female
  Matrix<float> plane;  // P × P spectrogram image
  Matrix<float> mfcc;   // S × n_mfcc, normalised
  Matrix<float> xw;     // L × W pretrained frames (may be empty for the baseline)
  std::vector<float> pooled;  // W, frame mean of xw
};

struct Dataset {
  std::string id;
  std::vector<std::string> emotion_names;
  std::vector<Sample> samples;

  std::size_t n_emotions() const { return emotion_names.size(); }
  std::vector<std::string> speakers() const {
    std::vector<std::string> s;
    for (const auto& x : samples) s.push_back(x.speaker_id);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
  }
};

struct FrequencyFeatures {
  Matrix<float> plane;
  Matrix<float> mfcc;
};

// Spectrogram image and normalised MFCCs from an already preprocessed clip.
inline FrequencyFeatures frequency_features(const dsp::AudioClip& clip, const FeatureConfig& cfg) {
  const auto spec = dsp::stft_spectrogram(clip, cfg.stft);
  const auto mf = dsp::mfcc(clip, cfg.mfcc);
  return {spectrogram_to_plane(spec.values, cfg.plane), normalize_mfcc(mf.values)};
}

inline Sample make_sample(const dsp::AudioClip& clip, FrequencyFeatures freq, Matrix<float> xw) {
  Sample s;
  s.clip_id = clip.clip_id;
  s.speaker_id = clip.speaker_id;
  s.emotion = clip.emotion;
  s.gender = static_cast<int>(clip.gender);
  s.plane = std::move(freq.plane);
  s.mfcc = std::move(freq.mfcc);
  if (!xw.empty()) s.pooled = mean_pool_rows(xw);
  s.xw = std::move(xw);
  return s;
}

// Gathers samples[indices] into batch tensors. All clips must share feature shapes.
template <class T>
BatchTensors<T> make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
                           const ModelConfig& cfg) {
  if (indices.empty()) throw EmptySplit("cannot build an empty batch");
  BatchTensors<T> b;
  const std::size_t bs = indices.size();
  const Sample& first = samples.at(indices[0]);
  auto check = [&](const Matrix<float>& m, const Matrix<float>& ref, const char* what, const Sample& s) {
    if (m.rows != ref.rows || m.cols != ref.cols) {
      throw ShapeError(std::string(what) + " of clip '" + s.clip_id + "' is " + std::to_string(m.rows) + "x" +
                       std::to_string(m.cols) + ", batch expects " + std::to_string(ref.rows) + "x" + std::to_string(ref.cols));
    }
  };
  const bool baseline = cfg.mode == ModelMode::baseline;
  std::vector<T> plane, mfcc, xw, pooled;
  for (const auto i : indices) {
    const Sample& s = samples.at(i);
    b.emotion.push_back(s.emotion);
    b.gender.push_back(s.gender);
    if (baseline) {
      if (s.pooled.size() != cfg.W()) {
        throw ShapeError("pooled embedding of clip '" + s.clip_id + "' has width " + std::to_string(s.pooled.size()) +
                         ", model expects " + std::to_string(cfg.W()));
      }
      pooled.insert(pooled.end(), s.pooled.begin(), s.pooled.end());
      continue;
    }
    check(s.plane, first.plane, "spectrogram plane", s);
    check(s.mfcc, first.mfcc, "MFCC matrix", s);
    if (s.xw.rows != cfg.L() || s.xw.cols != cfg.W()) {
      throw ShapeError("pretrained embedding of clip '" + s.clip_id + "' is " + std::to_string(s.xw.rows) + "x" +
                       std::to_string(s.xw.cols) + ", model expects " + std::to_string(cfg.L()) + "x" + std::to_string(cfg.W()));
    }
    plane.insert(plane.end(), s.plane.values.begin(), s.plane.values.end());
    mfcc.insert(mfcc.end(), s.mfcc.values.begin(), s.mfcc.values.end());
    xw.insert(xw.end(), s.xw.values.begin(), s.xw.values.end());
  }
  if (baseline) {
    b.pooled = ad::Tensor<T>({bs, cfg.W()}, std::move(pooled));
  } else {
    b.plane = ad::Tensor<T>({bs, 1, first.plane.rows, first.plane.cols}, std::move(plane));
    b.mfcc = ad::Tensor<T>({bs, first.mfcc.rows, first.mfcc.cols}, std::move(mfcc));
    b.xw = ad::Tensor<T>({bs, cfg.L(), cfg.W()}, std::move(xw));
  }
  return b;
}

}  // namespace camulenet
