#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "camulenet/errors.hpp"

namespace camulenet::dsp {

enum class Gender { male = 0, female = 1 };

inline std::string to_string(Gender g) { return g == Gender::male ? "male" : "female"; }

inline Gender parse_gender(const std::string& s) {
  if (s == "male" || s == "m" || s == "M") return Gender::male;
  if (s == "female" || s == "f" || s == "F") return Gender::female;
  throw ConfigError("unknown gender '" + s + "' (expected male or female)");
}

struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 16000;
  std::string clip_id;
  std::string speaker_id;
  Gender gender = Gender::male;
  int emotion = 0;
  std::string language;
};

inline constexpr int kCanonicalSampleRate = 16000;

inline bool supported_sample_rate(int sr) { return sr == 8000 || sr == 16000 || sr == 22050 || sr == 44100; }

// Linear-interpolation resampler.
inline std::vector<double> resample_linear(const std::vector<double>& in, int from_sr, int to_sr) {
  if (from_sr == to_sr || in.empty()) return in;
  const auto n_out = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(static_cast<double>(in.size()) * to_sr / from_sr)));
  std::vector<double> out(n_out);
  const double step = static_cast<double>(from_sr) / to_sr;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double t = static_cast<double>(i) * step;
    const auto i0 = static_cast<std::size_t>(t);
    if (i0 + 1 >= in.size()) {
      out[i] = in.back();
    } else {
      const double frac = t - static_cast<double>(i0);
      out[i] = in[i0] * (1.0 - frac) + in[i0 + 1] * frac;
    }
  }
  return out;
}

// Resample -> truncate -> DC removal -> peak normalisation -> zero-pad to
// exactly target_sr * target_len_s samples.
inline AudioClip preprocess(const AudioClip& raw, int target_sr = kCanonicalSampleRate, double target_len_s = 10.0) {
  if (raw.samples.empty()) throw EmptyAudio("clip '" + raw.clip_id + "' has no samples");
  if (raw.sample_rate <= 0) throw CorruptAudio("clip '" + raw.clip_id + "' has non-positive sample rate");
  if (!supported_sample_rate(target_sr)) throw ConfigError("unsupported target sample rate " + std::to_string(target_sr));
  if (!(target_len_s > 0.0)) throw ConfigError("target length must be positive");
  for (const double s : raw.samples) {
    if (!std::isfinite(s)) throw CorruptAudio("clip '" + raw.clip_id + "' contains non-finite samples");
  }

  AudioClip out = raw;
  out.sample_rate = target_sr;
  out.samples = resample_linear(raw.samples, raw.sample_rate, target_sr);
  const auto target = static_cast<std::size_t>(std::llround(target_sr * target_len_s));
  if (out.samples.size() > target) out.samples.resize(target);

  double mean = 0.0;
  for (const double s : out.samples) mean += s;
  mean /= static_cast<double>(out.samples.size());
  double peak = 0.0;
  for (auto& s : out.samples) {
    s -= mean;
    peak = std::max(peak, std::abs(s));
  }
  if (peak > 1e-12) {
    for (auto& s : out.samples) s /= peak;
  } else {
    std::fill(out.samples.begin(), out.samples.end(), 0.0);
  }
  out.samples.resize(target, 0.0);
  return out;
}

}  // namespace camulenet::dsp
