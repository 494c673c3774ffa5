#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "camulenet/dataset.hpp"
#include "camulenet/dsp/audio.hpp"
#include "camulenet/dsp/wav.hpp"
#include "camulenet/rng.hpp"

namespace camulenet {

// Toy corpus with a learnable emotion cue (a tone whose pitch depends on the
// emotion) on top of a speaker voice (harmonics of a gender-dependent f0).
struct SynthConfig {
  std::size_t n_speakers = 10;
  std::size_t clips_per_speaker = 4;
  std::size_t n_emotions = 2;
  double duration_s = 0.5;
  int sample_rate = 16000;
  double noise = 0.05;
  double cue_level = 0.5;
  std::uint64_t seed = 42;
};

inline std::string synth_speaker_id(std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "spk%03zu", s);
  return buf;
}

inline std::vector<std::string> synth_emotion_names(std::size_t n) {
  static const std::vector<std::string> base{"neutral", "happy", "sad", "angry", "fear", "disgust", "surprise"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(i < base.size() ? base[i] : "emotion" + std::to_string(i));
  return out;
}

inline std::vector<dsp::AudioClip> synth_corpus(const SynthConfig& cfg) {
  if (cfg.n_speakers == 0 || cfg.clips_per_speaker == 0) throw ConfigError("synthetic corpus needs speakers and clips");
  if (cfg.n_emotions < 2) throw ConfigError("synthetic corpus needs at least two emotions");
  const CounterRng root(cfg.seed);
  const auto n = static_cast<std::size_t>(std::lround(cfg.duration_s * cfg.sample_rate));
  const double sr = cfg.sample_rate;
  std::vector<dsp::AudioClip> clips;
  for (std::size_t s = 0; s < cfg.n_speakers; ++s) {
    CounterRng spk = root.split(s);
    const auto gender = s % 2 == 0 ? dsp::Gender::male : dsp::Gender::female;
    const double f0 = (gender == dsp::Gender::male ? 120.0 : 220.0) * spk.uniform(0.9, 1.1);
    const double timbre = spk.uniform(0.4, 0.8);
    for (std::size_t c = 0; c < cfg.clips_per_speaker; ++c) {
      CounterRng rng = spk.split(1000 + c);
      dsp::AudioClip clip;
      clip.sample_rate = cfg.sample_rate;
      clip.speaker_id = synth_speaker_id(s);
      clip.clip_id = clip.speaker_id + "_c" + std::to_string(c);
      clip.gender = gender;
      clip.emotion = static_cast<int>((c + s) % cfg.n_emotions);
      clip.language = "synthetic";
      const double cue_hz = 900.0 + 700.0 * clip.emotion + rng.uniform(-40.0, 40.0);
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      clip.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        double v = 0.0;
        for (int h = 1; h <= 6; ++h) v += std::pow(timbre, h - 1) * std::sin(2.0 * M_PI * f0 * h * t);
        v += cfg.cue_level * std::sin(2.0 * M_PI * cue_hz * t + phase);
        v += cfg.noise * rng.normal();
        clip.samples[i] = 0.3 * v;
      }
      clips.push_back(std::move(clip));
    }
  }
  return clips;
}

// Writes <dir>/wav/<clip_id>.wav and <dir>/manifest.csv.
inline Manifest write_synth_corpus(const SynthConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "wav");
  const auto names = synth_emotion_names(cfg.n_emotions);
  Manifest m;
  m.vocabulary = names;
  for (const auto& clip : synth_corpus(cfg)) {
    const auto rel = std::filesystem::path("wav") / (clip.clip_id + ".wav");
    dsp::write_wav16((dir / rel).string(), clip.samples, clip.sample_rate);
    ManifestRow row;
    row.clip_path = rel.string();
    row.clip_id = clip.clip_id;
    row.speaker_id = clip.speaker_id;
    row.gender = clip.gender;
    row.emotion = names[static_cast<std::size_t>(clip.emotion)];
    row.emotion_index = clip.emotion;
    row.language = clip.language;
    row.duration_s = static_cast<double>(clip.samples.size()) / clip.sample_rate;
    m.rows.push_back(row);
  }
  io::write_text_atomic((dir / "manifest.csv").string(), manifest_to_csv(m));
  return m;
}

}  // namespace camulenet
