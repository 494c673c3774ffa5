#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "camulenet/dataset.hpp"
#include "camulenet/dsp/wav.hpp"
#include "camulenet/encoders.hpp"
#include "camulenet/features.hpp"
#include "camulenet/tensor_file.hpp"

namespace camulenet {

// Where the pretrained frames x_w come from: the built-in reference encoder,
// or exported TensorFiles under <root>/<dataset>/<source_tag>/<clip_id>.cmlt.
struct EmbeddingSource {
  std::optional<std::filesystem::path> root;
  std::string source_tag;
  std::size_t L = 64;
  std::size_t W = 32;
  std::uint64_t seed = 42;

  bool reference() const { return !root.has_value(); }
};

inline dsp::AudioClip load_clip(const ManifestRow& row) {
  const auto wav = dsp::read_wav(row.clip_path);
  dsp::AudioClip clip;
  clip.samples = wav.samples;
  clip.sample_rate = wav.sample_rate;
  clip.clip_id = row.clip_id;
  clip.speaker_id = row.speaker_id;
  clip.gender = row.gender;
  clip.emotion = row.emotion_index;
  clip.language = row.language;
  return clip;
}

// Builds network-ready samples from raw clips. Baseline-only datasets skip the
// frequency features.
inline Dataset build_dataset(const std::vector<dsp::AudioClip>& raw, std::vector<std::string> emotion_names,
                             const FeatureConfig& fc, const EmbeddingSource& src, const std::string& dataset_id,
                             bool frequency_features_needed = true) {
  Dataset d;
  d.id = dataset_id;
  d.emotion_names = std::move(emotion_names);
  std::optional<ReferenceTinyEncoder> ref;
  if (src.reference()) ref.emplace(src.L, src.W, src.seed);
  for (const auto& clip : raw) {
    const auto pre = dsp::preprocess(clip, fc.sample_rate, fc.clip_seconds);
    FrequencyFeatures freq;
    if (frequency_features_needed) freq = frequency_features(pre, fc);
    Sample s;
    if (ref) {
      s = make_sample(pre, std::move(freq), ref->encode(pre).matrix);
    } else {
      const auto path = embedding_path(*src.root, dataset_id, src.source_tag, clip.clip_id).string();
      if (frequency_features_needed) {
        s = make_sample(pre, std::move(freq), load_pretrained_embedding(path, clip.clip_id).matrix);
      } else {
        s = make_sample(pre, std::move(freq), {});
        s.pooled = load_pooled_embedding(path, clip.clip_id);
      }
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

inline Dataset build_dataset(const Manifest& m, const FeatureConfig& fc, const EmbeddingSource& src,
                             const std::string& dataset_id, bool frequency_features_needed = true) {
  std::vector<dsp::AudioClip> clips;
  for (const auto& row : m.rows) {
    try {
      clips.push_back(load_clip(row));
    } catch (const Error& e) {
      throw IoError("clip '" + row.clip_id + "': " + e.what());
    }
  }
  return build_dataset(clips, m.vocabulary, fc, src, dataset_id, frequency_features_needed);
}

// ---------------------------------------------------------------- feature cache

struct FeaturizeSummary {
  std::size_t computed = 0;
  std::size_t skipped = 0;
  std::vector<std::string> failures;  // "clip_id: reason"
};

inline std::string feature_hash(const std::vector<std::uint8_t>& wav_bytes, const FeatureConfig& fc) {
  const nlohmann::json cfg = fc;
  return io::hex64(io::fnv1a(cfg.dump(), io::fnv1a(wav_bytes)));
}

inline bool cache_entry_current(const std::filesystem::path& path, const std::string& hash) {
  if (!std::filesystem::exists(path)) return false;
  try {
    return read_tensor_file(path.string()).meta_string("content_hash") == hash;
  } catch (const Error&) {
    return false;
  }
}

// Writes <out>/<clip_id>.spec.cmlt and <out>/<clip_id>.mfcc.cmlt; files whose
// content hash matches the current audio and config are left alone.
inline FeaturizeSummary featurize_manifest(const Manifest& m, const std::filesystem::path& out, const FeatureConfig& fc) {
  std::filesystem::create_directories(out);
  FeaturizeSummary summary;
  for (const auto& row : m.rows) {
    try {
      const auto bytes = io::read_file(row.clip_path);
      const auto hash = feature_hash(bytes, fc);
      const auto spec_path = out / (row.clip_id + ".spec.cmlt");
      const auto mfcc_path = out / (row.clip_id + ".mfcc.cmlt");
      if (cache_entry_current(spec_path, hash) && cache_entry_current(mfcc_path, hash)) {
        ++summary.skipped;
        continue;
      }
      const auto wav = dsp::decode_wav(bytes, row.clip_path);
      dsp::AudioClip clip;
      clip.samples = wav.samples;
      clip.sample_rate = wav.sample_rate;
      clip.clip_id = row.clip_id;
      const auto pre = dsp::preprocess(clip, fc.sample_rate, fc.clip_seconds);
      const nlohmann::json meta = {{"clip_id", row.clip_id}, {"content_hash", hash}};
      auto spec_meta = meta, mfcc_meta = meta;
      spec_meta["source_tag"] = "spectrogram";
      mfcc_meta["source_tag"] = "mfcc";
      write_tensor_file(spec_path.string(), matrix_to_tensor_file(dsp::stft_spectrogram(pre, fc.stft).values, spec_meta));
      write_tensor_file(mfcc_path.string(), matrix_to_tensor_file(dsp::mfcc(pre, fc.mfcc).values, mfcc_meta));
      ++summary.computed;
    } catch (const std::exception& e) {
      summary.failures.push_back(row.clip_id + ": " + e.what());
    }
  }
  return summary;
}

}  // namespace camulenet
