#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

#include "camulenet/ad/nn.hpp"
#include "camulenet/dsp/spectral.hpp"
#include "camulenet/tensor_file.hpp"

namespace camulenet {

inline constexpr std::size_t kSpectrogramEmbeddingWidth = 4096;

enum class SpectrogramPreset { alexnet, tiny };

inline std::string to_string(SpectrogramPreset p) { return p == SpectrogramPreset::alexnet ? "alexnet" : "tiny"; }

inline SpectrogramPreset parse_preset(const std::string& s) {
  if (s == "alexnet") return SpectrogramPreset::alexnet;
  if (s == "tiny") return SpectrogramPreset::tiny;
  throw ConfigError("unknown spectrogram encoder preset '" + s + "'");
}

// Spectrogram (frames × bins) -> square single-channel image: frequency on
// rows, time on columns, bilinear resize, then zero-mean/unit-variance.
inline Matrix<float> spectrogram_to_plane(const Matrix<double>& spec, std::size_t side) {
  if (spec.empty()) throw EmptyInput("empty spectrogram");
  if (side == 0) throw ConfigError("plane side must be positive");
  const std::size_t frames = spec.rows, bins = spec.cols;
  auto sample = [&](double pos, std::size_t n) {
    // Align corners: output 0 and side-1 map to input 0 and n-1.
    const double t = side == 1 ? 0.0 : pos * static_cast<double>(n - 1) / static_cast<double>(side - 1);
    const auto i0 = std::min(static_cast<std::size_t>(t), n - 1);
    const auto i1 = std::min(i0 + 1, n - 1);
    return std::tuple{i0, i1, t - static_cast<double>(i0)};
  };
  Matrix<double> plane(side, side);
  for (std::size_t y = 0; y < side; ++y) {
    const auto [b0, b1, fb] = sample(static_cast<double>(y), bins);
    for (std::size_t x = 0; x < side; ++x) {
      const auto [f0, f1, ff] = sample(static_cast<double>(x), frames);
      const double top = spec(f0, b0) * (1.0 - ff) + spec(f1, b0) * ff;
      const double bot = spec(f0, b1) * (1.0 - ff) + spec(f1, b1) * ff;
      plane(y, x) = top * (1.0 - fb) + bot * fb;
    }
  }
  double mean = 0.0, var = 0.0;
  for (const double v : plane.values) mean += v;
  mean /= static_cast<double>(plane.values.size());
  for (const double v : plane.values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(plane.values.size());
  const double inv = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
  Matrix<float> out(side, side);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = static_cast<float>((plane.values[i] - mean) * inv);
  return out;
}

// Per-coefficient mean/variance normalisation over time.
inline Matrix<float> normalize_mfcc(const Matrix<double>& m) {
  Matrix<float> out(m.rows, m.cols);
  for (std::size_t c = 0; c < m.cols; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) mean += m(r, c);
    mean /= static_cast<double>(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) var += (m(r, c) - mean) * (m(r, c) - mean);
    var /= static_cast<double>(m.rows);
    const double inv = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) out(r, c) = static_cast<float>((m(r, c) - mean) * inv);
  }
  return out;
}

struct SpectrogramEncoderConfig {
  SpectrogramPreset preset = SpectrogramPreset::alexnet;
  std::size_t plane = 224;
  double dropout = 0.15;

  static SpectrogramEncoderConfig tiny(std::size_t plane = 32) { return {SpectrogramPreset::tiny, plane, 0.15}; }
};

// Image encoder producing the 4096-wide spectrogram embedding.
//   alexnet: 5 conv / 3 max-pool feature stack (single input channel), then the
//            first 4096-unit fully connected layer with ReLU.
//   tiny:    conv3x3(4) / pool / conv3x3(4) / pool, then FC to 4096 with ReLU.
template <class T>
struct SpectrogramEncoder {
  SpectrogramEncoderConfig cfg;
  std::vector<ad::Conv2d<T>> convs;
  std::vector<bool> pool_after;
  ad::Linear<T> fc;

  SpectrogramEncoder() = default;
  SpectrogramEncoder(const SpectrogramEncoderConfig& c, CounterRng& rng) : cfg(c) {
    if (cfg.preset == SpectrogramPreset::alexnet) {
      if (cfg.plane != 224) throw ConfigError("alexnet preset expects a 224x224 input plane");
      convs.emplace_back(1, 64, 11, 4, 2, rng);
      convs.emplace_back(64, 192, 5, 1, 2, rng);
      convs.emplace_back(192, 384, 3, 1, 1, rng);
      convs.emplace_back(384, 256, 3, 1, 1, rng);
      convs.emplace_back(256, 256, 3, 1, 1, rng);
      pool_after = {true, true, false, false, true};
    } else {
      if (cfg.plane < 4 || cfg.plane % 4 != 0) throw ConfigError("tiny preset needs a plane side divisible by 4");
      convs.emplace_back(1, 4, 3, 1, 1, rng);
      convs.emplace_back(4, 4, 3, 1, 1, rng);
      pool_after = {true, true};
    }
    fc = ad::Linear<T>(flat_width(), kSpectrogramEmbeddingWidth, rng);
  }

  std::size_t flat_width() const {
    if (cfg.preset == SpectrogramPreset::alexnet) return 256 * 6 * 6;
    return 4 * (cfg.plane / 4) * (cfg.plane / 4);
  }

  // plane: [B, 1, P, P] -> [B, 4096]
  ad::Tensor<T> operator()(const ad::Tensor<T>& plane, ad::Mode mode, CounterRng& rng) const {
    if (plane.numel() == 0) throw EmptyInput("empty spectrogram plane");
    if (plane.rank() != 4 || plane.dim(1) != 1 || plane.dim(2) != cfg.plane || plane.dim(3) != cfg.plane) {
      throw ShapeError("spectrogram encoder expects [B, 1, " + std::to_string(cfg.plane) + ", " +
                       std::to_string(cfg.plane) + "], got " + ad::shape_str(plane.shape()));
    }
    const bool alex = cfg.preset == SpectrogramPreset::alexnet;
    ad::Tensor<T> h = plane;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      h = ad::relu(convs[i](h));
      if (pool_after[i]) h = alex ? ad::maxpool2d(h, 3, 2) : ad::maxpool2d(h, 2, 2);
    }
    h = ad::reshape(h, {plane.dim(0), flat_width()});
    h = ad::dropout(h, cfg.dropout, mode, rng);
    return ad::relu(fc(h));
  }

  void collect(ad::ParamList<T>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(out, prefix + ".conv" + std::to_string(i + 1));
    fc.collect(out, prefix + ".fc");
  }
};

struct MfccEncoderConfig {
  std::size_t n_mfcc = 40;
  std::size_t hidden = 256;
  std::size_t layers = 2;
  double dropout = 0.2;
};

// Bi-GRU over MFCC frames; sequence [B, S, 2H] and final state [B, 2H].
template <class T>
struct MfccEncoder {
  MfccEncoderConfig cfg;
  ad::BiGru<T> gru;

  MfccEncoder() = default;
  MfccEncoder(const MfccEncoderConfig& c, CounterRng& rng) : cfg(c), gru(c.n_mfcc, c.hidden, c.layers, c.dropout, rng) {}

  std::size_t output_width() const { return 2 * cfg.hidden; }

  ad::GruOutput<T> operator()(const ad::Tensor<T>& mfcc, ad::Mode mode, CounterRng& rng) const {
    if (mfcc.rank() == 3 && mfcc.dim(2) != cfg.n_mfcc) {
      throw ShapeError("MFCC encoder expects " + std::to_string(cfg.n_mfcc) + " coefficients, got " +
                       ad::shape_str(mfcc.shape()));
    }
    return gru(mfcc, mode, rng);
  }

  void collect(ad::ParamList<T>& out, const std::string& prefix) { gru.collect(out, prefix + ".gru"); }
};

// ---------------------------------------------------------------- pretrained embeddings

struct PretrainedEmbedding {
  Matrix<float> matrix;  // L × W, frames × model width
  std::string source_tag;
  std::string clip_id;
};

// <root>/<dataset>/<source_tag>/<clip_id>.cmlt
inline std::filesystem::path embedding_path(const std::filesystem::path& root, const std::string& dataset,
                                            const std::string& source_tag, const std::string& clip_id) {
  return root / dataset / source_tag / (clip_id + ".cmlt");
}

inline PretrainedEmbedding load_pretrained_embedding(const std::string& path, const std::string& expected_clip_id) {
  const auto tf = read_tensor_file(path);
  if (tf.shape.size() != 2) {
    throw ShapeError(path + ": pretrained embedding must be rank 2 (frames x width), got " + ad::shape_str(tf.shape));
  }
  if (tf.shape[0] == 0 || tf.shape[1] == 0) throw ShapeError(path + ": empty embedding " + ad::shape_str(tf.shape));
  const auto clip_id = tf.meta_string("clip_id");
  if (clip_id != expected_clip_id) {
    throw ManifestMismatch(path + ": file is for clip '" + clip_id + "', expected '" + expected_clip_id + "'");
  }
  return {tensor_file_to_matrix(tf, path), tf.meta_string("source_tag"), clip_id};
}

// 1-D embedding for the baseline head: rank-1 files are taken as already
// pooled, rank-2 files are averaged over frames.
inline std::vector<float> load_pooled_embedding(const std::string& path, const std::string& expected_clip_id) {
  const auto tf = read_tensor_file(path);
  const auto clip_id = tf.meta_string("clip_id");
  if (clip_id != expected_clip_id) {
    throw ManifestMismatch(path + ": file is for clip '" + clip_id + "', expected '" + expected_clip_id + "'");
  }
  if (tf.shape.size() == 1) return {tf.values.begin(), tf.values.end()};
  if (tf.shape.size() != 2 || tf.shape[0] == 0) throw ShapeError(path + ": expected rank 1 or 2, got " + ad::shape_str(tf.shape));
  std::vector<double> acc(tf.shape[1], 0.0);
  for (std::size_t r = 0; r < tf.shape[0]; ++r)
    for (std::size_t c = 0; c < tf.shape[1]; ++c) acc[c] += tf.values[r * tf.shape[1] + c];
  std::vector<float> out(acc.size());
  for (std::size_t c = 0; c < acc.size(); ++c) out[c] = static_cast<float>(acc[c] / static_cast<double>(tf.shape[0]));
  return out;
}

inline std::vector<float> mean_pool_rows(const Matrix<float>& m) {
  std::vector<double> acc(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) acc[c] += m(r, c);
  std::vector<float> out(m.cols);
  for (std::size_t c = 0; c < m.cols; ++c) out[c] = static_cast<float>(acc[c] / static_cast<double>(m.rows));
  return out;
}

// Stand-in for a frozen pretrained speech encoder: log-mel frames averaged down to L steps, projected to W,
// plus sinusoidal positions, then one single-head self-attention block and a
// tanh feed-forward block, each with residual + layer norm. Weights are frozen
// random draws from `seed`.
class ReferenceTinyEncoder {
 public:
  ReferenceTinyEncoder(std::size_t frames, std::size_t width, std::uint64_t seed, std::size_t n_mels = 64)
      : frames_(frames), width_(width), n_mels_(n_mels) {
    if (frames < 1 || width < 1) throw ConfigError("reference encoder needs L >= 1 and W >= 1");
    CounterRng rng(seed);
    auto draw = [&](std::size_t rows, std::size_t cols, double fan_in) {
      Matrix<double> m(rows, cols);
      const double s = 1.0 / std::sqrt(fan_in);
      for (auto& v : m.values) v = rng.normal() * s;
      return m;
    };
    proj_ = draw(n_mels, width, static_cast<double>(n_mels));
    wq_ = draw(width, width, static_cast<double>(width));
    wk_ = draw(width, width, static_cast<double>(width));
    wv_ = draw(width, width, static_cast<double>(width));
    ff_ = draw(width, width, static_cast<double>(width));
  }

  std::size_t frames() const { return frames_; }
  std::size_t width() const { return width_; }
  std::string source_tag() const { return "reference-tiny"; }

  PretrainedEmbedding encode(const dsp::AudioClip& clip) const {
    dsp::MfccConfig mel_cfg;
    mel_cfg.n_mels = n_mels_;
    const auto lm = dsp::log_mel(clip, mel_cfg);
    const std::size_t n = lm.rows;

    Matrix<double> seg(frames_, n_mels_);
    for (std::size_t l = 0; l < frames_; ++l) {
      std::size_t a = l * n / frames_, b = (l + 1) * n / frames_;
      if (b <= a) {
        a = std::min(n - 1, static_cast<std::size_t>((static_cast<double>(l) + 0.5) * n / frames_));
        b = a + 1;
      }
      for (std::size_t f = a; f < b; ++f)
        for (std::size_t m = 0; m < n_mels_; ++m) seg(l, m) += lm(f, m) / static_cast<double>(b - a);
    }
    double mean = 0.0, var = 0.0;
    for (const double v : seg.values) mean += v;
    mean /= static_cast<double>(seg.values.size());
    for (const double v : seg.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(seg.values.size());
    const double inv = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
    for (auto& v : seg.values) v = (v - mean) * inv;

    auto x = matmul(seg, proj_);
    for (std::size_t l = 0; l < frames_; ++l)
      for (std::size_t j = 0; j < width_; ++j) {
        const double rate = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(width_));
        x(l, j) += (j % 2 == 0) ? std::sin(static_cast<double>(l) * rate) : std::cos(static_cast<double>(l) * rate);
      }

    const auto q = matmul(x, wq_), k = matmul(x, wk_), v = matmul(x, wv_);
    Matrix<double> attended(frames_, width_);
    std::vector<double> scores(frames_);
    const double temp = 1.0 / std::sqrt(static_cast<double>(width_));
    for (std::size_t i = 0; i < frames_; ++i) {
      double mx = -1e300;
      for (std::size_t j = 0; j < frames_; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < width_; ++c) s += q(i, c) * k(j, c);
        scores[j] = s * temp;
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (auto& s : scores) z += (s = std::exp(s - mx));
      for (std::size_t j = 0; j < frames_; ++j)
        for (std::size_t c = 0; c < width_; ++c) attended(i, c) += scores[j] / z * v(j, c);
    }
    for (std::size_t i = 0; i < x.values.size(); ++i) x.values[i] += attended.values[i];
    layer_norm_rows(x);
    auto ffo = matmul(x, ff_);
    for (std::size_t i = 0; i < x.values.size(); ++i) x.values[i] += std::tanh(ffo.values[i]);
    layer_norm_rows(x);

    PretrainedEmbedding out{x.cast<float>(), source_tag(), clip.clip_id};
    return out;
  }

 private:
  static Matrix<double> matmul(const Matrix<double>& a, const Matrix<double>& b) {
    Matrix<double> c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t p = 0; p < a.cols; ++p) {
        const double av = a(i, p);
        for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += av * b(p, j);
      }
    return c;
  }

  static void layer_norm_rows(Matrix<double>& m) {
    for (std::size_t r = 0; r < m.rows; ++r) {
      double mu = 0.0, var = 0.0;
      for (std::size_t c = 0; c < m.cols; ++c) mu += m(r, c);
      mu /= static_cast<double>(m.cols);
      for (std::size_t c = 0; c < m.cols; ++c) var += (m(r, c) - mu) * (m(r, c) - mu);
      var /= static_cast<double>(m.cols);
      const double inv = 1.0 / std::sqrt(var + 1e-5);
      for (std::size_t c = 0; c < m.cols; ++c) m(r, c) = (m(r, c) - mu) * inv;
    }
  }

  std::size_t frames_, width_, n_mels_;
  Matrix<double> proj_, wq_, wk_, wv_, ff_;
};

}  // namespace camulenet
