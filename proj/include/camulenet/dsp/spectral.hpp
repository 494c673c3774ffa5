#pragma once

#include <cmath>
#include <complex>
#include <mutex>
#include <string>
#include <vector>

#include <fftw3.h>

#include "camulenet/dsp/audio.hpp"
#include "camulenet/errors.hpp"
#include "camulenet/matrix.hpp"

namespace camulenet::dsp {

// w[n] = 0.54 − 0.46·cos(2πn/(N−1))
inline std::vector<double> hamming(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n == 1) return w;
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n - 1));
  return w;
}

inline std::size_t frame_count(std::size_t n_samples, std::size_t win, std::size_t hop) {
  if (n_samples < win || hop == 0) return 0;
  return 1 + (n_samples - win) / hop;
}

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Real-input FFT of a fixed size. Planning goes through a global lock since the
// FFTW planner is not thread-safe; execution on private buffers is.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void execute() { fftw_execute(plan_); }
  double power(std::size_t k) const { return out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1]; }
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace detail

// |FFT|² of Hamming-windowed frames, each zero-padded to n_fft: frames × (n_fft/2+1).
inline Matrix<double> power_frames(const std::vector<double>& signal, std::size_t win, std::size_t hop, std::size_t n_fft) {
  if (win == 0 || hop == 0) throw ConfigError("window and hop must be positive");
  if (n_fft < win) {
    throw ConfigError("n_fft " + std::to_string(n_fft) + " is smaller than the window (" + std::to_string(win) + " samples)");
  }
  const std::size_t frames = frame_count(signal.size(), win, hop);
  if (frames == 0) throw EmptyInput("signal of " + std::to_string(signal.size()) + " samples is shorter than one window");
  const auto window = hamming(win);
  const std::size_t bins = n_fft / 2 + 1;
  Matrix<double> out(frames, bins);
  detail::RealFft fft(n_fft);
  for (std::size_t f = 0; f < frames; ++f) {
    double* buf = fft.input();
    for (std::size_t i = 0; i < n_fft; ++i) buf[i] = i < win ? signal[f * hop + i] * window[i] : 0.0;
    fft.execute();
    for (std::size_t k = 0; k < bins; ++k) out(f, k) = fft.power(k);
  }
  return out;
}

struct StftConfig {
  double window = 40.0;  // milliseconds, or samples when lengths_in_samples
  double hop = 10.0;
  std::size_t n_fft = 800;
  bool lengths_in_samples = false;
  double log_floor = 1e-10;

  std::size_t window_samples(int sr) const {
    return static_cast<std::size_t>(std::llround(lengths_in_samples ? window : window * sr / 1000.0));
  }
  std::size_t hop_samples(int sr) const {
    return static_cast<std::size_t>(std::llround(lengths_in_samples ? hop : hop * sr / 1000.0));
  }
};

struct Spectrogram {
  Matrix<double> values;  // frames × bins, log10(power + floor)
  double frame_hop_s = 0.0;
  double window_s = 0.0;
  std::size_t n_fft = 0;
};

inline Spectrogram stft_spectrogram(const AudioClip& clip, const StftConfig& cfg = {}) {
  const std::size_t win = cfg.window_samples(clip.sample_rate);
  const std::size_t hop = cfg.hop_samples(clip.sample_rate);
  Spectrogram s;
  s.values = power_frames(clip.samples, win, hop, cfg.n_fft);
  for (auto& v : s.values.values) v = std::log10(v + cfg.log_floor);
  s.frame_hop_s = static_cast<double>(hop) / clip.sample_rate;
  s.window_s = static_cast<double>(win) / clip.sample_rate;
  s.n_fft = cfg.n_fft;
  return s;
}

// ---------------------------------------------------------------- mel / MFCC

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// HTK-scale triangular filters evaluated at FFT bin centre frequencies,
// unit peak height: n_mels × (n_fft/2+1).
inline Matrix<double> mel_filterbank(int sr, std::size_t n_fft, std::size_t n_mels, double f_min = 0.0, double f_max = -1.0) {
  if (f_max <= 0.0) f_max = sr / 2.0;
  if (n_mels == 0 || !(f_max > f_min)) throw ConfigError("invalid mel filterbank range");
  const std::size_t bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(f_min), mel_hi = hz_to_mel(f_max);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  Matrix<double> fb(n_mels, bins);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], centre = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sr / static_cast<double>(n_fft);
      const double rise = (f - lo) / (centre - lo);
      const double fall = (hi - f) / (hi - centre);
      fb(m, k) = std::max(0.0, std::min(rise, fall));
    }
  }
  return fb;
}

// Orthonormal DCT-II of x, first n_out coefficients.
inline std::vector<double> dct2_orthonormal(const std::vector<double>& x, std::size_t n_out) {
  const std::size_t n = x.size();
  std::vector<double> c(n_out, 0.0);
  for (std::size_t k = 0; k < n_out; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * std::cos(M_PI * static_cast<double>(k) * (2.0 * i + 1.0) / (2.0 * n));
    c[k] = acc * std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
  }
  return c;
}

struct MfccConfig {
  std::size_t n_mfcc = 40;
  std::size_t hop_samples = 160;
  std::size_t n_mels = 64;
  std::size_t window_samples = 400;
  std::size_t n_fft = 512;
  double log_floor = 1e-10;
};

struct MfccMatrix {
  Matrix<double> values;  // frames × n_mfcc
  std::size_t hop_samples = 0;
};

// Natural-log mel energies: frames × n_mels.
inline Matrix<double> log_mel(const AudioClip& clip, const MfccConfig& cfg) {
  const auto power = power_frames(clip.samples, cfg.window_samples, cfg.hop_samples, cfg.n_fft);
  const auto fb = mel_filterbank(clip.sample_rate, cfg.n_fft, cfg.n_mels);
  Matrix<double> out(power.rows, cfg.n_mels);
  for (std::size_t f = 0; f < power.rows; ++f)
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < power.cols; ++k) e += fb(m, k) * power(f, k);
      out(f, m) = std::log(e + cfg.log_floor);
    }
  return out;
}

inline MfccMatrix mfcc(const AudioClip& clip, const MfccConfig& cfg = {}) {
  if (cfg.n_mfcc > cfg.n_mels) {
    throw ConfigError("n_mfcc (" + std::to_string(cfg.n_mfcc) + ") exceeds n_mels (" + std::to_string(cfg.n_mels) + ")");
  }
  const auto lm = log_mel(clip, cfg);
  MfccMatrix out;
  out.hop_samples = cfg.hop_samples;
  out.values = Matrix<double>(lm.rows, cfg.n_mfcc);
  // DCT basis rows are the transforms of unit impulses.
  Matrix<double> basis(cfg.n_mels, cfg.n_mfcc);
  std::vector<double> impulse(cfg.n_mels, 0.0);
  for (std::size_t i = 0; i < cfg.n_mels; ++i) {
    impulse[i] = 1.0;
    const auto c = dct2_orthonormal(impulse, cfg.n_mfcc);
    std::copy(c.begin(), c.end(), basis.row(i));
    impulse[i] = 0.0;
  }
  for (std::size_t f = 0; f < lm.rows; ++f)
    for (std::size_t i = 0; i < cfg.n_mels; ++i)
      for (std::size_t k = 0; k < cfg.n_mfcc; ++k) out.values(f, k) += lm(f, i) * basis(i, k);
  return out;
}

}  // namespace camulenet::dsp
