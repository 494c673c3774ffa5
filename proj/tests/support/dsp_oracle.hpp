#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "camulenet/rng.hpp"

namespace camulenet::test_support {

// Textbook O(N²) DFT power of a Hamming-windowed, zero-padded frame.
inline std::vector<double> naive_power(const std::vector<double>& frame, std::size_t n_fft) {
  const std::size_t n = frame.size();
  std::vector<double> out(n_fft / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = 0.54 - 0.46 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n - 1));
      acc += frame[i] * w * std::polar(1.0, -2.0 * M_PI * static_cast<double>(k * i) / static_cast<double>(n_fft));
    }
    out[k] = std::norm(acc);
  }
  return out;
}

inline std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Independent MFCC pipeline at 16 kHz: 400-sample frames every 160, 512-point
// naive DFT, 64 triangles built from the natural-log mel formula, log, and an
// explicit DCT-II sum. Returns frames × 40.
inline std::vector<std::vector<double>> mfcc_oracle(const std::vector<double>& samples) {
  auto mel = [](double f) { return 1127.0 * std::log(1.0 + f / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::exp(m / 1127.0) - 1.0); };
  std::vector<double> edge(66);
  for (std::size_t i = 0; i < 66; ++i) edge[i] = hz(mel(8000.0) * static_cast<double>(i) / 65.0);
  const std::size_t frames = 1 + (samples.size() - 400) / 160;
  std::vector<std::vector<double>> out(frames, std::vector<double>(40));
  for (std::size_t f = 0; f < frames; ++f) {
    const std::vector<double> frame(samples.begin() + static_cast<long>(f * 160), samples.begin() + static_cast<long>(f * 160 + 400));
    const auto p = naive_power(frame, 512);
    std::vector<double> logmel(64);
    for (std::size_t m = 0; m < 64; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double fk = 16000.0 * static_cast<double>(k) / 512.0;
        double w = 0.0;
        if (fk > edge[m] && fk <= edge[m + 1]) w = (fk - edge[m]) / (edge[m + 1] - edge[m]);
        else if (fk > edge[m + 1] && fk < edge[m + 2]) w = (edge[m + 2] - fk) / (edge[m + 2] - edge[m + 1]);
        e += w * p[k];
      }
      logmel[m] = std::log(e + 1e-10);
    }
    for (std::size_t k = 0; k < 40; ++k) {
      double c = 0.0;
      for (std::size_t m = 0; m < 64; ++m) c += logmel[m] * std::cos(M_PI * k * (m + 0.5) / 64.0);
      out[f][k] = c * (k == 0 ? std::sqrt(1.0 / 64.0) : std::sqrt(2.0 / 64.0));
    }
  }
  return out;
}

}  // namespace camulenet::test_support
