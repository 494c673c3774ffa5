#include <cmath>
#include <complex>

#include <gtest/gtest.h>

#include "camulenet/dsp/audio.hpp"
#include "camulenet/dsp/spectral.hpp"
#include "camulenet/dsp/wav.hpp"
#include "camulenet/rng.hpp"
#include "support/dsp_oracle.hpp"

using namespace camulenet;
using namespace camulenet::dsp;
using test_support::naive_power;
using test_support::noise;

namespace {

AudioClip tone(double hz, double seconds, int sr = 16000) {
  AudioClip c;
  c.sample_rate = sr;
  c.samples.resize(static_cast<std::size_t>(seconds * sr));
  for (std::size_t i = 0; i < c.samples.size(); ++i) c.samples[i] = std::sin(2.0 * M_PI * hz * static_cast<double>(i) / sr);
  return c;
}

}  // namespace

TEST(Hamming, SymmetricWithEndpointsPoint08) {
  const auto w = hamming(640);
  EXPECT_NEAR(w.front(), 0.08, 1e-15);
  EXPECT_NEAR(w.back(), 0.08, 1e-15);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], w[w.size() - 1 - i], 1e-12);
}

TEST(Stft, PowerMatchesNaiveDft) {
  for (const std::uint64_t seed : {1u, 2u, 3u}) {
    const auto sig = noise(200, seed);
    const auto p = power_frames(sig, 64, 32, 100);
    ASSERT_EQ(p.rows, 5u);
    for (std::size_t f = 0; f < p.rows; ++f) {
      const std::vector<double> frame(sig.begin() + static_cast<long>(f * 32), sig.begin() + static_cast<long>(f * 32 + 64));
      const auto ref = naive_power(frame, 100);
      for (std::size_t k = 0; k < ref.size(); ++k) {
        EXPECT_NEAR(p(f, k), ref[k], 1e-6 * std::max(1.0, ref[k])) << "frame " << f << " bin " << k;
      }
    }
  }
}

TEST(Stft, TwoSecondClipGives197FramesAnd401Bins) {
  const auto s = stft_spectrogram(tone(1000.0, 2.0));
  EXPECT_EQ(s.values.rows, 197u);
  EXPECT_EQ(s.values.cols, 401u);
  EXPECT_DOUBLE_EQ(s.frame_hop_s, 0.01);
  EXPECT_DOUBLE_EQ(s.window_s, 0.04);
}

TEST(Stft, OneKilohertzTonePeaksAtBin50) {
  const auto s = stft_spectrogram(tone(1000.0, 1.0));
  for (std::size_t f = 0; f < s.values.rows; ++f) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.values.cols; ++k)
      if (s.values(f, k) > s.values(f, best)) best = k;
    EXPECT_EQ(best, 50u);
  }
}

TEST(Stft, LogFloorAppliesToSilence) {
  AudioClip c;
  c.samples.assign(16000, 0.0);
  const auto s = stft_spectrogram(c);
  for (const double v : s.values.values) EXPECT_DOUBLE_EQ(v, -10.0);
}

TEST(Stft, Errors) {
  AudioClip c;
  c.samples.assign(100, 0.0);
  EXPECT_THROW(stft_spectrogram(c), EmptyInput);
  StftConfig bad;
  bad.n_fft = 256;
  EXPECT_THROW(stft_spectrogram(tone(100, 1.0), bad), ConfigError);
}

TEST(Mel, HtkScaleReferencePoints) {
  EXPECT_NEAR(hz_to_mel(700.0), 781.17, 0.01);
  EXPECT_NEAR(hz_to_mel(1000.0), 999.99, 0.02);
  for (const double f : {0.0, 123.0, 4000.0, 8000.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(f)), f, 1e-9);
}

TEST(Mel, DctIsOrthonormal) {
  const std::size_t n = 16;
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<double> ea(n, 0.0);
    ea[a] = 1.0;
    const auto ca = dct2_orthonormal(ea, n);
    double norm = 0.0;
    for (const double v : ca) norm += v * v;
    EXPECT_NEAR(norm, 1.0, 1e-12);
  }
}

TEST(Mfcc, MatchesFromScratchOracle) {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples = noise(1200, 9);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) clip.samples[i] += 0.5 * std::sin(0.3 * static_cast<double>(i));
  const auto got = mfcc(clip, MfccConfig{});
  const auto want = test_support::mfcc_oracle(clip.samples);
  ASSERT_EQ(got.values.rows, want.size());
  ASSERT_EQ(got.values.cols, 40u);
  for (std::size_t f = 0; f < want.size(); ++f)
    for (std::size_t k = 0; k < 40; ++k)
      EXPECT_NEAR(got.values(f, k), want[f][k], 1e-6 * std::max(1.0, std::abs(want[f][k]))) << "frame " << f << " coeff " << k;
}

TEST(Mfcc, FrameCountFollowsHopAndRejectsBadConfig) {
  const auto m = mfcc(tone(300.0, 1.0));
  EXPECT_EQ(m.values.rows, 1 + (16000 - 400) / 160);
  EXPECT_EQ(m.hop_samples, 160u);
  MfccConfig bad;
  bad.n_mfcc = 80;
  EXPECT_THROW(mfcc(tone(300.0, 1.0), bad), ConfigError);
}

TEST(Preprocess, NormalisesAndPadsToExactLength) {
  AudioClip c = tone(440.0, 0.5, 8000);
  for (auto& s : c.samples) s = 0.25 * s + 0.1;
  const auto p = preprocess(c, 16000, 1.0);
  ASSERT_EQ(p.samples.size(), 16000u);
  EXPECT_EQ(p.sample_rate, 16000);
  double peak = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < 8000; ++i) {
    peak = std::max(peak, std::abs(p.samples[i]));
    mean += p.samples[i];
  }
  EXPECT_NEAR(peak, 1.0, 1e-12);
  EXPECT_NEAR(mean / 8000.0, 0.0, 1e-3);
  for (std::size_t i = 8000; i < 16000; ++i) EXPECT_EQ(p.samples[i], 0.0);
}

TEST(Preprocess, TruncatesLongClips) {
  const auto p = preprocess(tone(440.0, 3.0), 16000, 2.0);
  EXPECT_EQ(p.samples.size(), 32000u);
}

TEST(Preprocess, RejectsEmptyAndNonFinite) {
  AudioClip c;
  EXPECT_THROW(preprocess(c), EmptyAudio);
  c.samples = {0.1, std::nan(""), 0.2};
  EXPECT_THROW(preprocess(c), CorruptAudio);
  EXPECT_THROW(preprocess(tone(100, 0.1), 12345), ConfigError);
}

TEST(Wav, Pcm16RoundTrip) {
  const auto c = tone(300.0, 0.05);
  std::vector<double> half(c.samples);
  for (auto& s : half) s *= 0.5;
  const auto bytes = encode_wav16(half, 16000);
  const auto w = decode_wav(bytes, "mem");
  EXPECT_EQ(w.sample_rate, 16000);
  ASSERT_EQ(w.samples.size(), half.size());
  for (std::size_t i = 0; i < half.size(); ++i) EXPECT_NEAR(w.samples[i], half[i], 1.0 / 32767.0);
}

TEST(Wav, GarbageIsCorruptAudio) {
  std::vector<std::uint8_t> junk(64, 0x41);
  EXPECT_THROW(decode_wav(junk, "junk"), CorruptAudio);
  auto bytes = encode_wav16(std::vector<double>(100, 0.1), 16000);
  bytes.resize(50);
  EXPECT_THROW(decode_wav(bytes, "short"), CorruptAudio);
}
