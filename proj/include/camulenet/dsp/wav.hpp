#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "camulenet/binary_io.hpp"
#include "camulenet/dsp/audio.hpp"

namespace camulenet::dsp {

struct WavData {
  std::vector<double> samples;  // mono, [-1, 1]
  int sample_rate = 0;
};

// RIFF/WAVE reader: 16- and 32-bit integer PCM plus 32-bit float, any channel
// count (downmixed by averaging). Malformed input raises CorruptAudio.
inline WavData decode_wav(std::span<const std::uint8_t> bytes, const std::string& what) {
  try {
    io::ByteReader r(bytes, what);
    if (r.str(4) != "RIFF") throw CorruptAudio(what + ": not a RIFF file");
    r.u32();
    if (r.str(4) != "WAVE") throw CorruptAudio(what + ": not a WAVE file");
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    while (r.remaining() >= 8) {
      const std::string id = r.str(4);
      const std::uint32_t size = r.u32();
      if (id == "fmt ") {
        auto chunk = r.take(size);
        io::ByteReader f(chunk, what);
        format = f.u16();
        channels = f.u16();
        rate = f.u32();
        f.u32();
        f.u16();
        bits = f.u16();
        if (format == 0xFFFE && size >= 26) {
          f.u16();
          f.u16();
          f.u32();
          format = f.u16();
        }
        have_fmt = true;
      } else if (id == "data") {
        if (!have_fmt) throw CorruptAudio(what + ": data chunk before fmt chunk");
        if (channels == 0 || rate == 0) throw CorruptAudio(what + ": zero channels or sample rate");
        const bool pcm16 = format == 1 && bits == 16;
        const bool pcm32 = format == 1 && bits == 32;
        const bool float32 = format == 3 && bits == 32;
        if (!pcm16 && !pcm32 && !float32) {
          throw CorruptAudio(what + ": unsupported sample format " + std::to_string(format) + "/" + std::to_string(bits) + " bit");
        }
        const std::size_t width = bits / 8;
        const std::size_t frames = std::min<std::size_t>(size, r.remaining()) / (width * channels);
        if (frames * width * channels != size) throw CorruptAudio(what + ": data chunk truncated");
        WavData out;
        out.sample_rate = static_cast<int>(rate);
        out.samples.resize(frames);
        for (std::size_t i = 0; i < frames; ++i) {
          double acc = 0.0;
          for (std::size_t c = 0; c < channels; ++c) {
            if (pcm16) {
              acc += static_cast<std::int16_t>(r.u16()) / 32768.0;
            } else if (pcm32) {
              acc += static_cast<std::int32_t>(r.u32()) / 2147483648.0;
            } else {
              acc += static_cast<double>(r.f32());
            }
          }
          out.samples[i] = acc / channels;
        }
        return out;
      } else {
        r.take(size + (size & 1u));
      }
    }
    throw CorruptAudio(what + ": no data chunk");
  } catch (const CorruptFile& e) {
    throw CorruptAudio(e.what());
  }
}

inline WavData read_wav(const std::string& path) {
  const auto bytes = io::read_file(path);
  return decode_wav(bytes, path);
}

// 16-bit PCM mono writer; values are clipped to [-1, 1].
inline std::vector<std::uint8_t> encode_wav16(const std::vector<double>& samples, int sample_rate) {
  io::ByteWriter w;
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  w.str("RIFF");
  w.u32(36 + data_bytes);
  w.str("WAVE");
  w.str("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(sample_rate));
  w.u32(static_cast<std::uint32_t>(sample_rate) * 2);
  w.u16(2);
  w.u16(16);
  w.str("data");
  w.u32(data_bytes);
  for (const double s : samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    w.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
  }
  return std::move(w.buffer());
}

inline void write_wav16(const std::string& path, const std::vector<double>& samples, int sample_rate) {
  io::write_file_atomic(path, encode_wav16(samples, sample_rate));
}

}  // namespace camulenet::dsp
