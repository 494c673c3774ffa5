#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <zlib.h>
#include <json.hpp>

#include "camulenet/ad/tensor.hpp"
#include "camulenet/binary_io.hpp"
#include "camulenet/matrix.hpp"

namespace camulenet {

// CMLT tensor file (all integers little-endian):
//
//   0      4     magic "CMLT"
//   4      2     version (u16, = 1)
//   6      1     dtype code (u8): 1 = float32, 2 = float64
//   7      1     rank r (u8)
//   8      8r    dims (u64 each), outermost first
//   ..     4     metadata length m (u32)
//   ..     m     metadata, UTF-8 JSON object (clip_id, source_tag, ...)
//   ..     p     payload, row-major, p = prod(dims) * dtype size
//   ..     4     CRC-32 (zlib polynomial) of every preceding byte
enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

inline constexpr std::uint16_t kTensorFileVersion = 1;

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

struct TensorFile {
  DType dtype = DType::f32;
  ad::Shape shape;
  std::vector<double> values;
  nlohmann::json meta = nlohmann::json::object();

  std::string meta_string(const std::string& key) const {
    return meta.contains(key) && meta[key].is_string() ? meta[key].get<std::string>() : std::string();
  }
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // Chunks of at most 1 GiB.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::vector<std::uint8_t> encode_tensor_file(const TensorFile& tf) {
  if (ad::numel(tf.shape) != tf.values.size()) {
    throw ShapeError("tensor file payload of " + std::to_string(tf.values.size()) + " values does not match shape " +
                     ad::shape_str(tf.shape));
  }
  if (tf.shape.size() > 255) throw ShapeError("tensor file rank above 255");
  io::ByteWriter w;
  w.str("CMLT");
  w.u16(kTensorFileVersion);
  w.u8(static_cast<std::uint8_t>(tf.dtype));
  w.u8(static_cast<std::uint8_t>(tf.shape.size()));
  for (const auto d : tf.shape) w.u64(d);
  const std::string meta = tf.meta.dump();
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.str(meta);
  for (const double v : tf.values) {
    if (tf.dtype == DType::f32) {
      w.f32(static_cast<float>(v));
    } else {
      w.f64(v);
    }
  }
  w.u32(crc32_of(w.buffer()));
  return std::move(w.buffer());
}

inline TensorFile decode_tensor_file(std::span<const std::uint8_t> bytes, const std::string& what) {
  if (bytes.size() < 4) throw CorruptFile(what + ": truncated tensor file");
  io::ByteReader r(bytes, what);
  if (r.str(4) != "CMLT") throw CorruptFile(what + ": bad magic");
  if (const auto v = r.u16(); v != kTensorFileVersion) throw CorruptFile(what + ": unsupported version " + std::to_string(v));
  TensorFile tf;
  const auto code = r.u8();
  if (code != 1 && code != 2) throw CorruptFile(what + ": unknown dtype code " + std::to_string(code));
  tf.dtype = static_cast<DType>(code);
  const auto rank = r.u8();
  tf.shape.resize(rank);
  for (auto& d : tf.shape) d = static_cast<std::size_t>(r.u64());
  const auto meta_len = r.u32();
  const std::string meta = r.str(meta_len);
  std::size_t count = 1;
  for (const auto d : tf.shape) {
    if (d != 0 && count > r.remaining() / d) throw CorruptFile(what + ": dims " + ad::shape_str(tf.shape) + " exceed the file size");
    count *= d;
  }
  const std::size_t payload = count * dtype_size(tf.dtype);
  if (r.remaining() != payload + 4) {
    throw CorruptFile(what + ": expected " + std::to_string(payload + 4) + " payload+CRC bytes, found " +
                      std::to_string(r.remaining()));
  }
  const std::size_t body = r.pos() + payload;
  io::ByteReader crc_reader(bytes.subspan(body), what);
  if (crc_reader.u32() != crc32_of(bytes.first(body))) throw CorruptFile(what + ": CRC mismatch");
  try {
    tf.meta = meta.empty() ? nlohmann::json::object() : nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(what + ": unreadable metadata: " + e.what());
  }
  tf.values.resize(count);
  for (auto& v : tf.values) v = tf.dtype == DType::f32 ? static_cast<double>(r.f32()) : r.f64();
  return tf;
}

inline void write_tensor_file(const std::string& path, const TensorFile& tf) {
  io::write_file_atomic(path, encode_tensor_file(tf));
}

inline TensorFile read_tensor_file(const std::string& path) {
  const auto bytes = io::read_file(path);
  return decode_tensor_file(bytes, path);
}

template <class T>
TensorFile matrix_to_tensor_file(const Matrix<T>& m, nlohmann::json meta, DType dtype = DType::f32) {
  TensorFile tf;
  tf.dtype = dtype;
  tf.shape = {m.rows, m.cols};
  tf.values.assign(m.values.begin(), m.values.end());
  tf.meta = std::move(meta);
  return tf;
}

inline Matrix<float> tensor_file_to_matrix(const TensorFile& tf, const std::string& what) {
  if (tf.shape.size() != 2) throw ShapeError(what + ": expected a rank-2 tensor, got shape " + ad::shape_str(tf.shape));
  Matrix<float> m(tf.shape[0], tf.shape[1]);
  for (std::size_t i = 0; i < tf.values.size(); ++i) m.values[i] = static_cast<float>(tf.values[i]);
  return m;
}

}  // namespace camulenet
