#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "camulenet/ad/nn.hpp"
#include "camulenet/binary_io.hpp"

namespace camulenet::ad {

// Checkpoint layout (all integers little-endian):
//   "CMLC" | u32 version (=1) | u64 header length | header JSON | payload
// The header lists {name, shape, offset, count}; offsets are bytes into the
// payload, which is a concatenation of float32 values in header order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const ParamList<T>& params, const nlohmann::json& meta) {
  nlohmann::json header;
  header["format"] = "camulenet-checkpoint";
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : params) {
    header["tensors"].push_back(
        {{"name", p.name}, {"shape", p.tensor->shape()}, {"offset", offset}, {"count", p.tensor->numel()}});
    offset += p.tensor->numel() * 4;
  }
  const std::string text = header.dump();
  io::ByteWriter w;
  w.str("CMLC");
  w.u32(kCheckpointVersion);
  w.u64(text.size());
  w.str(text);
  for (const auto& p : params)
    for (const T v : p.tensor->data()) w.f32(static_cast<float>(v));
  return std::move(w.buffer());
}

template <class T>
void save_checkpoint(const std::string& path, const ParamList<T>& params, const nlohmann::json& meta) {
  io::write_file_atomic(path, encode_checkpoint(params, meta));
}

struct CheckpointData {
  nlohmann::json meta;
  std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
};

inline CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what) {
  io::ByteReader r(bytes, what);
  if (r.str(4) != "CMLC") throw CorruptFile(what + ": bad checkpoint magic");
  if (const auto v = r.u32(); v != kCheckpointVersion) throw CorruptFile(what + ": unsupported checkpoint version " + std::to_string(v));
  const auto len = r.u64();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str(static_cast<std::size_t>(len)));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(what + ": unreadable checkpoint header: " + e.what());
  }
  CheckpointData out;
  out.meta = header.value("meta", nlohmann::json::object());
  const std::size_t payload_start = r.pos();
  for (const auto& t : header.at("tensors")) {
    const auto shape = t.at("shape").get<Shape>();
    const auto count = t.at("count").get<std::size_t>();
    if (numel(shape) != count) throw CorruptFile(what + ": tensor " + t.at("name").get<std::string>() + " count/shape mismatch");
    io::ByteReader pr(bytes.subspan(payload_start), what);
    pr.take(t.at("offset").get<std::size_t>());
    std::vector<float> values(count);
    for (auto& v : values) v = pr.f32();
    out.tensors[t.at("name").get<std::string>()] = {shape, std::move(values)};
  }
  return out;
}

inline CheckpointData read_checkpoint(const std::string& path) {
  const auto bytes = io::read_file(path);
  return decode_checkpoint(bytes, path);
}

// Copies every named tensor into `params`; names and shapes must match exactly.
template <class T>
void restore_params(const CheckpointData& ckpt, const ParamList<T>& params) {
  if (ckpt.tensors.size() != params.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                     std::to_string(params.size()));
  }
  for (const auto& p : params) {
    const auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end()) throw ShapeError("checkpoint is missing tensor " + p.name);
    if (it->second.first != p.tensor->shape()) {
      throw ShapeError("checkpoint tensor " + p.name + " has shape " + shape_str(it->second.first) + ", model expects " +
                       shape_str(p.tensor->shape()));
    }
    auto dst = p.tensor->mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second.second[i]);
  }
}

}  // namespace camulenet::ad
