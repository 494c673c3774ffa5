#include <filesystem>

#include <gtest/gtest.h>

#include "camulenet/encoders.hpp"
#include "camulenet/tensor_file.hpp"

using namespace camulenet;
namespace fs = std::filesystem;

namespace {

TensorFile sample_file(DType dtype) {
  TensorFile tf;
  tf.dtype = dtype;
  tf.shape = {2, 3};
  tf.values = {0.5, -1.0, 2.25, 3.0, 0.125, -0.75};
  tf.meta = {{"clip_id", "c1"}, {"source_tag", "unit"}};
  return tf;
}

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("camulenet_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(TensorFile, RoundTripBothDtypes) {
  for (const auto dt : {DType::f32, DType::f64}) {
    const auto tf = sample_file(dt);
    const auto bytes = encode_tensor_file(tf);
    const std::size_t meta_len = tf.meta.dump().size();
    EXPECT_EQ(bytes.size(), 4 + 2 + 1 + 1 + 16 + 4 + meta_len + 6 * dtype_size(dt) + 4);
    const auto back = decode_tensor_file(bytes, "mem");
    EXPECT_EQ(back.dtype, dt);
    EXPECT_EQ(back.shape, tf.shape);
    EXPECT_EQ(back.values, tf.values);
    EXPECT_EQ(back.meta_string("clip_id"), "c1");
  }
}

TEST(TensorFile, EveryFlippedByteIsDetected) {
  const auto bytes = encode_tensor_file(sample_file(DType::f32));
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x5a;
    EXPECT_THROW(decode_tensor_file(bad, "mem"), CorruptFile) << "byte " << i;
  }
}

TEST(TensorFile, TruncationAndBadMagic) {
  const auto bytes = encode_tensor_file(sample_file(DType::f32));
  for (std::size_t n = 0; n < bytes.size(); n += 7) {
    EXPECT_THROW(decode_tensor_file(std::span(bytes).first(n), "mem"), CorruptFile) << n;
  }
  EXPECT_THROW(encode_tensor_file(TensorFile{DType::f32, {2, 2}, {1.0}, {}}), ShapeError);
}

TEST(TensorFile, ReadsPythonWrittenFixture) {
  const auto tf = read_tensor_file(CAMULENET_TEST_DATA "/embeddings/toyset/whisper-base/clip_007.cmlt");
  EXPECT_EQ(tf.dtype, DType::f32);
  EXPECT_EQ(tf.shape, (ad::Shape{2, 3}));
  EXPECT_EQ(tf.values, (std::vector<double>{0.5, -1.0, 2.25, 3.0, 0.125, -0.75}));
  EXPECT_EQ(tf.meta_string("layer"), "encoder_output");

  const auto pooled = read_tensor_file(CAMULENET_TEST_DATA "/pooled_f64.cmlt");
  EXPECT_EQ(pooled.dtype, DType::f64);
  EXPECT_EQ(pooled.values, (std::vector<double>{1.75, -0.5, 0.1}));
}

TEST(Embeddings, DirectoryLayoutAndLoaders) {
  const auto path = embedding_path(CAMULENET_TEST_DATA "/embeddings", "toyset", "whisper-base", "clip_007");
  EXPECT_TRUE(fs::exists(path));
  const auto e = load_pretrained_embedding(path.string(), "clip_007");
  EXPECT_EQ(e.matrix.rows, 2u);
  EXPECT_EQ(e.matrix.cols, 3u);
  EXPECT_EQ(e.source_tag, "whisper-base");
  EXPECT_THROW(load_pretrained_embedding(path.string(), "clip_008"), ManifestMismatch);

  const auto pooled = load_pooled_embedding(path.string(), "clip_007");
  ASSERT_EQ(pooled.size(), 3u);
  EXPECT_FLOAT_EQ(pooled[0], 1.75f);
  EXPECT_FLOAT_EQ(pooled[1], -0.4375f);
  EXPECT_FLOAT_EQ(pooled[2], 0.75f);
  // A rank-1 export equals the frame mean of the rank-2 export.
  const auto direct = load_pooled_embedding(CAMULENET_TEST_DATA "/pooled_f64.cmlt", "clip_007");
  EXPECT_NEAR(direct[0], pooled[0], 1e-5);
  EXPECT_THROW(load_pretrained_embedding(CAMULENET_TEST_DATA "/pooled_f64.cmlt", "clip_007"), ShapeError);
}

TEST(TensorFile, AtomicWriteLeavesNoTemporaries) {
  const auto dir = temp_dir("tf_atomic");
  write_tensor_file((dir / "a.cmlt").string(), sample_file(DType::f64));
  std::size_t n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++n;
  EXPECT_EQ(n, 1u);
  EXPECT_EQ(read_tensor_file((dir / "a.cmlt").string()).values, sample_file(DType::f64).values);
  EXPECT_THROW(read_tensor_file((dir / "missing.cmlt").string()), IoError);
}
