#include <gtest/gtest.h>

#include <filesystem>

#include "hyperinv/error.hpp"
#include "hyperinv/io.hpp"
#include "hyperinv/rng.hpp"

using namespace hyperinv;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("hyperinv_test_io_" + name);
}

NamedTensors sample_tensors() {
  Rng rng(11);
  NamedTensors t;
  t["a.weight"] = rng.normal({4, 3, 3, 3});
  t["a.bias"] = rng.normal({4});
  t["scalar"] = Tensor::scalar(-0.0);
  t["empty"] = Tensor({0, 5});
  t["tiny"] = Tensor::from({5e-324, 1e308, -1.5});
  return t;
}

void expect_same(const NamedTensors& a, const NamedTensors& b) {
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, t] : a) {
    ASSERT_TRUE(b.contains(name)) << name;
    EXPECT_TRUE(bit_equal(t, b.at(name))) << name;
  }
}

}  // namespace

TEST(Archive, RoundTripIsBitExact) {
  const NamedTensors t = sample_tensors();
  const std::string bytes = archive_encode(t);
  expect_same(t, archive_decode(bytes));
  EXPECT_EQ(archive_encode(archive_decode(bytes)), bytes);
}

TEST(Archive, EmptyArchive) {
  const std::string bytes = archive_encode({});
  EXPECT_TRUE(archive_decode(bytes).empty());
}

TEST(Archive, Float32ValuesSurviveWhenRepresentable) {
  NamedTensors t;
  t["x"] = Tensor::from({0.5, -2.0, 0.1f});
  expect_same(t, archive_decode(archive_encode(t, ArchiveDType::F32)));
  EXPECT_LT(archive_encode(t, ArchiveDType::F32).size(), archive_encode(t).size());
}

TEST(Archive, FileRoundTripIsByteIdentical) {
  const auto p = temp_path("file.hta");
  archive_write(p, sample_tensors());
  const std::string first = read_file(p);
  archive_write(p, archive_read(p));
  EXPECT_EQ(read_file(p), first);
  std::filesystem::remove(p);
}

TEST(Archive, BadMagicIsRejected) {
  std::string bytes = archive_encode(sample_tensors());
  bytes[0] = 'X';
  try {
    archive_decode(bytes);
    FAIL() << "no error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

TEST(Archive, CorruptionAndTruncationAreDetected) {
  const std::string bytes = archive_encode(sample_tensors());
  for (std::size_t pos : {std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
    std::string bad = bytes;
    bad[pos] ^= 0x10;
    EXPECT_THROW(archive_decode(bad), FormatError) << pos;
  }
  EXPECT_THROW(archive_decode(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(archive_decode(bytes.substr(0, 3)), FormatError);
}

TEST(Ppm, EndpointsMapExactly) {
  EXPECT_EQ(quantize_pixel(-1.0), 0);
  EXPECT_EQ(quantize_pixel(1.0), 255);
  EXPECT_EQ(quantize_pixel(-7.0), 0);
  EXPECT_EQ(quantize_pixel(3.0), 255);
  Tensor img({3, 1, 2});
  img[0] = -1.0;
  img[1] = 1.0;
  const Tensor back = image_decode_ppm(image_encode_ppm(img));
  EXPECT_EQ(back.shape(), (Shape{3, 1, 2}));
  EXPECT_EQ(back[0], -1.0);
  EXPECT_EQ(back[1], 1.0);
}

TEST(Ppm, RoundTripIsBitExact) {
  Rng rng(3);
  const Tensor img = rng.uniform({3, 5, 7}, -1.0, 1.0);
  const std::string bytes = image_encode_ppm(img);
  const Tensor q = image_decode_ppm(bytes);
  EXPECT_EQ(image_encode_ppm(q), bytes);
  const auto p = temp_path("img.ppm");
  image_write_ppm(p, q);
  EXPECT_TRUE(bit_equal(image_read_ppm(p), q));
  std::filesystem::remove(p);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_LE(std::abs(q[i] - img[i]), 1.0 / 127.5);
}

TEST(Ppm, MalformedInputIsRejected) {
  EXPECT_THROW(image_decode_ppm("P5 1 1 255\n\x01"), FormatError);
  EXPECT_THROW(image_decode_ppm("P6 2 2 255\n\x01\x02"), FormatError);
  EXPECT_THROW(image_decode_ppm("P6 1 1 65535\n\x01\x02\x03"), FormatError);
}

TEST(Heatmap, ZeroMapIsBlack) {
  const std::string pgm = heatmap_encode_pgm(Tensor({2, 3}));
  ASSERT_GE(pgm.size(), 6u);
  for (std::size_t i = pgm.size() - 6; i < pgm.size(); ++i) EXPECT_EQ(pgm[i], '\0');
  EXPECT_EQ(pgm.substr(0, 2), "P5");
}
