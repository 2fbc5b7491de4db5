#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <cstring>
#include <iterator>
#include <random>

#include "pdseg/image_io.hpp"

using namespace pdseg;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "pdseg_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Image random_plane(int h, int w, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  Image img(1, h, w);
  for (auto& v : img.data) v = u(rng);
  return img;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os << bytes;
}

}  // namespace

TEST(Pfm, RoundTripIsExact) {
  const auto img = random_plane(5, 7, 1);
  const auto p = temp_file("a.pfm");
  write_pfm(p, img);
  const auto back = read_pfm(p);
  EXPECT_EQ(back.height, 5);
  EXPECT_EQ(back.width, 7);
  EXPECT_EQ(back.data, img.data);
}

TEST(Pfm, RowsAreStoredBottomUp) {
  Image img(1, 2, 1);
  img.data = {1.0f, 2.0f};  // top row 1, bottom row 2
  const auto p = temp_file("order.pfm");
  write_pfm(p, img);
  std::ifstream is(p, std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(is)), {});
  float first;
  std::memcpy(&first, all.data() + all.size() - 8, 4);
  EXPECT_EQ(first, 2.0f);
}

TEST(Pfm, ColorRoundTripInterleavesChannels) {
  Image img(3, 2, 2);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i);
  const auto p = temp_file("color.pfm");
  write_pfm(p, img);
  const auto back = read_pfm(p);
  EXPECT_EQ(back.channels, 3);
  EXPECT_EQ(back.data, img.data);
  // First stored pixel is bottom-left: (c0, c1, c2) at y=1, x=0.
  std::ifstream is(p, std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(is)), {});
  float px[3];
  std::memcpy(px, all.data() + all.size() - 48, 12);
  EXPECT_EQ(px[0], img.at(0, 1, 0));
  EXPECT_EQ(px[1], img.at(1, 1, 0));
  EXPECT_EQ(px[2], img.at(2, 1, 0));
  EXPECT_THROW(write_pfm(p, Image(2, 1, 1)), DimensionError);
}

TEST(Pfm, BigEndianFilesAreRead) {
  std::string bytes = "Pf\n1 1\n1.0\n";
  const float v = 0.75f;
  unsigned char b[4];
  std::memcpy(b, &v, 4);
  bytes += std::string{static_cast<char>(b[3]), static_cast<char>(b[2]), static_cast<char>(b[1]),
                       static_cast<char>(b[0])};
  const auto p = temp_file("be.pfm");
  write_bytes(p, bytes);
  EXPECT_EQ(read_pfm(p).data[0], 0.75f);
}

TEST(Pfm, MalformedInputsRaiseParseErrors) {
  const auto p = temp_file("bad.pfm");
  write_bytes(p, "PF\n2 2\n-1.0\n");
  EXPECT_THROW(read_pfm(p), ParseError);
  write_bytes(p, "Pf\n2 x\n-1.0\n");
  try {
    read_pfm(p);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 5u);
  }
  write_bytes(p, "Pf\n2 2\n-1.0\n" + std::string(8, '\0'));
  EXPECT_THROW(read_pfm(p), ParseError);  // truncated payload
  EXPECT_THROW(read_pfm(temp_file("nope.pfm")), IoError);
  EXPECT_THROW(write_pfm(p, Image(4, 2, 2)), DimensionError);
}

TEST(Pgm16, RoundTripWithinQuantization) {
  const auto img = random_plane(6, 4, 2);
  const auto p = temp_file("a.pgm");
  write_pgm16(p, img);
  const auto back = read_pgm16(p);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 65535 + 1e-7);
}

TEST(Pgm16, CustomRangeAndComments) {
  const auto p = temp_file("c.pgm");
  write_bytes(p, std::string("P5\n# depth\n2 1\n65535\n") + '\xff' + '\xff' + '\x00' + '\x00');
  const auto img = read_pgm16(p, 0.0f, 10.0f);
  EXPECT_FLOAT_EQ(img.data[0], 10.0f);
  EXPECT_FLOAT_EQ(img.data[1], 0.0f);
}

TEST(Pgm16, RejectsOtherMaxvals) {
  const auto p = temp_file("m.pgm");
  write_bytes(p, "P5\n1 1\n255\n\x10");
  EXPECT_THROW(read_pgm16(p), ParseError);
}

TEST(LabelPgm, RoundTrip) {
  LabelMap l(3, 4);
  for (std::size_t i = 0; i < l.labels.size(); ++i) l.labels[i] = static_cast<std::uint8_t>(i % 3 == 0 ? 255 : i);
  const auto p = temp_file("l.pgm");
  write_label_pgm(p, l);
  EXPECT_EQ(read_label_pgm(p), l);
}
