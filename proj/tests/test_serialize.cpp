#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pdseg/serialize.hpp"

using namespace pdseg;

TEST(TensorContainer, RoundTripBothDtypes) {
  const auto f = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6.5f});
  std::stringstream ss;
  write_tensor(ss, f);
  const auto back = read_tensor<float>(ss);
  EXPECT_EQ(back.shape(), f.shape());
  EXPECT_EQ(std::vector<float>(back.data().begin(), back.data().end()),
            std::vector<float>(f.data().begin(), f.data().end()));

  const auto d = Tensor<double>::from({1, 1, 1, 2}, {0.1, -1e300});
  std::stringstream sd;
  write_tensor(sd, d);
  EXPECT_EQ(read_tensor<double>(sd).at(1), -1e300);
}

TEST(TensorContainer, LayoutIsLittleEndian) {
  std::stringstream ss;
  write_tensor(ss, Tensor<float>::from({2}, {1.0f, 2.0f}));
  const std::string b = ss.str();
  ASSERT_EQ(b.size(), 4u + 1 + 4 + 1 + 8);
  EXPECT_EQ(b.substr(0, 4), "DFTN");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(static_cast<unsigned char>(b[5]), 2);
  EXPECT_EQ(b[9], 0);
  EXPECT_EQ(static_cast<unsigned char>(b[13]), 0x3f);  // 1.0f = 0x3f800000
}

TEST(TensorContainer, ConvertsDtypeOnRead) {
  std::stringstream ss;
  write_tensor(ss, Tensor<double>::from({1}, {0.5}));
  EXPECT_EQ(read_tensor<float>(ss).at(0), 0.5f);
}

TEST(TensorContainer, CorruptionReportsOffset) {
  std::stringstream bad("DFTX");
  try {
    read_tensor<float>(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  std::stringstream ss;
  write_tensor(ss, Tensor<float>::from({3}, {1, 2, 3}));
  std::string s = ss.str();
  std::stringstream truncated(s.substr(0, s.size() - 2));
  EXPECT_THROW(read_tensor<float>(truncated), ParseError);
  s[9] = 7;  // unknown dtype
  std::stringstream dtype(s);
  try {
    read_tensor<float>(dtype);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 9u);
  }
}

TEST(ParamContainer, RoundTripPreservesOrderAndNames) {
  ParamStore<float> store;
  store.add("b.weight", {2, 2}, {1, 2, 3, 4});
  store.add("a.bias", {2}, {5, 6});
  std::stringstream ss;
  write_params(ss, store);
  const auto back = read_params<float>(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.entries()[0].name, "b.weight");
  EXPECT_EQ(back.get("a.bias").at(1), 6.0f);
  EXPECT_TRUE(back.get("a.bias").requires_grad());
}

TEST(ParamStore, DuplicateNamesAndCounts) {
  ParamStore<double> store;
  store.add("x.w", {2, 3});
  EXPECT_THROW(store.add("x.w", {1}), ConfigError);
  store.add("y.w", {4});
  EXPECT_EQ(store.scalar_count(), 10);
  EXPECT_EQ(store.scalar_count("x."), 6);
  EXPECT_THROW(store.get("z"), ConfigError);
}

TEST(Checkpoint, HeaderAndParamsRoundTrip) {
  const auto p = std::filesystem::temp_directory_path() / "pdseg_test_ckpt.bin";
  ParamStore<float> store;
  store.add("w", {3}, {1, 2, 3});
  save_checkpoint(p, "model.num_classes = 6\ntrain.seed = 1\n", store);
  const auto c = load_checkpoint<float>(p);
  EXPECT_EQ(c.header, "model.num_classes = 6\ntrain.seed = 1\n");
  EXPECT_EQ(c.params.get("w").at(2), 3.0f);
  {
    std::ofstream os(p, std::ios::binary);
    os << "no terminator\n";
  }
  EXPECT_THROW(load_checkpoint<float>(p), ParseError);
}
