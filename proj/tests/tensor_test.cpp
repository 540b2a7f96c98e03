#include <gtest/gtest.h>

#include <sstream>

#include "clap/tensor.hpp"
#include "support/gradcheck.hpp"

namespace clap {
namespace {

TEST(Reshape, PreservesElementsAndRoundTrips) {
  auto t = testing::random_tensor({1, 1024, 4, 4}, 1);
  auto flat = reshape(t, {1, 16384});
  EXPECT_EQ(flat.shape(), (Shape{1, 16384}));
  EXPECT_EQ(flat.values(), t.values());
  EXPECT_EQ(reshape(flat, {1, 1024, 4, 4}), t);
}

TEST(Reshape, RejectsCountMismatch) {
  Tensor<double> t({2, 3});
  EXPECT_THROW(reshape(t, {4, 2}), ShapeMismatch);
}

TEST(Tensor, RejectsZeroExtentAndBadData) {
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeMismatch);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeMismatch);
}

TEST(ConcatChannels, FeatureVectors) {
  Tensor<double> a({1, 1024}, 1.0), b({1, 1024}, 2.0);
  auto c = concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{1, 2048}));
  EXPECT_EQ(c[0], 1.0);
  EXPECT_EQ(c[2047], 2.0);

  Tensor<double> x({1, 2}, std::vector<double>{5, 7}), y({1, 1}, std::vector<double>{9});
  EXPECT_EQ(concat_channels(x, y).values(), (std::vector<double>{5, 7, 9}));
}

TEST(ConcatChannels, RejectsBatchMismatch) {
  Tensor<double> a({1, 3}), b({2, 3});
  EXPECT_THROW(concat_channels(a, b), ShapeMismatch);
}

TEST(ConcatChannels, SplitRecoversOperands) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.below(3), ca = 1 + rng.below(5), cb = 1 + rng.below(5);
    const std::size_t h = 1 + rng.below(4), w = 1 + rng.below(4);
    auto a = testing::random_tensor({n, ca, h, w}, seed * 2);
    auto b = testing::random_tensor({n, cb, h, w}, seed * 2 + 1);
    auto [ra, rb] = split_channels(concat_channels(a, b), ca);
    EXPECT_EQ(ra, a);
    EXPECT_EQ(rb, b);
  }
}

TEST(ChannelScale, ScalesEachChannel) {
  Tensor<double> t({1, 2, 2, 2}, 1.0);
  Tensor<double> s({1, 2}, std::vector<double>{0.5, 2.0});
  auto out = channel_scale(t, s);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i], 0.5);
  for (std::size_t i = 4; i < 8; ++i) EXPECT_EQ(out[i], 2.0);
}

TEST(ChannelScale, OnesIsIdentity) {
  auto t = testing::random_tensor({2, 3, 4, 5}, 9);
  EXPECT_EQ(channel_scale(t, Tensor<double>({2, 3, 1, 1}, 1.0)), t);
}

TEST(ChannelScale, RejectsChannelMismatch) {
  Tensor<double> t({1, 3, 4, 4}), s({1, 2});
  EXPECT_THROW(channel_scale(t, s), ShapeMismatch);
}

TEST(RawFormat, HeaderAndRoundTrip) {
  Tensor<float> t({2, 3}, std::vector<float>{1, -2, 3.5f, 0, 1e-30f, 7});
  std::stringstream ss;
  write_raw(ss, t);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, bytes.find('\n')), "f32 2 3");
  EXPECT_EQ(bytes.size(), std::string("f32 2 3\n").size() + 6 * sizeof(float));
  EXPECT_EQ(read_raw<float>(ss), t);
}

TEST(RawFormat, ConvertsBetweenDtypes) {
  Tensor<float> t({3}, std::vector<float>{0.25f, -1.5f, 8});
  std::stringstream ss;
  write_raw(ss, t);
  auto d = read_raw<double>(ss);
  EXPECT_EQ(d.values(), (std::vector<double>{0.25, -1.5, 8}));
}

TEST(RawFormat, TruncatedPayloadThrows) {
  Tensor<double> t({4}, 1.0);
  std::stringstream ss;
  write_raw(ss, t);
  std::string s = ss.str();
  s.pop_back();
  std::istringstream in(s);
  EXPECT_THROW(read_raw<double>(in), MalformedImage);
}

}  // namespace
}  // namespace clap
