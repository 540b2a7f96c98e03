#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "clap/data.hpp"

namespace clap {
namespace {

namespace fs = std::filesystem;

Image noise_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Image img({3, h, w});
  Rng rng(seed);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

Image mirror_x(const Image& img) {
  const std::size_t C = img.dim(0), h = img.dim(1), w = img.dim(2);
  Image out(img.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(c * h + y) * w + x] = img[(c * h + y) * w + (w - 1 - x)];
  return out;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("clap_data_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Ppm, DecodesHeaderWithComment) {
  const std::string bytes = std::string("P6\n# made by hand\n2 1\n255\n") + std::string("\xff\x00\x00\x00\x80\xff", 6);
  const Image img = decode_ppm(bytes);
  ASSERT_EQ(img.shape(), (Shape{3, 1, 2}));
  EXPECT_FLOAT_EQ(img[0], 1.0f);                 // r(0,0)
  EXPECT_FLOAT_EQ(img[1], 0.0f);                 // r(0,1)
  EXPECT_FLOAT_EQ(img[3], 128.0f / 255.0f);      // g(0,1)
  EXPECT_FLOAT_EQ(img[5], 1.0f);                 // b(0,1)
}

TEST(Ppm, SixteenBitSamples) {
  const std::string bytes = std::string("P6 1 1 65535\n") + std::string("\xff\xff\x80\x00\x00\x00", 6);
  const Image img = decode_ppm(bytes);
  EXPECT_FLOAT_EQ(img[0], 1.0f);
  EXPECT_FLOAT_EQ(img[1], 32768.0f / 65535.0f);
  EXPECT_FLOAT_EQ(img[2], 0.0f);
}

TEST(Ppm, TruncatedAndMalformedInputs) {
  EXPECT_THROW(decode_ppm(std::string("P6\n2 2\n255\n") + std::string(5, '\0')), MalformedImage);
  EXPECT_THROW(decode_ppm("P5\n1 1\n255\n\x01"), MalformedImage);
  EXPECT_THROW(decode_ppm("P6\n1"), MalformedImage);
  EXPECT_THROW(decode_ppm(""), MalformedImage);
}

TEST(Ppm, EightBitRoundTripIsExact) {
  Image img({3, 4, 5});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i * 7 % 256) / 255.0f;
  const Image back = decode_ppm(encode_ppm(img));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_FLOAT_EQ(back[i], img[i]);
}

TEST(RawImage, RoundTripIsBitExact) {
  const Image img = noise_image(5, 7, 3);
  const Image back = decode_raw_image(encode_raw_image(img));
  ASSERT_EQ(back.shape(), img.shape());
  EXPECT_TRUE(std::equal(img.data().begin(), img.data().end(), back.data().begin()));
  const std::string bytes = encode_raw_image(img);
  EXPECT_THROW(decode_raw_image(bytes.substr(0, bytes.size() - 3)), MalformedImage);
}

TEST(Resize, IdentityAndConstant) {
  const Image img = noise_image(6, 9, 4);
  const Image same = resize_bilinear(img, 6, 9);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_FLOAT_EQ(same[i], img[i]);
  Image flat({3, 5, 5});
  flat.fill(0.25f);
  const Image up = resize_bilinear(flat, 13, 3);
  for (float v : up.data()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Augment, IdentityDrawIsTheCenterWindow) {
  AugmentParams p;
  p.canvas = 64;
  p.crop = 56;
  const Image img = noise_image(64, 64, 5);
  const Image out = apply_augment(img, identity_draw(p), p);
  const Image expected = center_crop(img, 56);
  ASSERT_EQ(out.shape(), expected.shape());
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], expected[i], 1e-6);
}

TEST(Augment, OutputShapeAndLabelForAnyInputSize) {
  const AugmentParams p;
  Rng rng(9);
  for (std::size_t side : {32, 100, 256, 300}) {
    DatasetRecord rec{noise_image(side, side + 7, side), 3, "x"};
    const auto out = augment(rec, rng, p);
    EXPECT_EQ(out.image.shape(), (Shape{3, 224, 224}));
    EXPECT_EQ(out.label, 3u);
    EXPECT_EQ(out.source_id, "x");
  }
}

// Mirroring the input, negating the angle, and mirroring the crop origin
// gives the mirrored output.
TEST(Augment, MirrorSymmetry) {
  AugmentParams p;
  p.canvas = 64;
  p.crop = 56;
  const Image img = noise_image(64, 64, 6);
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const AugmentDraw d = draw_augment(rng, p);
    AugmentDraw m = d;
    m.angle_deg = -d.angle_deg;
    m.offset_x = p.canvas - p.crop - d.offset_x;
    const Image a = mirror_x(apply_augment(img, d, p));
    const Image b = apply_augment(mirror_x(img), m, p);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-5) << "trial " << trial;
  }
}

// Output pixels checked against a quarter turn written out by hand.
TEST(Augment, QuarterTurnMatchesHandRotation) {
  AugmentParams p;
  p.canvas = 64;
  p.crop = 64;
  p.max_rotation_deg = 90;
  const Image img = noise_image(64, 64, 8);
  const Image out = apply_augment(img, {90.0, 1.0, 0, 0}, p);
  // A source at (row r, col c) lands at (row c, col 63 - r) under this turn.
  for (std::size_t r = 0; r < 64; r += 7)
    for (std::size_t c = 0; c < 64; c += 5) EXPECT_NEAR(out[c * 64 + (63 - r)], img[r * 64 + c], 1e-5);
}

TEST(Augment, DrawsStayInRange) {
  const AugmentParams p;
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto d = draw_augment(rng, p);
    EXPECT_GE(d.angle_deg, -25.0);
    EXPECT_LE(d.angle_deg, 25.0);
    EXPECT_GE(d.scale, 0.75);
    EXPECT_LE(d.scale, 1.25);
    EXPECT_LE(d.offset_x, 32u);
    EXPECT_LE(d.offset_y, 32u);
  }
}

TEST(Augment, RejectsTinyImages) {
  Rng rng(1);
  DatasetRecord rec{noise_image(31, 64, 1), 0, "tiny"};
  EXPECT_THROW(augment(rec, rng), DegenerateInput);
}

TEST(Augment, CanvasForCropKeepsRatio) {
  EXPECT_EQ(canvas_for_crop(224), 256u);
  EXPECT_EQ(canvas_for_crop(64), 73u);
}

TEST(Split, HundredRecordsSixtyTwentyTwenty) {
  const auto counts = split_counts(100, SplitSpec{});
  EXPECT_EQ(counts, (std::array<std::size_t, 3>{60, 20, 20}));
}

TEST(Split, CountsExhaustive) {
  const SplitSpec spec;
  EXPECT_THROW(split_counts(1, spec), InsufficientData);
  EXPECT_THROW(split_counts(2, spec), InsufficientData);
  EXPECT_EQ(split_counts(5, spec), (std::array<std::size_t, 3>{3, 1, 1}));
  for (std::size_t n = 3; n <= 500; ++n) {
    const auto c = split_counts(n, spec);
    EXPECT_EQ(c[0] + c[1] + c[2], n);
    const double f[3] = {spec.train, spec.val, spec.test};
    for (int i = 0; i < 3; ++i) {
      EXPECT_GE(c[i], 1u);
      EXPECT_LE(std::abs(static_cast<double>(c[i]) - f[i] * static_cast<double>(n)), 1.0 + 1e-9) << n;
    }
  }
}

TEST(Split, ZeroFractionStaysEmpty) {
  const auto c = split_counts(7, SplitSpec{0.8, 0.2, 0.0, 0});
  EXPECT_EQ(c[2], 0u);
  EXPECT_EQ(c[0] + c[1], 7u);
}

TEST(Split, StratifiedDisjointDeterministic) {
  const auto set = make_synthetic(3, 20, 16, 2);
  const SplitSpec spec{0.6, 0.2, 0.2, 4};
  const auto a = split(set.records, spec), b = split(set.records, spec);
  std::set<std::string> seen;
  for (const auto* part : {&a.train, &a.val, &a.test})
    for (const auto& r : *part) EXPECT_TRUE(seen.insert(r.source_id).second);
  EXPECT_EQ(seen.size(), 60u);
  for (std::size_t c = 0; c < 3; ++c) {
    auto count = [c](const std::vector<DatasetRecord>& v) {
      return std::count_if(v.begin(), v.end(), [c](const DatasetRecord& r) { return r.label == c; });
    };
    EXPECT_EQ(count(a.train), 12);
    EXPECT_EQ(count(a.val), 4);
    EXPECT_EQ(count(a.test), 4);
  }
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].source_id, b.train[i].source_id);
  const auto other = split(set.records, SplitSpec{0.6, 0.2, 0.2, 5});
  bool differs = false;
  for (std::size_t i = 0; i < a.train.size(); ++i) differs |= a.train[i].source_id != other.train[i].source_id;
  EXPECT_TRUE(differs);
}

TEST(Split, FivePerClassGivesThreeOneOne) {
  const auto set = make_synthetic(4, 5, 16, 3);
  const auto s = split(set.records, SplitSpec{});
  EXPECT_EQ(s.train.size(), 12u);
  EXPECT_EQ(s.val.size(), 4u);
  EXPECT_EQ(s.test.size(), 4u);
}

TEST(Split, InvalidSpecs) {
  const auto set = make_synthetic(2, 2, 16, 3);
  EXPECT_THROW(split(set.records, SplitSpec{}), InsufficientData);
  EXPECT_THROW(split({}, SplitSpec{}), InsufficientData);
  EXPECT_THROW(SplitSpec({0.5, 0.2, 0.2, 0}).validate(), InvalidConfig);
  EXPECT_THROW(SplitSpec({1.2, -0.2, 0.0, 0}).validate(), InvalidConfig);
}

TEST(Synthetic, BalancedAndBitIdentical) {
  const auto a = make_synthetic(4, 250, 32, 7);
  const auto b = make_synthetic(4, 250, 32, 7);
  ASSERT_EQ(a.records.size(), 1000u);
  std::vector<std::size_t> per(4, 0);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    ++per[a.records[i].label];
    EXPECT_EQ(a.records[i].source_id, b.records[i].source_id);
    EXPECT_TRUE(std::equal(a.records[i].image.data().begin(), a.records[i].image.data().end(),
                           b.records[i].image.data().begin()));
    EXPECT_EQ(a.boxes[i], b.boxes[i]);
  }
  for (auto n : per) EXPECT_EQ(n, 250u);
  EXPECT_EQ(a.class_names[3], "blob3");
}

TEST(Synthetic, ValuesAndBoxes) {
  const auto set = make_synthetic(3, 10, 32, 1);
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    for (float v : set.records[i].image.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    const auto& box = set.boxes[i];
    EXPECT_LT(box.x0, box.x1);
    EXPECT_LT(box.y0, box.y1);
    EXPECT_GE(box.x1 - box.x0, 10u);  // diameter at least 0.38 * 32
    EXPECT_EQ(&set.box_for(set.records[i].source_id), &box);
  }
  EXPECT_THROW(set.box_for("synthetic/99"), InvalidConfig);
}

// Classes are separable by a simple oracle: 3-NN on the mean color of the
// bright pixels.
TEST(Synthetic, NearestNeighbourOracleSeparatesClasses) {
  const auto set = make_synthetic(4, 60, 32, 12);
  const auto parts = split(set.records, SplitSpec{0.5, 0.5, 0.0, 1});
  auto feature = [](const Image& img) {
    const std::size_t P = img.dim(1) * img.dim(2);
    std::array<double, 3> sum{};
    std::size_t n = 0;
    for (std::size_t p = 0; p < P; ++p) {
      const float m = std::max({img[p], img[P + p], img[2 * P + p]});
      if (m < 0.35f) continue;
      for (std::size_t c = 0; c < 3; ++c) sum[c] += img[c * P + p];
      ++n;
    }
    for (auto& s : sum) s /= std::max<std::size_t>(n, 1);
    return sum;
  };
  std::vector<std::array<double, 3>> train_f;
  for (const auto& r : parts.train) train_f.push_back(feature(r.image));
  std::size_t correct = 0;
  for (const auto& q : parts.val) {
    const auto f = feature(q.image);
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t i = 0; i < train_f.size(); ++i) {
      double s = 0;
      for (std::size_t c = 0; c < 3; ++c) s += (f[c] - train_f[i][c]) * (f[c] - train_f[i][c]);
      d.emplace_back(s, parts.train[i].label);
    }
    std::partial_sort(d.begin(), d.begin() + 3, d.end());
    std::vector<int> votes(4, 0);
    for (int k = 0; k < 3; ++k) ++votes[d[k].second];
    const auto pred = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    correct += pred == q.label;
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(parts.val.size()), 0.9);
}

TEST(Synthetic, InvalidArguments) {
  EXPECT_THROW(make_synthetic(1, 5, 32, 0), InvalidConfig);
  EXPECT_THROW(make_synthetic(2, 0, 32, 0), InvalidConfig);
  EXPECT_THROW(make_synthetic(2, 5, 8, 0), InvalidConfig);
}

TEST(Batches, StackImagesInIndexOrder) {
  const auto set = make_synthetic(2, 3, 16, 1);
  const std::vector<std::size_t> idx{4, 0, 2};
  const auto x = stack_images<double>(set.records, idx, 1, 3);
  ASSERT_EQ(x.shape(), (Shape{2, 3, 16, 16}));
  EXPECT_DOUBLE_EQ(x[0], set.records[0].image[0]);
  EXPECT_DOUBLE_EQ(x[3 * 16 * 16 + 5], set.records[2].image[5]);
}

TEST(Directory, LoadsClassesAndManifest) {
  const auto dir = scratch_dir("load");
  const auto set = make_synthetic(2, 3, 20, 4);
  for (const auto& r : set.records) {
    const fs::path cls = dir / set.class_names[r.label];
    fs::create_directories(cls);
    const std::string name = r.source_id.substr(r.source_id.find('/') + 1);
    std::ofstream(cls / (name + ".tensor"), std::ios::binary) << encode_raw_image(r.image);
  }
  std::ofstream(dir / "blob0" / "notes.txt") << "ignored";
  const auto loaded = load_image_directory(dir, 16);
  EXPECT_EQ(loaded.class_names, (std::vector<std::string>{"blob0", "blob1"}));
  ASSERT_EQ(loaded.records.size(), 6u);
  for (const auto& r : loaded.records) {
    EXPECT_EQ(r.image.shape(), (Shape{3, 16, 16}));
    EXPECT_EQ(r.source_id.substr(0, 5), "blob" + std::to_string(r.label));
  }

  write_class_manifest(dir / kClassManifest, {"blob1", "blob0"});
  const auto names = read_class_manifest(dir / kClassManifest);
  EXPECT_EQ(names, (std::vector<std::string>{"blob1", "blob0"}));
  const auto remapped = load_image_directory(dir, 16, names);
  for (const auto& r : remapped.records) EXPECT_EQ(r.source_id.substr(0, 5), names[r.label]);
  fs::remove_all(dir);
}

TEST(Directory, EmptyOrMissingRoot) {
  const auto dir = scratch_dir("empty");
  EXPECT_THROW(load_image_directory(dir, 16), EmptyDataset);
  EXPECT_THROW(load_image_directory(dir / "missing", 16), EmptyDataset);
  fs::create_directories(dir / "a");
  EXPECT_THROW(load_image_directory(dir, 16), EmptyDataset);
  fs::remove_all(dir);
}

TEST(Directory, MalformedFileIsReported) {
  const auto dir = scratch_dir("bad");
  fs::create_directories(dir / "a");
  std::ofstream(dir / "a" / "x.ppm") << "P6\n4 4\n255\n";
  EXPECT_THROW(load_image_directory(dir, 16), MalformedImage);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace clap
