#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "roadseg/dataset.hpp"
#include "roadseg/png_io.hpp"
#include "roadseg/synthetic.hpp"
#include "test_support.hpp"

namespace roadseg {
namespace {

using test_util::TempDir;

SamplePair numbered_pair(int h, int w, const std::string& id = "p") {
  SamplePair p;
  p.source_id = id;
  p.image = RasterImage(h, w, 3);
  p.mask = BinaryMask(h, w);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) p.image.at(c, y, x) = static_cast<float>((c * 7919 + y * w + x) % 251) / 250.0f;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) p.mask.at(y, x) = ((x / 3 + y / 5) % 2) ? 1 : 0;
  }
  return p;
}

RasterImage row_image(std::vector<float> v) {
  RasterImage img(1, static_cast<int>(v.size()), 1);
  img.values = std::move(v);
  return img;
}

TEST(LoadPairs, BinarizesAtGray128AndSortsById) {
  TempDir dir("load");
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  for (const char* id : {"b", "a"}) {
    png::write_rgb(dir / "images" / (std::string(id) + ".png"), RasterImage(1, 3, 3, 0.5f));
    png::write_gray8(dir / "masks" / (std::string(id) + ".png"), 1, 3, {127, 128, 255});
  }
  auto pairs = load_pairs(dir / "images", dir / "masks");
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].source_id, "a");
  EXPECT_EQ(pairs[1].source_id, "b");
  EXPECT_EQ(pairs[0].mask.values, (std::vector<std::uint8_t>{0, 1, 1}));
  for (float v : pairs[0].image.values) EXPECT_NEAR(v, 128.0f / 255.0f, 1e-6f);
}

TEST(LoadPairs, SinglePixelMaskAt128IsRoad) {
  TempDir dir("onepx");
  png::write_gray8(dir / "m.png", 1, 1, {128});
  EXPECT_EQ(read_mask(dir / "m.png").values, std::vector<std::uint8_t>{1});
}

TEST(LoadPairs, EmptyDirectoryGivesEmptyList) {
  TempDir dir("empty");
  std::filesystem::create_directories(dir / "i");
  std::filesystem::create_directories(dir / "m");
  EXPECT_TRUE(load_pairs(dir / "i", dir / "m").empty());
}

TEST(LoadPairs, MissingMaskNamesTheFile) {
  TempDir dir("missing");
  std::filesystem::create_directories(dir / "i");
  std::filesystem::create_directories(dir / "m");
  png::write_rgb(dir / "i" / "sat_17.png", RasterImage(4, 4, 3));
  try {
    load_pairs(dir / "i", dir / "m");
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("sat_17"), std::string::npos) << e.what();
  }
}

TEST(LoadPairs, DimensionMismatchIsFatal) {
  TempDir dir("mismatch");
  std::filesystem::create_directories(dir / "i");
  std::filesystem::create_directories(dir / "m");
  png::write_rgb(dir / "i" / "x.png", RasterImage(4, 4, 3));
  png::write_mask(dir / "m" / "x.png", BinaryMask(4, 5));
  EXPECT_THROW(load_pairs(dir / "i", dir / "m"), std::runtime_error);
}

TEST(Patches, OffsetsFor400At256Stride72) {
  EXPECT_EQ(patch_offsets(400, 256, 72), (std::vector<int>{0, 72, 144}));
}

TEST(Patches, NinePatchesInRowMajorOrderKeepAlignment) {
  const SamplePair src = numbered_pair(400, 400);
  auto patches = extract_patches(src);
  ASSERT_EQ(patches.size(), 9u);
  const int offs[3] = {0, 72, 144};
  for (int i = 0; i < 9; ++i) {
    const int top = offs[i / 3], left = offs[i % 3];
    const auto& p = patches[i];
    ASSERT_EQ(p.image.height, 256);
    ASSERT_EQ(p.mask.width, 256);
    EXPECT_EQ(p.image.at(2, 0, 0), src.image.at(2, top, left));
    EXPECT_EQ(p.image.at(1, 255, 17), src.image.at(1, top + 255, left + 17));
    EXPECT_EQ(p.mask.at(100, 200), src.mask.at(top + 100, left + 200));
    EXPECT_EQ(p.source_id, patch_id("p", top, left));
  }
}

TEST(Patches, HundredImagesGiveNineHundred) {
  std::size_t total = 0;
  const SamplePair src = numbered_pair(400, 400);
  for (int i = 0; i < 100; ++i) total += extract_patches(src, 256, 72).size();
  EXPECT_EQ(total, 900u);
}

TEST(Patches, FullSizePatchIsIdentity) {
  const SamplePair src = numbered_pair(40, 40);
  auto patches = extract_patches(src, 40, 72);
  ASSERT_EQ(patches.size(), 1u);
  EXPECT_EQ(patches[0].image, src.image);
  EXPECT_EQ(patches[0].mask, src.mask);
}

TEST(Patches, LargerThanImageRejected) {
  const SamplePair src = numbered_pair(40, 40);
  try {
    extract_patches(src, 41, 8);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("patch larger than image"), std::string::npos);
  }
}

TEST(Augment, ZeroRangesNoFlipsIsIdentity) {
  const SamplePair src = numbered_pair(32, 24);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5; ++i) {
    const SamplePair out = augment_pair(src, AugmentParams::none(), rng);
    EXPECT_EQ(out.image, src.image);
    EXPECT_EQ(out.mask, src.mask);
  }
}

TEST(Augment, HorizontalFlipReversesColumnsOfBoth) {
  const SamplePair src = numbered_pair(8, 6);
  AffineDraw d;
  d.flip_horizontal = true;
  const SamplePair out = apply_augmentation(src, d);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 6; ++x) {
      EXPECT_EQ(out.mask.at(y, x), src.mask.at(y, 5 - x));
      for (int c = 0; c < 3; ++c) EXPECT_EQ(out.image.at(c, y, x), src.image.at(c, y, 5 - x));
    }
  }
}

TEST(Augment, HorizontalFlipOnlyParams) {
  AugmentParams p = AugmentParams::none();
  p.horizontal_flip = true;
  const SamplePair src = numbered_pair(8, 6);
  std::mt19937_64 rng(11);
  int flipped = 0;
  for (int i = 0; i < 20; ++i) {
    const SamplePair out = augment_pair(src, p, rng);
    if (out.mask == src.mask) continue;
    ++flipped;
    for (int x = 0; x < 6; ++x) EXPECT_EQ(out.image.at(0, 3, x), src.image.at(0, 3, 5 - x));
  }
  EXPECT_GT(flipped, 0);
}

TEST(Augment, MaskStaysBinaryUnderMaxRotation) {
  AugmentParams p;
  p.rotation_range = 180.0;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    SamplePair src;
    src.image = RasterImage(24, 24, 3, 0.3f);
    src.mask = BinaryMask(24, 24);
    for (auto& v : src.mask.values) v = static_cast<std::uint8_t>(rng() & 1u);
    const SamplePair out = augment_pair(src, p, rng);
    for (auto v : out.mask.values) ASSERT_TRUE(v == 0 || v == 1);
  }
}

TEST(Augment, ImageAndMaskMoveTogether) {
  // A road mask painted with the image's own red channel stays consistent after warping.
  SamplePair src;
  src.image = RasterImage(32, 32, 3, 0.0f);
  src.mask = BinaryMask(32, 32);
  for (int y = 10; y < 20; ++y) {
    for (int x = 0; x < 32; ++x) {
      src.mask.at(y, x) = 1;
      src.image.at(0, y, x) = 1.0f;
    }
  }
  AugmentParams p;
  std::mt19937_64 rng(21);
  for (int i = 0; i < 50; ++i) {
    const SamplePair out = augment_pair(src, p, rng);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) ASSERT_EQ(out.mask.at(y, x) == 1, out.image.at(0, y, x) > 0.5f);
    }
  }
}

TEST(MirrorPad, ZeroIsIdentity) {
  const SamplePair src = numbered_pair(5, 7);
  EXPECT_EQ(mirror_pad(src.image, 0), src.image);
}

TEST(MirrorPad, ReflectsExcludingEdge) {
  // The row [1, 2, 3] reflected by one pixel each side, taken from a 3x3 image.
  RasterImage wide(3, 3, 1);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) wide.at(0, y, x) = static_cast<float>(x + 1);
  }
  const RasterImage out = mirror_pad(wide, 1);
  ASSERT_EQ(out.height, 5);
  ASSERT_EQ(out.width, 5);
  for (int x = 0; x < 5; ++x) EXPECT_EQ(out.at(0, 2, x), (std::vector<float>{2, 1, 2, 3, 2})[x]);
}

TEST(MirrorPad, TwoByTwoCornersAreDiagonalInterior) {
  RasterImage img(2, 2, 1);
  img.values = {1, 2, 3, 4};
  const RasterImage out = mirror_pad(img, 1);
  ASSERT_EQ(out.height, 4);
  ASSERT_EQ(out.width, 4);
  EXPECT_EQ(out.at(0, 0, 0), 4.0f);
  EXPECT_EQ(out.at(0, 0, 3), 3.0f);
  EXPECT_EQ(out.at(0, 3, 0), 2.0f);
  EXPECT_EQ(out.at(0, 3, 3), 1.0f);
  const std::vector<float> expect = {4, 3, 4, 3, 2, 1, 2, 1, 4, 3, 4, 3, 2, 1, 2, 1};
  EXPECT_EQ(out.values, expect);
}

TEST(MirrorPad, PadAtLeastDimensionRejected) {
  EXPECT_THROW(mirror_pad(row_image({1, 2, 3}), 1), std::invalid_argument);
  RasterImage img(3, 3, 1);
  EXPECT_THROW(mirror_pad(img, 3), std::invalid_argument);
  EXPECT_THROW(mirror_pad(img, -1), std::invalid_argument);
}

TEST(TrainingWindow, AllRoadLabelsAreOne) {
  SamplePair p = numbered_pair(48, 48);
  std::fill(p.mask.values.begin(), p.mask.values.end(), std::uint8_t{1});
  std::vector<SamplePair> pairs{p};
  std::mt19937_64 rng(9);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(sample_training_window(pairs, rng).label, 1);
}

TEST(TrainingWindow, WindowIs64AndDefinedAtCorners) {
  std::vector<SamplePair> pairs{numbered_pair(32, 32)};
  std::mt19937_64 rng(1);
  bool saw_corner = false;
  for (int i = 0; i < 400; ++i) {
    const TrainingWindow tw = sample_training_window(pairs, rng);
    ASSERT_EQ(tw.window.height, 64);
    ASSERT_EQ(tw.window.width, 64);
    ASSERT_EQ(tw.window.channels, 3);
    for (float v : tw.window.values) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    saw_corner = saw_corner || (tw.row == 0 && tw.col == 0) || (tw.row == 16 && tw.col == 16);
  }
  EXPECT_TRUE(saw_corner);
}

TEST(TrainingWindow, NoRotationNoFlipEqualsRawExtraction) {
  std::vector<SamplePair> pairs{numbered_pair(40, 40)};
  std::mt19937_64 rng(2);
  int checked = 0;
  for (int i = 0; i < 200 && checked < 5; ++i) {
    const TrainingWindow tw = sample_training_window(pairs, rng);
    if (tw.flipped || tw.quarter_turns != 0) continue;
    ++checked;
    const RasterImage padded = mirror_pad(pairs[0].image, 24);
    EXPECT_EQ(tw.window, extract_window(padded, tw.row, tw.col, 64));
    // Centre pixel of the window is the patch's top-left pixel.
    EXPECT_EQ(tw.window.at(1, 24, 24), pairs[0].image.at(1, tw.row, tw.col));
  }
  EXPECT_EQ(checked, 5);
}

TEST(TrainingWindow, LabelUsesStrictQuarterThreshold) {
  SamplePair p = numbered_pair(16, 16);
  std::fill(p.mask.values.begin(), p.mask.values.end(), std::uint8_t{0});
  for (int i = 0; i < 64; ++i) p.mask.values[i] = 1;
  std::vector<SamplePair> pairs{p};
  std::mt19937_64 rng(4);
  EXPECT_EQ(sample_training_window(pairs, rng, 16, 8).label, 0);
  pairs[0].mask.values[64] = 1;
  EXPECT_EQ(sample_training_window(pairs, rng, 16, 8).label, 1);
}

TEST(TrainingWindow, EmptyPairsRejected) {
  std::mt19937_64 rng(0);
  EXPECT_THROW(sample_training_window({}, rng), std::invalid_argument);
}

TEST(Split, NineHundredAtPointEight) {
  std::vector<int> items(900);
  std::iota(items.begin(), items.end(), 0);
  auto [train, val] = split_train_val(items, 0.8, 42);
  EXPECT_EQ(train.size(), 720u);
  EXPECT_EQ(val.size(), 180u);
  std::set<int> all(train.begin(), train.end());
  all.insert(val.begin(), val.end());
  EXPECT_EQ(all.size(), 900u);
}

TEST(Split, TwoItemsHalfHalf) {
  auto [train, val] = split_train_val(std::vector<int>{1, 2}, 0.5, 0);
  EXPECT_EQ(train.size(), 1u);
  EXPECT_EQ(val.size(), 1u);
}

TEST(Split, SameSeedSameSplit) {
  std::vector<int> items(50);
  std::iota(items.begin(), items.end(), 0);
  EXPECT_EQ(split_train_val(items, 0.8, 7), split_train_val(items, 0.8, 7));
  EXPECT_NE(split_train_val(items, 0.8, 7).first, split_train_val(items, 0.8, 8).first);
}

TEST(Split, FewerThanTwoRejected) {
  EXPECT_THROW(split_train_val(std::vector<int>{1}, 0.8, 0), std::invalid_argument);
}

TEST(Synthetic, DeterministicBinaryAndContainsRoad) {
  const auto a = generate_synthetic_set(3, 5, {});
  const auto b = generate_synthetic_set(3, 5, {});
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].mask, b[i].mask);
    const auto road = std::count(a[i].mask.values.begin(), a[i].mask.values.end(), 1);
    EXPECT_GT(road, 0);
    EXPECT_LT(road, static_cast<long>(a[i].mask.values.size()));
  }
}

}  // namespace
}  // namespace roadseg
