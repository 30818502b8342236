#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "caepl/dataset.hpp"

namespace fs = std::filesystem;
using caepl::Dataset;
using caepl::SegSample;
using caepl::SyntheticSpec;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("caepl_data_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.size = 32;
  spec.train_count = 12;
  spec.val_count = 4;
  spec.seed = 99;
  return spec;
}

TEST(Synthetic, SameSeedBitwiseIdentical) {
  auto a = caepl::generate_synthetic(small_spec());
  auto b = caepl::generate_synthetic(small_spec());
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train.samples[i].image.values, b.train.samples[i].image.values);
    EXPECT_EQ(a.train.samples[i].label, b.train.samples[i].label);
    EXPECT_EQ(a.train.samples[i].id, b.train.samples[i].id);
  }
  auto c = caepl::generate_synthetic([] {
    auto s = small_spec();
    s.seed = 100;
    return s;
  }());
  EXPECT_NE(a.train.samples[0].image.values, c.train.samples[0].image.values);
}

TEST(Synthetic, EveryClassAppearsInTrainSplit) {
  auto data = caepl::generate_synthetic(small_spec());
  std::set<int> seen;
  for (const auto& s : data.train.samples)
    for (int l : s.label) seen.insert(l);
  for (int k = 0; k < 5; ++k) EXPECT_TRUE(seen.count(k)) << "class " << k;
}

TEST(Synthetic, LabelsRederiveFromShapeList) {
  auto spec = small_spec();
  auto data = caepl::generate_synthetic(spec);
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    auto relabel = caepl::label_from_shapes(data.train_shapes[i].shapes, spec.size,
                                            spec.void_border);
    EXPECT_EQ(relabel, data.train.samples[i].label) << data.train.samples[i].id;
  }
  // full re-rasterization reproduces pixels too
  auto redo = caepl::rerasterize(spec, 0x7261696E, 3, data.train_shapes[3]);
  EXPECT_EQ(redo.image.values, data.train.samples[3].image.values);
  EXPECT_EQ(redo.label, data.train.samples[3].label);
}

TEST(Synthetic, VoidBorderMode) {
  auto spec = small_spec();
  spec.void_border = 2;
  auto data = caepl::generate_synthetic(spec);
  const auto& label = data.train.samples[0].label;
  for (int x = 0; x < spec.size; ++x) {
    EXPECT_EQ(label[static_cast<std::size_t>(x)], caepl::kVoidLabel);
    EXPECT_EQ(label[static_cast<std::size_t>(spec.size - 1) * spec.size + x], caepl::kVoidLabel);
  }
  EXPECT_NE(label[static_cast<std::size_t>(5) * spec.size + 5], caepl::kVoidLabel);
}

TEST(Synthetic, BadSpecsRejected) {
  auto spec = small_spec();
  spec.size = 8;
  EXPECT_THROW(caepl::generate_synthetic(spec), caepl::ConfigError);
  spec = small_spec();
  spec.num_classes = 1;
  EXPECT_THROW(caepl::generate_synthetic(spec), caepl::ConfigError);
}

TEST(NetpbmRoundTrip, ExportedDatasetReloadsExactly) {
  TempDir tmp;
  auto data = caepl::generate_synthetic(small_spec());
  caepl::save_dataset(data.train, tmp.path);
  auto reloaded = caepl::load_image_label_dirs(tmp.path / "images", tmp.path / "labels", 5);
  ASSERT_EQ(reloaded.size(), data.train.size());
  for (std::size_t i = 0; i < reloaded.size(); ++i) {
    EXPECT_EQ(reloaded.samples[i].id, data.train.samples[i].id);
    EXPECT_EQ(reloaded.samples[i].label, data.train.samples[i].label);
    ASSERT_EQ(reloaded.samples[i].image.values.size(), data.train.samples[i].image.values.size());
    for (std::size_t j = 0; j < reloaded.samples[i].image.values.size(); ++j)
      ASSERT_FLOAT_EQ(reloaded.samples[i].image.values[j], data.train.samples[i].image.values[j]);
  }
}

TEST(Loader, EmptyDirsAreValidAndWarned) {
  TempDir tmp;
  fs::create_directories(tmp.path / "images");
  fs::create_directories(tmp.path / "labels");
  auto ds = caepl::load_image_label_dirs(tmp.path / "images", tmp.path / "labels", 5);
  EXPECT_TRUE(ds.empty());
}

TEST(Loader, UnpairedFilesAreListed) {
  TempDir tmp;
  auto data = caepl::generate_synthetic(small_spec());
  caepl::save_dataset(data.train, tmp.path);
  fs::remove(tmp.path / "labels" / (data.train.samples[2].id + ".pgm"));
  try {
    caepl::load_image_label_dirs(tmp.path / "images", tmp.path / "labels", 5);
    FAIL() << "expected DataError";
  } catch (const caepl::DataError& e) {
    EXPECT_NE(std::string(e.what()).find(data.train.samples[2].id), std::string::npos);
  }
}

TEST(Loader, LabelRangeValidated) {
  TempDir tmp;
  auto data = caepl::generate_synthetic(small_spec());
  caepl::save_dataset(data.train, tmp.path);
  // reload with a class budget smaller than the label values present
  EXPECT_THROW(caepl::load_image_label_dirs(tmp.path / "images", tmp.path / "labels", 2),
               caepl::DataError);
}

TEST(Downscale, IdentityAndConstants) {
  auto data = caepl::generate_synthetic(small_spec());
  const SegSample& s = data.train.samples[0];
  auto same = caepl::downscale(s, 1);
  EXPECT_EQ(same.image.values, s.image.values);
  EXPECT_EQ(same.label, s.label);

  SegSample flat;
  flat.id = "flat";
  flat.image = caepl::Image{.channels = 3, .height = 8, .width = 8};
  flat.image.values.assign(3 * 64, 0.25f);
  flat.label.assign(64, 2);
  auto down = caepl::downscale(flat, 2);
  for (float v : down.image.values) EXPECT_FLOAT_EQ(v, 0.25f);
  for (int v : down.label) EXPECT_EQ(v, 2);
}

TEST(Downscale, CheckerboardAveragesToHalf) {
  SegSample s;
  s.image = caepl::Image{.channels = 1, .height = 4, .width = 4};
  s.image.values.resize(16);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) s.image.values[static_cast<std::size_t>(y) * 4 + x] = (x + y) % 2;
  auto down = caepl::downscale(s, 2);
  ASSERT_EQ(down.image.values.size(), 4u);
  for (float v : down.image.values) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Downscale, MatchesExactDoubleOracle) {
  auto data = caepl::generate_synthetic(small_spec());
  const SegSample& s = data.train.samples[1];
  auto down = caepl::downscale(s, 4);
  const int W = s.image.width, w = down.image.width;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < down.image.height; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int dy = 0; dy < 4; ++dy)
          for (int dx = 0; dx < 4; ++dx)
            acc += static_cast<double>(s.image.at(c, y * 4 + dy, x * 4 + dx));
        // averaging runs in double and rounds once into float storage
        ASSERT_EQ(down.image.at(c, y, x), static_cast<float>(acc / 16.0))
            << c << "," << y << "," << x;
      }
}

TEST(Downscale, TwiceByTwoEqualsByFour) {
  // images are stored at 32-bit, so the composition agrees up to one
  // intermediate rounding per step
  auto spec = small_spec();
  auto data = caepl::generate_synthetic(spec);
  const SegSample& s = data.train.samples[1];
  auto twice = caepl::downscale(caepl::downscale(s, 2), 2);
  auto once = caepl::downscale(s, 4);
  ASSERT_EQ(twice.image.values.size(), once.image.values.size());
  for (std::size_t i = 0; i < twice.image.values.size(); ++i)
    EXPECT_NEAR(twice.image.values[i], once.image.values[i], 2e-6);
  EXPECT_EQ(twice.label, once.label);
}

TEST(Downscale, VoidPreservedAndErrors) {
  SegSample s;
  s.image = caepl::Image{.channels = 1, .height = 4, .width = 4};
  s.image.values.assign(16, 0.0f);
  s.label.assign(16, caepl::kVoidLabel);
  auto down = caepl::downscale(s, 2);
  for (int v : down.label) EXPECT_EQ(v, caepl::kVoidLabel);

  SegSample odd;
  odd.image = caepl::Image{.channels = 1, .height = 5, .width = 4};
  odd.image.values.assign(20, 0.0f);
  EXPECT_THROW(caepl::downscale(odd, 2), caepl::ShapeError);
}

TEST(Batches, WholeDatasetSingleBatchIsPermutation) {
  auto batches = caepl::batch_indices(10, 10, 5, 1);
  ASSERT_EQ(batches.size(), 1u);
  std::set<int> seen(batches[0].begin(), batches[0].end());
  EXPECT_EQ(seen.size(), 10u);
  // permuted with overwhelming probability for this seed
  std::vector<int> sorted(batches[0]);
  std::sort(sorted.begin(), sorted.end());
  EXPECT_NE(batches[0], sorted);
}

TEST(Batches, ShortFinalBatchKept) {
  auto batches = caepl::batch_indices(7, 5, 1, 1);
  ASSERT_EQ(batches.size(), 2u);
  EXPECT_EQ(batches[0].size(), 5u);
  EXPECT_EQ(batches[1].size(), 2u);
}

TEST(Batches, EveryIndexExactlyOncePerEpoch) {
  caepl::RngStream rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 40));
    const int bs = static_cast<int>(rng.uniform_int(1, 12));
    const int epoch = static_cast<int>(rng.uniform_int(0, 5));
    auto batches = caepl::batch_indices(n, bs, rng.next_u64(), epoch);
    std::vector<int> all;
    for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    ASSERT_EQ(static_cast<int>(all.size()), n);
    for (int i = 0; i < n; ++i) EXPECT_EQ(all[static_cast<std::size_t>(i)], i);
  }
}

TEST(Batches, DeterministicPerSeedEpochAndFreshAcrossEpochs) {
  auto a = caepl::batch_indices(32, 4, 7, 3);
  auto b = caepl::batch_indices(32, 4, 7, 3);
  EXPECT_EQ(a, b);
  auto c = caepl::batch_indices(32, 4, 7, 4);
  EXPECT_NE(a, c);
}

}  // namespace
