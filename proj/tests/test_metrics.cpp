#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "caepl/metrics.hpp"
#include "caepl/rng.hpp"

using caepl::ConfusionMatrix;

namespace {

constexpr int kVoid = 255;

struct Maps {
  std::vector<int> pred, gt;
};

Maps random_maps(int n, int classes, double void_frac, caepl::RngStream& rng) {
  Maps m;
  m.pred.resize(static_cast<std::size_t>(n));
  m.gt.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    m.pred[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(0, classes));
    m.gt[static_cast<std::size_t>(i)] = rng.uniform() < void_frac
                                            ? kVoid
                                            : static_cast<int>(rng.uniform_int(0, classes));
  }
  return m;
}

// Brute-force per-pixel oracle, independent of the matrix implementation.
struct OracleScores {
  double pixel_acc = 0;
  double mean_iou = 0;
};

OracleScores oracle_scores(const std::vector<int>& pred, const std::vector<int>& gt, int classes) {
  std::int64_t hits = 0, total = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kVoid) continue;
    ++total;
    hits += pred[i] == gt[i];
  }
  OracleScores s;
  s.pixel_acc = static_cast<double>(hits) / static_cast<double>(total);
  double iou_sum = 0;
  int counted = 0;
  for (int k = 0; k < classes; ++k) {
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == kVoid) continue;
      const bool in_pred = pred[i] == k, in_gt = gt[i] == k;
      inter += in_pred && in_gt;
      uni += in_pred || in_gt;
    }
    if (uni == 0) continue;
    iou_sum += static_cast<double>(inter) / static_cast<double>(uni);
    ++counted;
  }
  s.mean_iou = iou_sum / counted;
  return s;
}

TEST(ConfusionMatrix, AllVoidLeavesMatrixUntouched) {
  ConfusionMatrix cm(3);
  std::vector<int> gt(10, kVoid), pred(10, 1);
  cm.accumulate(pred, gt, kVoid);
  EXPECT_EQ(cm.total(), 0u);
  EXPECT_THROW(cm.pixel_accuracy(), caepl::ScoreError);
  EXPECT_THROW(cm.mean_iou(), caepl::ScoreError);
}

TEST(ConfusionMatrix, PerfectPredictionHitsDiagonal) {
  ConfusionMatrix cm(4);
  std::vector<int> gt = {0, 1, 2, 3, 2, 1};
  cm.accumulate(gt, gt, kVoid);
  for (int g = 0; g < 4; ++g)
    for (int p = 0; p < 4; ++p)
      if (g != p) EXPECT_EQ(cm.at(g, p), 0u);
  EXPECT_DOUBLE_EQ(cm.pixel_accuracy(), 1.0);
  EXPECT_DOUBLE_EQ(cm.mean_iou(), 1.0);
}

TEST(ConfusionMatrix, MatchesLoopOracleOnRandomMaps) {
  caepl::RngStream rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    auto maps = random_maps(16 * 16, 5, 0.15, rng);
    ConfusionMatrix cm(5);
    cm.accumulate(maps.pred, maps.gt, kVoid);
    // cell-level check
    for (int g = 0; g < 5; ++g)
      for (int p = 0; p < 5; ++p) {
        std::uint64_t expect = 0;
        for (std::size_t i = 0; i < maps.gt.size(); ++i)
          expect += maps.gt[i] == g && maps.pred[i] == p;
        ASSERT_EQ(cm.at(g, p), expect);
      }
    auto oracle = oracle_scores(maps.pred, maps.gt, 5);
    EXPECT_DOUBLE_EQ(cm.pixel_accuracy(), oracle.pixel_acc);
    EXPECT_DOUBLE_EQ(cm.mean_iou(), oracle.mean_iou);
  }
}

TEST(PixelAccuracy, HandValues) {
  ConfusionMatrix cm(2);
  std::vector<int> gt = {0, 0, 1, 1}, pred = {0, 1, 0, 1};
  cm.accumulate(pred, gt, kVoid);  // matrix [[1,1],[1,1]]
  EXPECT_DOUBLE_EQ(cm.pixel_accuracy(), 0.5);
}

TEST(MeanIou, HalfHalfAllPredictedZero) {
  // gt half class 0, half class 1; pred all class 0:
  // IoU_0 = 0.5, IoU_1 = 0 -> mean 0.25
  ConfusionMatrix cm(2);
  std::vector<int> gt(100, 0), pred(100, 0);
  std::fill(gt.begin() + 50, gt.end(), 1);
  cm.accumulate(pred, gt, kVoid);
  EXPECT_DOUBLE_EQ(cm.mean_iou(), 0.25);
  auto per_class = cm.per_class_iou();
  EXPECT_DOUBLE_EQ(per_class[0], 0.5);
  EXPECT_DOUBLE_EQ(per_class[1], 0.0);
}

TEST(MeanIou, ZeroUnionClassesExcluded) {
  ConfusionMatrix cm(3);
  std::vector<int> gt = {0, 0, 1}, pred = {0, 0, 1};  // class 2 absent entirely
  cm.accumulate(pred, gt, kVoid);
  auto per_class = cm.per_class_iou();
  EXPECT_TRUE(std::isnan(per_class[2]));
  EXPECT_DOUBLE_EQ(cm.mean_iou(), 1.0);
}

TEST(Scores, ClassPermutationInvariance) {
  caepl::RngStream rng(7);
  auto maps = random_maps(256, 4, 0.1, rng);
  ConfusionMatrix cm(4);
  cm.accumulate(maps.pred, maps.gt, kVoid);

  const int perm[4] = {2, 0, 3, 1};
  auto apply = [&](std::vector<int> v) {
    for (auto& x : v)
      if (x != kVoid) x = perm[x];
    return v;
  };
  ConfusionMatrix cm2(4);
  cm2.accumulate(apply(maps.pred), apply(maps.gt), kVoid);
  EXPECT_DOUBLE_EQ(cm.pixel_accuracy(), cm2.pixel_accuracy());
  EXPECT_DOUBLE_EQ(cm.mean_iou(), cm2.mean_iou());
}

TEST(Scores, BoundedAndOneIffDiagonal) {
  caepl::RngStream rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    auto maps = random_maps(128, 3, 0.2, rng);
    ConfusionMatrix cm(3);
    cm.accumulate(maps.pred, maps.gt, kVoid);
    if (cm.total() == 0) continue;
    const double pa = cm.pixel_accuracy(), miou = cm.mean_iou();
    EXPECT_GE(pa, 0.0);
    EXPECT_LE(pa, 1.0);
    EXPECT_GE(miou, 0.0);
    EXPECT_LE(miou, 1.0);
    bool diagonal = true;
    for (int g = 0; g < 3; ++g)
      for (int p = 0; p < 3; ++p)
        if (g != p && cm.at(g, p) > 0) diagonal = false;
    EXPECT_EQ(pa == 1.0 && miou == 1.0, diagonal);
  }
}

TEST(Accumulate, IsAssociativeAcrossImages) {
  caepl::RngStream rng(13);
  auto a = random_maps(64, 5, 0.1, rng);
  auto b = random_maps(64, 5, 0.1, rng);

  ConfusionMatrix per_image(5);
  per_image.accumulate(a.pred, a.gt, kVoid);
  per_image.accumulate(b.pred, b.gt, kVoid);

  std::vector<int> pred = a.pred, gt = a.gt;
  pred.insert(pred.end(), b.pred.begin(), b.pred.end());
  gt.insert(gt.end(), b.gt.begin(), b.gt.end());
  ConfusionMatrix concat(5);
  concat.accumulate(pred, gt, kVoid);

  ConfusionMatrix merged(5);
  ConfusionMatrix ma(5), mb(5);
  ma.accumulate(a.pred, a.gt, kVoid);
  mb.accumulate(b.pred, b.gt, kVoid);
  merged += ma;
  merged += mb;

  for (int g = 0; g < 5; ++g)
    for (int p = 0; p < 5; ++p) {
      EXPECT_EQ(per_image.at(g, p), concat.at(g, p));
      EXPECT_EQ(merged.at(g, p), concat.at(g, p));
    }
}

TEST(Accumulate, ErrorPaths) {
  ConfusionMatrix cm(3);
  std::vector<int> gt = {0, 1}, pred = {0};
  EXPECT_THROW(cm.accumulate(pred, gt, kVoid), caepl::ShapeError);
  std::vector<int> bad_gt = {7, 1}, ok_pred = {0, 1};
  EXPECT_THROW(cm.accumulate(ok_pred, bad_gt, kVoid), caepl::DataError);
}

}  // namespace
