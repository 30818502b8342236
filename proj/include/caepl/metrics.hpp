#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "caepl/error.hpp"

namespace caepl {

// K x K counts over evaluated pixels, rows = ground truth, cols = prediction.
// Pixels whose ground truth carries the void label are never counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes)
      : k_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
    if (num_classes < 1) throw ParamError("confusion matrix needs at least one class");
  }

  int num_classes() const { return k_; }
  std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * k_ + pred]; }

  void accumulate(std::span<const int> pred, std::span<const int> gt, int void_label) {
    if (pred.size() != gt.size())
      throw ShapeError("confusion matrix: prediction and ground truth sizes differ");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const int g = gt[i];
      if (g == void_label) continue;
      const int p = pred[i];
      if (g < 0 || g >= k_)
        throw DataError("confusion matrix: ground-truth label " + std::to_string(g) +
                        " outside [0," + std::to_string(k_) + ")");
      if (p < 0 || p >= k_)
        throw DataError("confusion matrix: predicted label " + std::to_string(p) +
                        " outside [0," + std::to_string(k_) + ")");
      ++counts_[static_cast<std::size_t>(g) * k_ + p];
    }
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw ShapeError("confusion matrix: class count mismatch in merge");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  double pixel_accuracy() const {
    const std::uint64_t t = total();
    if (t == 0) throw ScoreError("pixel accuracy undefined: no evaluated pixels");
    std::uint64_t diag = 0;
    for (int k = 0; k < k_; ++k) diag += at(k, k);
    return static_cast<double>(diag) / static_cast<double>(t);
  }

  // Per-class IoU; classes with zero union come back as NaN.
  std::vector<double> per_class_iou() const {
    std::vector<double> out(static_cast<std::size_t>(k_));
    for (int k = 0; k < k_; ++k) {
      std::uint64_t row = 0, col = 0;
      for (int j = 0; j < k_; ++j) {
        row += at(k, j);
        col += at(j, k);
      }
      const std::uint64_t inter = at(k, k);
      const std::uint64_t uni = row + col - inter;
      out[static_cast<std::size_t>(k)] =
          uni == 0 ? std::numeric_limits<double>::quiet_NaN()
                   : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return out;
  }

  // Mean over classes with nonzero union.
  double mean_iou() const {
    double sum = 0;
    int n = 0;
    for (double iou : per_class_iou()) {
      if (iou != iou) continue;  // NaN: class absent from both pred and gt
      sum += iou;
      ++n;
    }
    if (n == 0) throw ScoreError("mean IoU undefined: every class has zero union");
    return sum / static_cast<double>(n);
  }

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

}  // namespace caepl
