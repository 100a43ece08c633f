#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "segnas/tensor.hpp"

namespace segnas {

/// Rows are ground truth, columns are predictions. Mergeable across workers.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes, int background = 0);

  void add(int gt, int pred, std::int64_t count = 1);
  /// Accumulates every pixel; ignore-labelled ground truth is skipped.
  void add_mask(const Mask& gt, const Mask& pred);
  void merge(const ConfusionMatrix& other);

  std::int64_t at(int gt, int pred) const { return counts_(gt, pred); }
  int num_classes() const { return classes_; }
  int background() const { return background_; }
  std::int64_t total() const { return counts_.sum(); }

 private:
  int classes_;
  int background_;
  Eigen::Array<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts_;
};

struct RewardBreakdown {
  double miou = 0;
  double fwiou = 0;
  double mpa = 0;
  double reward = 0;  // geometric mean of the three
};

/// Geometric mean of mIoU, frequency-weighted IoU and mean pixel accuracy
/// over non-background classes. Classes absent from the ground truth are
/// dropped from the means. Throws when no non-background pixel was scored.
RewardBreakdown compute_reward(const ConfusionMatrix& cm);

/// Spearman rank correlation with average ranks for ties. Throws on
/// mismatched lengths, fewer than two samples, or a constant input.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace segnas
