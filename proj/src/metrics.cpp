#include "segnas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "segnas/nn.hpp"

namespace segnas {

ConfusionMatrix::ConfusionMatrix(int num_classes, int background)
    : classes_(num_classes), background_(background),
      counts_(Eigen::Array<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(
          num_classes, num_classes)) {}

void ConfusionMatrix::add(int gt, int pred, std::int64_t count) {
  if (gt < 0 || gt >= classes_ || pred < 0 || pred >= classes_)
    throw std::invalid_argument("confusion matrix class out of range");
  counts_(gt, pred) += count;
}

void ConfusionMatrix::add_mask(const Mask& gt, const Mask& pred) {
  if (gt.n != pred.n || gt.h != pred.h || gt.w != pred.w)
    throw std::invalid_argument("mask shape mismatch");
  for (Eigen::Index i = 0; i < gt.data.size(); ++i) {
    const int g = gt.data[i];
    if (g == kIgnoreLabel) continue;
    add(g, pred.data[i]);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_)
    throw std::invalid_argument("cannot merge confusion matrices of different size");
  counts_ += other.counts_;
}

RewardBreakdown compute_reward(const ConfusionMatrix& cm) {
  const int classes = cm.num_classes();
  const int bg = cm.background();

  // Per-class stats are accumulated in value order so the result is
  // bit-identical under any relabelling of the non-background classes.
  struct ClassStat {
    double iou, pa, freq;
    auto operator<=>(const ClassStat&) const = default;
  };
  std::vector<ClassStat> stats;
  for (int c = 0; c < classes; ++c) {
    if (c == bg) continue;
    std::int64_t tp = cm.at(c, c), fn = 0, fp = 0, freq = 0;
    for (int o = 0; o < classes; ++o) {
      if (o != c) {
        fn += cm.at(c, o);
        fp += cm.at(o, c);
      }
      freq += cm.at(c, o);
    }
    if (freq == 0) continue;  // class absent from ground truth
    stats.push_back({static_cast<double>(tp) / static_cast<double>(tp + fp + fn),
                     static_cast<double>(tp) / static_cast<double>(tp + fn),
                     static_cast<double>(freq)});
  }
  if (stats.empty())
    throw std::invalid_argument("no non-background ground-truth pixels");
  std::sort(stats.begin(), stats.end());

  double iou_sum = 0, pa_sum = 0, fw_num = 0, fw_den = 0;
  for (const auto& s : stats) {
    iou_sum += s.iou;
    pa_sum += s.pa;
    fw_num += s.freq * s.iou;
    fw_den += s.freq;
  }
  RewardBreakdown out;
  out.miou = iou_sum / static_cast<double>(stats.size());
  out.fwiou = fw_num / fw_den;
  out.mpa = pa_sum / static_cast<double>(stats.size());
  out.reward = std::cbrt(out.miou * out.fwiou * out.mpa);
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size())
    throw std::invalid_argument("spearman: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("spearman: need at least 2 samples");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0)
    throw std::invalid_argument("spearman: undefined for a constant input");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace segnas
