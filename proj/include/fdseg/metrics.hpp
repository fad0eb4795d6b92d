#pragma once

#include <cstdint>
#include <span>

#include "fdseg/grid.hpp"

namespace fdseg {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t tn = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + tn + fp + fn; }
};

/// Overlap and rate metrics of a binarized prediction. Ratios with a zero
/// denominator are 1.0 (0.0 for fpr): an empty class predicted empty is perfect.
struct MetricReport {
  double dsc = 0.0;
  double iou = 0.0;
  double acc = 0.0;
  double sn = 0.0;
  double sp = 0.0;
  double fpr = 0.0;
};

struct MetricSummary {
  MetricReport mean;
  MetricReport stddev;  // population standard deviation
};

/// 1 where pred >= threshold. Threshold must lie in (0, 1).
BinaryMask binarize(const ScalarGrid& pred, double threshold = 0.5);

ConfusionCounts confusion(const BinaryMask& gt, const BinaryMask& pred);

MetricReport metrics_from_counts(const ConfusionCounts& c);

MetricSummary summarize(std::span<const MetricReport> reports);

}  // namespace fdseg
