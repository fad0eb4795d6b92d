#include "fdseg/metrics.hpp"

#include <array>
#include <cmath>

namespace fdseg {

BinaryMask binarize(const ScalarGrid& pred, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidArgument("binarize: threshold must lie in (0, 1)");
  return (pred >= threshold).cast<std::uint8_t>();
}

ConfusionCounts confusion(const BinaryMask& gt, const BinaryMask& pred) {
  require_same_shape(gt, pred, "confusion");
  ConfusionCounts c;
  for (Index i = 0; i < gt.size(); ++i) {
    const bool y = gt.data()[i] != 0;
    const bool p = pred.data()[i] != 0;
    if (y && p)
      ++c.tp;
    else if (!y && !p)
      ++c.tn;
    else if (p)
      ++c.fp;
    else
      ++c.fn;
  }
  return c;
}

namespace {

double ratio(std::int64_t num, std::int64_t den, double if_empty) {
  return den == 0 ? if_empty : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricReport metrics_from_counts(const ConfusionCounts& c) {
  MetricReport m;
  m.dsc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, 1.0);
  m.iou = ratio(c.tp, c.tp + c.fp + c.fn, 1.0);
  m.acc = ratio(c.tp + c.tn, c.total(), 1.0);
  m.sn = ratio(c.tp, c.tp + c.fn, 1.0);
  m.sp = ratio(c.tn, c.tn + c.fp, 1.0);
  m.fpr = c.tn + c.fp == 0 ? 0.0 : 1.0 - m.sp;
  return m;
}

MetricSummary summarize(std::span<const MetricReport> reports) {
  MetricSummary s;
  if (reports.empty()) return s;
  constexpr std::array fields{&MetricReport::dsc, &MetricReport::iou, &MetricReport::acc,
                              &MetricReport::sn,  &MetricReport::sp,  &MetricReport::fpr};
  const double n = static_cast<double>(reports.size());
  for (auto f : fields) {
    double mean = 0.0;
    for (const auto& r : reports) mean += r.*f;
    mean /= n;
    double var = 0.0;
    for (const auto& r : reports) var += (r.*f - mean) * (r.*f - mean);
    s.mean.*f = mean;
    s.stddev.*f = std::sqrt(var / n);
  }
  return s;
}

}  // namespace fdseg
