#include "fdseg/fractal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "fdseg/parallel.hpp"

namespace fdseg {

void FdParams::validate() const {
  if (neighborhood < 3) throw InvalidArgument("FdParams: neighborhood R must be >= 3");
  if (gray_levels < 2) throw InvalidArgument("FdParams: gray_levels must be >= 2");
  if (scales.size() < 2) throw InvalidArgument("FdParams: need at least two scales");
  std::vector<int> sorted = scales;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw InvalidArgument("FdParams: scales must be distinct");
  if (sorted.front() < 2 || sorted.back() > neighborhood)
    throw InvalidArgument("FdParams: scales must lie in [2, R]");
}

FdParams FdParams::with_neighborhood(int R) {
  FdParams p;
  p.neighborhood = R;
  p.scales.clear();
  for (int r = 2; r <= R; ++r) p.scales.push_back(r);
  return p;
}

double box_count(double max_val, double min_val, int r, int R) {
  if (r < 2 || r > R) throw InvalidArgument("box_count: scale r must lie in [2, R]");
  if (max_val < min_val) throw InvalidArgument("box_count: max below min");
  const double boxes = std::floor((max_val - min_val) / r) + 1.0;
  return static_cast<double>(R) * R / (static_cast<double>(r) * r) * boxes;
}

double regression_slope(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("regression_slope: length mismatch");
  if (xs.size() < 2) throw InvalidArgument("regression_slope: need at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (!(sxx > 0.0)) throw InvalidArgument("regression_slope: x values have zero variance");
  return sxy / sxx;
}

ScalarGrid quantize_levels(const ScalarGrid& image, int gray_levels) {
  const double top = gray_levels - 1;
  return (image * top).round().max(0.0).min(top);
}

double fd_pixel(const ScalarGrid& quantized, Index x, Index y, const FdParams& params) {
  const Index h = quantized.rows(), w = quantized.cols();
  if (x < 0 || x >= w || y < 0 || y >= h) throw InvalidArgument("fd_pixel: coordinates out of range");
  std::vector<double> xs, ys;
  for (int r : params.scales) {
    const int off = window_offset(r);
    double mx = quantized(clamp_index(y - off, h), clamp_index(x - off, w));
    double mn = mx;
    for (int dy = 0; dy < r; ++dy) {
      for (int dx = 0; dx < r; ++dx) {
        const double v = quantized(clamp_index(y - off + dy, h), clamp_index(x - off + dx, w));
        mx = std::max(mx, v);
        mn = std::min(mn, v);
      }
    }
    xs.push_back(std::log(1.0 / r));
    ys.push_back(std::log(box_count(mx, mn, r, params.neighborhood)));
  }
  return regression_slope(xs, ys);
}

FdMap fd_map_oracle(const ScalarGrid& image, const FdParams& params) {
  params.validate();
  const ScalarGrid q = quantize_levels(image, params.gray_levels);
  FdMap out(image.rows(), image.cols());
  for (Index y = 0; y < image.rows(); ++y)
    for (Index x = 0; x < image.cols(); ++x) out(y, x) = fd_pixel(q, x, y, params);
  return out;
}

FdMap fd_map(const ScalarGrid& image, const FdParams& params, int threads) {
  params.validate();
  const Index h = image.rows(), w = image.cols();
  const Grid<std::int32_t> q = quantize_levels(image, params.gray_levels).cast<std::int32_t>();

  // With x_i = ln(1/r_i), ln N_r = ln R^2 + 2 x_i + ln(k_i + 1), so the slope
  // reduces to 2 + sum_i w_i ln(k_i + 1) with w_i = (x_i - mean x) / Sxx.
  const std::size_t n = params.scales.size();
  std::vector<double> weights(n);
  double mean_x = 0.0;
  for (int r : params.scales) mean_x += std::log(1.0 / r);
  mean_x /= static_cast<double>(n);
  double sxx = 0.0;
  for (int r : params.scales) sxx += (std::log(1.0 / r) - mean_x) * (std::log(1.0 / r) - mean_x);
  for (std::size_t i = 0; i < n; ++i)
    weights[i] = (std::log(1.0 / params.scales[i]) - mean_x) / sxx;

  std::vector<double> log_boxes(static_cast<std::size_t>(params.gray_levels) + 1);
  for (std::size_t k = 0; k < log_boxes.size(); ++k) log_boxes[k] = std::log(static_cast<double>(k) + 1.0);

  FdMap out(h, w);
  parallel_for(0, h, threads, [&](Index y0, Index y1) {
    ScalarGrid band = ScalarGrid::Constant(y1 - y0, w, 2.0);
    for (std::size_t i = 0; i < n; ++i) {
      const int r = params.scales[i];
      const auto ext = window_extrema_rows(q, r, y0, y1);
      for (Index y = 0; y < y1 - y0; ++y) {
        for (Index x = 0; x < w; ++x) {
          const auto k = static_cast<std::size_t>((ext.max_grid(y, x) - ext.min_grid(y, x)) / r);
          band(y, x) += weights[i] * log_boxes[k];
        }
      }
    }
    out.middleRows(y0, y1 - y0) = band;
  });
  return out;
}

}  // namespace fdseg
