#pragma once

// Per-pixel fractal dimension by differential box counting.
//
// At every pixel and for each scale r the r x r window extrema M_r, m_r give a
// box count N_r = (R^2 / r^2) * (floor((M_r - m_r) / r) + 1). The local fractal
// dimension is the least-squares slope of ln N_r against ln(1/r).

#include <span>
#include <vector>

#include "fdseg/grid.hpp"

namespace fdseg {

struct FdParams {
  int neighborhood = 7;                       // R
  std::vector<int> scales{2, 3, 4, 5, 6, 7};  // r values, 2 <= r <= R
  int gray_levels = 256;

  /// Throws InvalidArgument unless R >= 3, |scales| >= 2, scales distinct and in [2, R].
  void validate() const;

  /// Default scale set 2..R for a given neighborhood.
  static FdParams with_neighborhood(int R);
};

/// Per-pixel FD estimates; same shape as the source image.
using FdMap = ScalarGrid;

double box_count(double max_val, double min_val, int r, int R);

/// Ordinary least-squares slope. Throws InvalidArgument for fewer than two
/// points or zero variance in x.
double regression_slope(std::span<const double> xs, std::span<const double> ys);

/// Maps a [0, 1] image onto integer levels 0 .. gray_levels - 1 (rounded, clamped).
ScalarGrid quantize_levels(const ScalarGrid& image, int gray_levels);

/// FD at column x, row y of an already-quantized image, by direct window scans.
double fd_pixel(const ScalarGrid& quantized, Index x, Index y, const FdParams& params);

/// Optimized FD map: extrema computed once per scale, threaded over row bands.
FdMap fd_map(const ScalarGrid& image, const FdParams& params = {}, int threads = 1);

/// Reference FD map: fd_pixel evaluated independently at every pixel.
FdMap fd_map_oracle(const ScalarGrid& image, const FdParams& params = {});

}  // namespace fdseg
