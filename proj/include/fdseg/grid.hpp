#pragma once

// Dense 2-D containers and the window / padding / resampling primitives the
// rest of the toolkit builds on. Grids are row-major Eigen arrays templated on
// the scalar type; every operation is a pure free function.

#include <algorithm>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "fdseg/errors.hpp"

namespace fdseg {

using Index = Eigen::Index;

template <typename Scalar>
using Grid = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Real-valued image, FD map or single feature channel.
using ScalarGrid = Grid<double>;

/// Ground-truth or thresholded mask; every element is 0 or 1.
using BinaryMask = Grid<std::uint8_t>;

/// Sliding-window maximum and minimum at one scale.
template <typename Scalar>
struct WindowExtrema {
  Grid<Scalar> max_grid;
  Grid<Scalar> min_grid;
  int scale = 0;
};

template <typename Derived>
bool all_finite(const Eigen::ArrayBase<Derived>& g) {
  return g.allFinite();
}

inline bool is_binary(const BinaryMask& m) {
  return (m <= 1).all();
}

inline Index clamp_index(Index i, Index n) {
  return i < 0 ? 0 : (i >= n ? n - 1 : i);
}

/// Top-left offset of an r-wide window relative to its center pixel.
constexpr int window_offset(int r) { return (r - 1) / 2; }

template <typename Derived>
Grid<typename Derived::Scalar> pad_replicate(const Eigen::ArrayBase<Derived>& g, Index margin) {
  if (margin < 0) throw InvalidArgument("pad_replicate: negative margin");
  const Index h = g.rows(), w = g.cols();
  Grid<typename Derived::Scalar> out(h + 2 * margin, w + 2 * margin);
  for (Index y = 0; y < out.rows(); ++y) {
    const Index sy = clamp_index(y - margin, h);
    for (Index x = 0; x < out.cols(); ++x) out(y, x) = g(sy, clamp_index(x - margin, w));
  }
  return out;
}

template <typename Derived>
Grid<typename Derived::Scalar> crop(const Eigen::ArrayBase<Derived>& g, Index top, Index left,
                                    Index h, Index w) {
  if (top < 0 || left < 0 || h < 0 || w < 0 || top + h > g.rows() || left + w > g.cols())
    throw InvalidArgument("crop: region outside grid");
  return g.block(top, left, h, w);
}

/// Window extrema for output rows [y0, y1) only; see window_extrema.
template <typename Derived>
WindowExtrema<typename Derived::Scalar> window_extrema_rows(const Eigen::ArrayBase<Derived>& g,
                                                            int r, Index y0, Index y1) {
  using Scalar = typename Derived::Scalar;
  if (r < 2) throw InvalidArgument("window_extrema: scale must be >= 2");
  if (y0 < 0 || y1 > g.rows() || y0 > y1) throw InvalidArgument("window_extrema: bad row band");
  const Index h = g.rows(), w = g.cols();
  const int off = window_offset(r);

  // Horizontal pass over the source rows the band touches.
  const Index src_lo = y0 - off, src_n = (y1 - y0) + r - 1;
  Grid<Scalar> row_max(src_n, w), row_min(src_n, w);
  std::vector<Scalar> line(static_cast<std::size_t>(w + r - 1));
  for (Index i = 0; i < src_n; ++i) {
    const Index sy = clamp_index(src_lo + i, h);
    for (Index c = 0; c < w + r - 1; ++c) line[c] = g(sy, clamp_index(c - off, w));
    for (Index x = 0; x < w; ++x) {
      Scalar mx = line[x], mn = line[x];
      for (int j = 1; j < r; ++j) {
        mx = std::max(mx, line[x + j]);
        mn = std::min(mn, line[x + j]);
      }
      row_max(i, x) = mx;
      row_min(i, x) = mn;
    }
  }

  WindowExtrema<Scalar> out{row_max.topRows(y1 - y0), row_min.topRows(y1 - y0), r};
  for (int j = 1; j < r; ++j) {
    out.max_grid = out.max_grid.max(row_max.middleRows(j, y1 - y0));
    out.min_grid = out.min_grid.min(row_min.middleRows(j, y1 - y0));
  }
  return out;
}

/// Max and min over the r x r window of every pixel, replicate-padded.
///
/// The window covering pixel (y, x) spans rows y - off .. y - off + r - 1
/// (same for columns) with off = floor((r - 1) / 2). Computed separably: a
/// horizontal pass followed by a vertical pass over the row extrema.
template <typename Derived>
WindowExtrema<typename Derived::Scalar> window_extrema(const Eigen::ArrayBase<Derived>& g,
                                                       int r) {
  return window_extrema_rows(g, r, 0, g.rows());
}

/// Corner-aligned linear interpolation operator mapping n_in samples to n_out.
template <typename Scalar>
Mat<Scalar> interpolation_matrix(Index n_out, Index n_in) {
  if (n_out < 1 || n_in < 1) throw InvalidArgument("interpolation_matrix: zero dimension");
  Mat<Scalar> m = Mat<Scalar>::Zero(n_out, n_in);
  if (n_in == 1 || n_out == 1) {
    m.col(0).setOnes();
    return m;
  }
  const double step = static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
  for (Index i = 0; i < n_out; ++i) {
    const double pos = static_cast<double>(i) * step;
    const Index lo = std::min<Index>(static_cast<Index>(pos), n_in - 2);
    const double t = pos - static_cast<double>(lo);
    m(i, lo) += static_cast<Scalar>(1.0 - t);
    m(i, lo + 1) += static_cast<Scalar>(t);
  }
  return m;
}

/// Bilinear resampling with corner-aligned sample positions.
template <typename Derived>
Grid<typename Derived::Scalar> resize_bilinear(const Eigen::ArrayBase<Derived>& g, Index new_h,
                                               Index new_w) {
  using Scalar = typename Derived::Scalar;
  if (new_h < 1 || new_w < 1) throw InvalidArgument("resize_bilinear: zero target dimension");
  if (new_h == g.rows() && new_w == g.cols()) return g;
  const Mat<Scalar> rows = interpolation_matrix<Scalar>(new_h, g.rows());
  const Mat<Scalar> cols = interpolation_matrix<Scalar>(new_w, g.cols());
  return (rows * g.matrix() * cols.transpose()).array();
}

/// Min-max stretch to [0, 1]; a constant grid maps to all zeros.
template <typename Derived>
Grid<typename Derived::Scalar> normalize_unit(const Eigen::ArrayBase<Derived>& g) {
  using Scalar = typename Derived::Scalar;
  const Scalar lo = g.minCoeff(), hi = g.maxCoeff();
  if (!(hi > lo)) return Grid<Scalar>::Zero(g.rows(), g.cols());
  return (g - lo) / (hi - lo);
}

}  // namespace fdseg
