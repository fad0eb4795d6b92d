#include <doctest.h>

#include <algorithm>

#include "fdseg/grid.hpp"
#include "fdseg/parallel.hpp"
#include "test_util.hpp"

using namespace fdseg;
using fdseg::test::random_grid;

namespace {

// Direct scan of the r x r window anchored at (y - off, x - off) with clamped indices.
WindowExtrema<double> naive_extrema(const ScalarGrid& g, int r) {
  const int off = (r - 1) / 2;
  WindowExtrema<double> out{ScalarGrid(g.rows(), g.cols()), ScalarGrid(g.rows(), g.cols()), r};
  for (Index y = 0; y < g.rows(); ++y) {
    for (Index x = 0; x < g.cols(); ++x) {
      double mx = -1e300, mn = 1e300;
      for (int dy = 0; dy < r; ++dy) {
        for (int dx = 0; dx < r; ++dx) {
          const Index sy = std::clamp<Index>(y - off + dy, 0, g.rows() - 1);
          const Index sx = std::clamp<Index>(x - off + dx, 0, g.cols() - 1);
          mx = std::max(mx, g(sy, sx));
          mn = std::min(mn, g(sy, sx));
        }
      }
      out.max_grid(y, x) = mx;
      out.min_grid(y, x) = mn;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("pad_replicate replicates a single value") {
  ScalarGrid g(1, 1);
  g << 5;
  const ScalarGrid p = pad_replicate(g, 1);
  REQUIRE(p.rows() == 3);
  REQUIRE(p.cols() == 3);
  CHECK((p == 5.0).all());
}

TEST_CASE("pad_replicate with zero margin is a copy") {
  const ScalarGrid g = random_grid(4, 7, 3);
  CHECK((pad_replicate(g, 0) == g).all());
}

TEST_CASE("pad_replicate expands a 2x2 grid") {
  ScalarGrid g(2, 2);
  g << 1, 2, 3, 4;
  ScalarGrid expected(4, 4);
  expected << 1, 1, 2, 2,
              1, 1, 2, 2,
              3, 3, 4, 4,
              3, 3, 4, 4;
  CHECK((pad_replicate(g, 1) == expected).all());
}

TEST_CASE("pad_replicate rejects a negative margin") {
  CHECK_THROWS_AS(pad_replicate(ScalarGrid::Zero(2, 2), -1), InvalidArgument);
}

TEST_CASE("pad then crop is the identity") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Index h = 1 + static_cast<Index>(seed % 7), w = 1 + static_cast<Index>((seed * 5) % 9);
    const Index m = static_cast<Index>(seed % 5);
    const ScalarGrid g = random_grid(h, w, seed);
    CHECK((crop(pad_replicate(g, m), m, m, h, w) == g).all());
  }
}

TEST_CASE("window_extrema of a constant grid") {
  const ScalarGrid g = ScalarGrid::Constant(6, 5, 0.25);
  for (int r = 2; r <= 7; ++r) {
    const auto e = window_extrema(g, r);
    CHECK((e.max_grid == 0.25).all());
    CHECK((e.min_grid == 0.25).all());
    CHECK(e.scale == r);
  }
}

TEST_CASE("window_extrema on a 3x3 ramp, center pixel") {
  ScalarGrid g(3, 3);
  g << 0, 1, 2, 3, 4, 5, 6, 7, 8;
  const auto e = window_extrema(g, 3);
  CHECK(e.max_grid(1, 1) == 8);
  CHECK(e.min_grid(1, 1) == 0);
}

TEST_CASE("window_extrema with even scale anchors at the pixel") {
  ScalarGrid g(1, 5);
  g << 1, 2, 3, 4, 5;
  const auto e = window_extrema(g, 2);
  ScalarGrid max_expected(1, 5), min_expected(1, 5);
  max_expected << 2, 3, 4, 5, 5;
  min_expected << 1, 2, 3, 4, 5;
  CHECK((e.max_grid == max_expected).all());
  CHECK((e.min_grid == min_expected).all());
}

TEST_CASE("window_extrema rejects scales below 2") {
  CHECK_THROWS_AS(window_extrema(ScalarGrid::Zero(4, 4), 1), InvalidArgument);
}

TEST_CASE("window_extrema matches the naive scan on random 16x16 grids") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ScalarGrid g = random_grid(16, 16, seed);
    for (int r = 2; r <= 7; ++r) {
      const auto fast = window_extrema(g, r);
      const auto slow = naive_extrema(g, r);
      REQUIRE((fast.max_grid == slow.max_grid).all());
      REQUIRE((fast.min_grid == slow.min_grid).all());
      REQUIRE((fast.max_grid >= fast.min_grid).all());
    }
  }
}

TEST_CASE("window_extrema shifts with a constant offset") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ScalarGrid g = random_grid(9, 11, seed, -3.0, 3.0).round();
    const auto a = window_extrema(g, 4);
    const auto b = window_extrema((g + 17.0).eval(), 4);
    CHECK(((a.max_grid + 17.0) == b.max_grid).all());
    CHECK(((a.min_grid + 17.0) == b.min_grid).all());
  }
}

TEST_CASE("window_extrema_rows agrees with the full computation on every band") {
  const ScalarGrid g = random_grid(13, 8, 42);
  const auto full = window_extrema(g, 5);
  for (Index y0 = 0; y0 < 13; y0 += 4) {
    const Index y1 = std::min<Index>(13, y0 + 4);
    const auto band = window_extrema_rows(g, 5, y0, y1);
    CHECK((band.max_grid == full.max_grid.middleRows(y0, y1 - y0)).all());
    CHECK((band.min_grid == full.min_grid.middleRows(y0, y1 - y0)).all());
  }
}

TEST_CASE("resize_bilinear identity") {
  const ScalarGrid g = random_grid(5, 6, 1);
  CHECK((resize_bilinear(g, 5, 6) - g).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("resize_bilinear midpoint of a two-sample ramp") {
  ScalarGrid g(2, 1);
  g << 0, 1;
  const ScalarGrid r = resize_bilinear(g, 3, 1);
  REQUIRE(r.rows() == 3);
  CHECK(r(0, 0) == doctest::Approx(0.0));
  CHECK(r(1, 0) == doctest::Approx(0.5));
  CHECK(r(2, 0) == doctest::Approx(1.0));
}

TEST_CASE("resize_bilinear 2x2 to 4x4 with corner-aligned weights") {
  ScalarGrid g(2, 2);
  g << 0, 1, 2, 3;
  const ScalarGrid r = resize_bilinear(g, 4, 4);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) CHECK(r(i, j) == doctest::Approx(2.0 * i / 3.0 + j / 3.0).epsilon(1e-12));
}

TEST_CASE("resize_bilinear rejects zero dimensions") {
  CHECK_THROWS_AS(resize_bilinear(ScalarGrid::Zero(3, 3), 0, 3), InvalidArgument);
  CHECK_THROWS_AS(resize_bilinear(ScalarGrid::Zero(3, 3), 3, 0), InvalidArgument);
}

TEST_CASE("normalize_unit examples") {
  ScalarGrid a(1, 2);
  a << 0, 255;
  CHECK(normalize_unit(a)(0, 0) == 0.0);
  CHECK(normalize_unit(a)(0, 1) == 1.0);

  CHECK((normalize_unit(ScalarGrid::Constant(3, 3, 0.4)) == 0.0).all());

  ScalarGrid b(1, 3);
  b << 2, 4, 6;
  const ScalarGrid n = normalize_unit(b);
  CHECK(n(0, 0) == 0.0);
  CHECK(n(0, 1) == doctest::Approx(0.5));
  CHECK(n(0, 2) == 1.0);
}

TEST_CASE("normalize_unit range and affine invariance") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const ScalarGrid g = random_grid(6, 6, seed, -5.0, 5.0);
    const ScalarGrid n = normalize_unit(g);
    CHECK(n.minCoeff() >= 0.0);
    CHECK(n.maxCoeff() <= 1.0);
    const double a = 0.5 + static_cast<double>(seed), b = -3.0 + static_cast<double>(seed) * 0.1;
    CHECK((normalize_unit((a * g + b).eval()) - n).abs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("parallel_for covers the range once and rethrows worker errors") {
  std::vector<int> hits(103, 0);
  parallel_for(0, 103, 4, [&](Index lo, Index hi) {
    for (Index i = lo; i < hi; ++i) ++hits[static_cast<std::size_t>(i)];
  });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  CHECK_THROWS_AS(parallel_for(0, 10, 3, [](Index lo, Index) {
                    if (lo > 0) throw InvalidArgument("boom");
                  }),
                  InvalidArgument);
}
