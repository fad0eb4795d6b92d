#include <doctest.h>

#include <cmath>
#include <vector>

#include "fdseg/fractal.hpp"
#include "test_util.hpp"

using namespace fdseg;
using fdseg::test::random_grid;

namespace {

// Independent differential box-counting estimate written straight from the
// definition: quantize, scan each r x r window, count boxes, fit the log-log slope.
double reference_fd(const ScalarGrid& image, Index px, Index py, int R, const std::vector<int>& scales) {
  std::vector<double> xs, ys;
  for (int r : scales) {
    const int off = (r - 1) / 2;
    double mx = -1.0, mn = 1e9;
    for (int dy = 0; dy < r; ++dy) {
      for (int dx = 0; dx < r; ++dx) {
        const Index y = std::clamp<Index>(py - off + dy, 0, image.rows() - 1);
        const Index x = std::clamp<Index>(px - off + dx, 0, image.cols() - 1);
        const double level = std::min(255.0, std::max(0.0, std::round(image(y, x) * 255.0)));
        mx = std::max(mx, level);
        mn = std::min(mn, level);
      }
    }
    const double n = static_cast<double>(R * R) / (r * r) * (std::floor((mx - mn) / r) + 1.0);
    xs.push_back(std::log(1.0 / r));
    ys.push_back(std::log(n));
  }
  double xbar = 0, ybar = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xbar += xs[i];
    ybar += ys[i];
  }
  xbar /= static_cast<double>(xs.size());
  ybar /= static_cast<double>(ys.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - xbar) * (ys[i] - ybar);
    sxx += (xs[i] - xbar) * (xs[i] - xbar);
  }
  return sxy / sxx;
}

ScalarGrid checkerboard(Index n) {
  ScalarGrid g(n, n);
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) g(y, x) = ((x + y) % 2) ? 1.0 : 0.0;
  return g;
}

ScalarGrid quantized_random(Index h, Index w, std::uint64_t seed) {
  return (random_grid(h, w, seed) * 255.0).round() / 255.0;
}

}  // namespace

TEST_CASE("box_count hand values") {
  CHECK(box_count(4.0, 4.0, 2, 6) == doctest::Approx(9.0));
  CHECK(box_count(5.0, 0.0, 2, 6) == doctest::Approx(27.0));
  CHECK(box_count(9.0, 0.0, 3, 6) == doctest::Approx(16.0));
}

TEST_CASE("box_count rejects bad scales and inverted extrema") {
  CHECK_THROWS_AS(box_count(1.0, 0.0, 1, 6), InvalidArgument);
  CHECK_THROWS_AS(box_count(1.0, 0.0, 7, 6), InvalidArgument);
  CHECK_THROWS_AS(box_count(0.0, 1.0, 2, 6), InvalidArgument);
}

TEST_CASE("regression_slope closed forms") {
  const std::vector<double> x2{0, 1}, y2{0, 3};
  CHECK(regression_slope(x2, y2) == doctest::Approx(3.0));
  const std::vector<double> x3{0, 1, 2}, y3{1, 3, 5}, z3{0, 1, 0};
  CHECK(regression_slope(x3, y3) == doctest::Approx(2.0));
  CHECK(regression_slope(x3, z3) == doctest::Approx(0.0));
}

TEST_CASE("regression_slope rejects degenerate fits") {
  const std::vector<double> one{1}, same{2, 2, 2}, ys{1, 2, 3};
  CHECK_THROWS_AS(regression_slope(one, one), InvalidArgument);
  CHECK_THROWS_AS(regression_slope(same, ys), InvalidArgument);
  const std::vector<double> two{1, 2};
  CHECK_THROWS_AS(regression_slope(two, ys), InvalidArgument);
}

TEST_CASE("FdParams defaults and validation") {
  const FdParams p;
  CHECK(p.neighborhood == 7);
  CHECK(p.scales == std::vector<int>{2, 3, 4, 5, 6, 7});
  CHECK(p.gray_levels == 256);
  CHECK(FdParams::with_neighborhood(5).scales == std::vector<int>{2, 3, 4, 5});

  FdParams bad = p;
  bad.scales = {2};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad.scales = {2, 2, 3};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad.scales = {2, 8};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = p;
  bad.neighborhood = 2;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  CHECK_THROWS_AS(fd_map(ScalarGrid::Zero(4, 4), bad), InvalidArgument);
}

TEST_CASE("constant images have FD exactly 2") {
  for (double c : {0.0, 0.3, 0.5, 1.0}) {
    const ScalarGrid g = ScalarGrid::Constant(12, 9, c);
    CHECK((fd_map(g) - 2.0).abs().maxCoeff() <= 1e-9);
    CHECK((fd_map_oracle(g) - 2.0).abs().maxCoeff() <= 1e-9);
    CHECK(std::abs(fd_pixel(quantize_levels(g, 256), 4, 5, FdParams{}) - 2.0) <= 1e-9);
  }
}

TEST_CASE("checkerboard center pixel matches the hand-derived slope") {
  // Every window of a 0/255 checkerboard spans the full range, so
  // N_r = (49 / r^2) (floor(255 / r) + 1) at every scale.
  std::vector<double> xs, ys;
  for (int r = 2; r <= 7; ++r) {
    xs.push_back(std::log(1.0 / r));
    ys.push_back(std::log(49.0 / (r * r) * (std::floor(255.0 / r) + 1.0)));
  }
  double xbar = 0, ybar = 0;
  for (int i = 0; i < 6; ++i) {
    xbar += xs[i] / 6;
    ybar += ys[i] / 6;
  }
  double sxy = 0, sxx = 0;
  for (int i = 0; i < 6; ++i) {
    sxy += (xs[i] - xbar) * (ys[i] - ybar);
    sxx += (xs[i] - xbar) * (xs[i] - xbar);
  }
  const double expected = sxy / sxx;

  const ScalarGrid board = checkerboard(8);
  CHECK(fd_map_oracle(board)(4, 4) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(fd_map(board)(4, 4) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected > 2.0);
}

TEST_CASE("linear ramp interior pixels match the reference estimate") {
  ScalarGrid ramp(16, 16);
  for (Index y = 0; y < 16; ++y)
    for (Index x = 0; x < 16; ++x) ramp(y, x) = static_cast<double>(x) / 15.0;
  const FdMap fast = fd_map(ramp), slow = fd_map_oracle(ramp);
  for (Index y = 3; y < 13; ++y) {
    for (Index x = 3; x < 13; ++x) {
      const double ref = reference_fd(ramp, x, y, 7, {2, 3, 4, 5, 6, 7});
      CHECK(slow(y, x) == doctest::Approx(ref).epsilon(1e-12));
      CHECK(std::abs(fast(y, x) - slow(y, x)) <= 1e-12);
    }
  }
}

TEST_CASE("library oracle agrees with the independent reference") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ScalarGrid g = random_grid(10, 13, seed);
    const FdMap oracle = fd_map_oracle(g);
    for (Index y = 0; y < g.rows(); ++y)
      for (Index x = 0; x < g.cols(); ++x)
        REQUIRE(std::abs(oracle(y, x) - reference_fd(g, x, y, 7, {2, 3, 4, 5, 6, 7})) <= 1e-12);
  }
  const ScalarGrid g = random_grid(9, 9, 77);
  FdParams p = FdParams::with_neighborhood(5);
  p.scales = {2, 3, 5};
  const FdMap oracle = fd_map_oracle(g, p);
  for (Index y = 0; y < 9; ++y)
    for (Index x = 0; x < 9; ++x) CHECK(std::abs(oracle(y, x) - reference_fd(g, x, y, 5, {2, 3, 5})) <= 1e-12);
}

TEST_CASE("optimized fd_map equals the oracle on 100 random 32x32 images") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ScalarGrid g = random_grid(32, 32, 1000 + seed);
    worst = std::max(worst, (fd_map(g) - fd_map_oracle(g)).abs().maxCoeff());
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("optimized fd_map equals the oracle for non-default parameters and shapes") {
  FdParams p = FdParams::with_neighborhood(9);
  p.scales = {2, 4, 9};
  const ScalarGrid g = random_grid(5, 23, 8);
  CHECK((fd_map(g, p) - fd_map_oracle(g, p)).abs().maxCoeff() <= 1e-12);
  const ScalarGrid tiny = random_grid(1, 1, 9);
  CHECK((fd_map(tiny) - fd_map_oracle(tiny)).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("thread count does not change the result") {
  const ScalarGrid g = random_grid(37, 29, 5);
  const FdMap one = fd_map(g, {}, 1);
  for (int t : {2, 3, 8, 64}) CHECK((fd_map(g, {}, t) == one).all());
}

TEST_CASE("FD is invariant under intensity inversion") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ScalarGrid g = quantized_random(20, 20, seed);
    const ScalarGrid inv = 1.0 - g;
    CHECK((fd_map(g) - fd_map(inv)).abs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("FD is translation-equivariant away from borders") {
  const ScalarGrid big = random_grid(40, 40, 11);
  const FdMap full = fd_map(big);
  const Index dy = 3, dx = 5, n = 30;
  const FdMap shifted = fd_map(crop(big, dy, dx, n, n));
  const Index margin = 7;
  const Index inner = n - 2 * margin;
  CHECK((shifted.block(margin, margin, inner, inner) - full.block(dy + margin, dx + margin, inner, inner))
            .abs()
            .maxCoeff() <= 1e-12);
}

TEST_CASE("a step edge raises FD where every window straddles it") {
  // Column 7 is the last dark column; each r x r window anchored at offset
  // floor((r-1)/2) reaches column 8, so every scale spans the full 0..255 range
  // and the slope equals the checkerboard value.
  ScalarGrid step = ScalarGrid::Zero(16, 16);
  step.rightCols(8).setOnes();
  const FdMap fd = fd_map_oracle(step);
  const double full_range = fd_map_oracle(checkerboard(8))(4, 4);
  for (Index y = 0; y < 16; ++y) {
    CHECK(fd(y, 7) == doctest::Approx(full_range).epsilon(1e-12));
    CHECK(fd(y, 7) > 2.5);
    CHECK(fd(y, 2) == doctest::Approx(2.0));
    CHECK(fd(y, 13) == doctest::Approx(2.0));
  }
  CHECK((fd_map(step) - fd).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("quantize_levels rounds and clamps") {
  ScalarGrid g(1, 4);
  g << -0.5, 0.5, 1.0, 2.0;
  const ScalarGrid q = quantize_levels(g, 256);
  CHECK(q(0, 0) == 0.0);
  CHECK(q(0, 1) == 128.0);
  CHECK(q(0, 2) == 255.0);
  CHECK(q(0, 3) == 255.0);
}
