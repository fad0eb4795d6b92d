#pragma once

// Synthetic training data, dataset directories and augmentation.

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "fdseg/fractal.hpp"
#include "fdseg/grid.hpp"

namespace fdseg {

struct Sample {
  ScalarGrid image;  // [0, 1]
  BinaryMask mask;
  FdMap fd_target;  // fd_map(image) with default FdParams
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  std::uint64_t seed = 0;
};

/// One synthetic sample: 1-3 blobs with rough (harmonic-perturbed) outlines,
/// brighter than the background, with additive Gaussian texture. The mask
/// covers between 1% and 60% of the pixels. Depends only on (seed, index, size).
Sample gen_shape_sample(std::uint64_t seed, std::uint64_t index, int size);

std::vector<Sample> gen_shapes(int count, std::uint64_t seed, int size);

/// Consecutive runs of gen_shapes(n_train + n_val + n_test, seed, size).
DatasetSplit make_synthetic_split(int n_train, int n_val, int n_test, std::uint64_t seed, int size);

/// Resize a [0, 1] image/mask pair to h x w (bilinear; mask re-thresholded at
/// 0.5) and attach the image's FD target.
Sample preprocess(const ScalarGrid& image, const BinaryMask& mask, int h, int w);

struct AugmentOps {
  bool hflip = false;
  bool vflip = false;
  int quarter_turns = 0;  // counter-clockwise
  double brightness = 1.0;
};

/// Flips p = 0.5 each, k * 90 degree rotation with k uniform in {0..3},
/// brightness scale uniform in [0.8, 1.2].
AugmentOps draw_augment(std::mt19937_64& rng);

/// Geometric ops are applied to image and mask alike, brightness (followed by a
/// clamp to [0, 1]) to the image only. The FD target is recomputed.
Sample apply_augment(const Sample& s, const AugmentOps& ops);

Sample augment(const Sample& s, std::mt19937_64& rng);

/// Per-sample stream, independent of scheduling order.
std::mt19937_64 augment_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t epoch);

template <typename T>
Grid<T> flip_horizontal(const Grid<T>& g) {
  return g.rowwise().reverse();
}

template <typename T>
Grid<T> flip_vertical(const Grid<T>& g) {
  return g.colwise().reverse();
}

/// Rotate by k * 90 degrees counter-clockwise.
template <typename T>
Grid<T> rotate90(const Grid<T>& g, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return g;
  if (k == 2) return g.reverse();
  Grid<T> t = g.transpose();
  return k == 1 ? Grid<T>(t.colwise().reverse()) : Grid<T>(t.rowwise().reverse());
}

/// Pixels within Chebyshev distance `half_width` of the foreground outline
/// (foreground pixels with a 4-neighbour in the background).
BinaryMask boundary_band(const BinaryMask& mask, int half_width);

/// Background pixels farther than `distance` (Chebyshev) from any foreground pixel.
BinaryMask far_background(const BinaryMask& mask, int distance);

// Dataset directory: images/NNNN.pgm, masks/NNNN.pgm and one manifest per
// split (train.txt, val.txt, test.txt) listing file names, one per line.
void write_dataset(const std::filesystem::path& dir, const DatasetSplit& split);
DatasetSplit load_dataset(const std::filesystem::path& dir, int h, int w);

}  // namespace fdseg
