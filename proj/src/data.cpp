#include "fdseg/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "fdseg/io.hpp"

namespace fdseg {

namespace {

constexpr double kMinForeground = 0.01;
constexpr double kMaxForeground = 0.60;

struct Blob {
  double cx, cy, rx, ry, angle;
  std::vector<double> amplitude, phase;  // harmonics 2..
};

Blob draw_blob(std::mt19937_64& rng, int size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Blob b;
  b.cx = size * (0.2 + 0.6 * u(rng));
  b.cy = size * (0.2 + 0.6 * u(rng));
  const double r0 = size * (0.08 + 0.14 * u(rng));
  const double aspect = 0.65 + 0.7 * u(rng);
  b.rx = r0 * aspect;
  b.ry = r0 / aspect;
  b.angle = std::numbers::pi * u(rng);
  // Low harmonics bend the outline, high ones roughen it.
  for (int k = 2; k <= 14; ++k) {
    const double scale = k <= 5 ? 0.10 : 0.25 / k;
    b.amplitude.push_back(scale * u(rng));
    b.phase.push_back(2.0 * std::numbers::pi * u(rng));
  }
  return b;
}

bool inside(const Blob& b, double x, double y) {
  const double dx = x - b.cx, dy = y - b.cy;
  const double c = std::cos(b.angle), s = std::sin(b.angle);
  const double u = (c * dx + s * dy) / b.rx;
  const double v = (-s * dx + c * dy) / b.ry;
  const double rho = std::hypot(u, v);
  const double phi = std::atan2(v, u);
  double limit = 1.0;
  for (std::size_t i = 0; i < b.amplitude.size(); ++i)
    limit += b.amplitude[i] * std::sin(static_cast<double>(i + 2) * phi + b.phase[i]);
  return rho <= limit;
}

}  // namespace

Sample gen_shape_sample(std::uint64_t seed, std::uint64_t index, int size) {
  if (size < 8) throw InvalidArgument("gen_shapes: size must be >= 8");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5A3Eu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> blob_count(1, 3);

  BinaryMask mask(size, size);
  for (;;) {
    std::vector<Blob> blobs;
    const int n = blob_count(rng);
    for (int i = 0; i < n; ++i) blobs.push_back(draw_blob(rng, size));
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        bool fg = false;
        for (const auto& b : blobs) fg = fg || inside(b, x + 0.5, y + 0.5);
        mask(y, x) = fg ? 1 : 0;
      }
    }
    const double frac = mask.cast<double>().mean();
    if (frac >= kMinForeground && frac <= kMaxForeground) break;
  }

  const double background = 0.15 + 0.2 * u(rng);
  const double contrast = 0.25 + 0.2 * u(rng);
  const double sigma = 0.06 + 0.06 * u(rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  // Partial-volume edge: intensity follows the mask coverage of the 3x3 neighbourhood.
  // The background stays flat; only covered pixels carry the speckle texture.
  ScalarGrid image(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      int covered = 0, count = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= size || xx < 0 || xx >= size) continue;
          covered += mask(yy, xx);
          ++count;
        }
      }
      const double coverage = static_cast<double>(covered) / count;
      const double texture = coverage > 0.0 ? sigma * coverage * noise(rng) : 0.0;
      image(y, x) = std::clamp(background + contrast * coverage + texture, 0.0, 1.0);
    }
  }
  Sample s{std::move(image), std::move(mask), {}};
  s.fd_target = fd_map(s.image);
  return s;
}

std::vector<Sample> gen_shapes(int count, std::uint64_t seed, int size) {
  if (count < 1) throw InvalidArgument("gen_shapes: count must be >= 1");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(gen_shape_sample(seed, static_cast<std::uint64_t>(i), size));
  return out;
}

DatasetSplit make_synthetic_split(int n_train, int n_val, int n_test, std::uint64_t seed, int size) {
  if (n_train < 1 || n_val < 1 || n_test < 0) throw InvalidArgument("make_synthetic_split: bad split sizes");
  DatasetSplit split;
  split.seed = seed;
  std::uint64_t index = 0;
  for (int i = 0; i < n_train; ++i) split.train.push_back(gen_shape_sample(seed, index++, size));
  for (int i = 0; i < n_val; ++i) split.val.push_back(gen_shape_sample(seed, index++, size));
  for (int i = 0; i < n_test; ++i) split.test.push_back(gen_shape_sample(seed, index++, size));
  return split;
}

Sample preprocess(const ScalarGrid& image, const BinaryMask& mask, int h, int w) {
  require_same_shape(image, mask, "preprocess");
  Sample s;
  s.image = resize_bilinear(image, h, w).max(0.0).min(1.0);
  s.mask = (resize_bilinear(mask.cast<double>(), h, w) >= 0.5).cast<std::uint8_t>();
  s.fd_target = fd_map(s.image);
  return s;
}

AugmentOps draw_augment(std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> turns(0, 3);
  std::uniform_real_distribution<double> brightness(0.8, 1.2);
  AugmentOps ops;
  ops.hflip = coin(rng);
  ops.vflip = coin(rng);
  ops.quarter_turns = turns(rng);
  ops.brightness = brightness(rng);
  return ops;
}

Sample apply_augment(const Sample& s, const AugmentOps& ops) {
  Sample out{s.image, s.mask, {}};
  if (ops.hflip) {
    out.image = flip_horizontal(out.image);
    out.mask = flip_horizontal(out.mask);
  }
  if (ops.vflip) {
    out.image = flip_vertical(out.image);
    out.mask = flip_vertical(out.mask);
  }
  out.image = rotate90(out.image, ops.quarter_turns);
  out.mask = rotate90(out.mask, ops.quarter_turns);
  if (ops.brightness != 1.0) out.image = (out.image * ops.brightness).max(0.0).min(1.0);
  out.fd_target = fd_map(out.image);
  return out;
}

Sample augment(const Sample& s, std::mt19937_64& rng) { return apply_augment(s, draw_augment(rng)); }

std::mt19937_64 augment_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(epoch), 0xA06u};
  return std::mt19937_64(seq);
}

BinaryMask boundary_band(const BinaryMask& mask, int half_width) {
  const Index h = mask.rows(), w = mask.cols();
  BinaryMask outline = BinaryMask::Zero(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      const bool edge = (y > 0 && !mask(y - 1, x)) || (y + 1 < h && !mask(y + 1, x)) ||
                        (x > 0 && !mask(y, x - 1)) || (x + 1 < w && !mask(y, x + 1));
      outline(y, x) = edge ? 1 : 0;
    }
  }
  if (half_width == 0) return outline;
  return window_extrema(outline, 2 * half_width + 1).max_grid;
}

BinaryMask far_background(const BinaryMask& mask, int distance) {
  const BinaryMask near_fg = window_extrema(mask, 2 * distance + 1).max_grid;
  return (near_fg == 0).cast<std::uint8_t>();
}

namespace {

std::string sample_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu.pgm", i);
  return buf;
}

std::vector<std::string> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::kOpenFailed, "cannot open manifest " + path.string());
  std::vector<std::string> names;
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const DatasetSplit& split) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  std::size_t index = 0;
  const auto emit = [&](const std::vector<Sample>& samples, const char* manifest) {
    std::ofstream list(dir / manifest);
    for (const auto& s : samples) {
      const std::string name = sample_name(index++);
      save_grayscale(dir / "images" / name, s.image);
      save_mask(dir / "masks" / name, s.mask);
      list << name << '\n';
    }
  };
  emit(split.train, "train.txt");
  emit(split.val, "val.txt");
  emit(split.test, "test.txt");
}

DatasetSplit load_dataset(const std::filesystem::path& dir, int h, int w) {
  DatasetSplit split;
  const auto load = [&](const char* manifest, std::vector<Sample>& out) {
    if (!std::filesystem::exists(dir / manifest)) return;
    for (const auto& name : read_manifest(dir / manifest))
      out.push_back(preprocess(load_grayscale(dir / "images" / name), load_mask(dir / "masks" / name), h, w));
  };
  load("train.txt", split.train);
  load("val.txt", split.val);
  load("test.txt", split.test);
  return split;
}

}  // namespace fdseg
