#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fdseg/config.hpp"
#include "fdseg/data.hpp"
#include "fdseg/errors.hpp"
#include "fdseg/fractal.hpp"
#include "fdseg/gradcheck.hpp"
#include "fdseg/io.hpp"
#include "fdseg/metrics.hpp"
#include "fdseg/net.hpp"
#include "fdseg/runtime.hpp"
#include "fdseg/train.hpp"

namespace fs = std::filesystem;
using namespace fdseg;

namespace {

enum ExitCode : int { kOk = 0, kInputError = 1, kParamError = 2, kVerifyFailed = 3 };

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- fdmap

struct FdmapArgs {
  std::string input, output, viz;
  int R = 7;
  std::vector<int> scales;
  int threads = 1;
};

Grid<std::uint8_t> stretch_to_bytes(const FdMap& fd) {
  const double lo = fd.minCoeff(), hi = fd.maxCoeff();
  if (hi <= lo) return Grid<std::uint8_t>::Zero(fd.rows(), fd.cols());
  return ((fd - lo) / (hi - lo) * 255.0).round().cast<std::uint8_t>();
}

int cmd_fdmap(const FdmapArgs& a) {
  FdParams params = FdParams::with_neighborhood(a.R);
  if (!a.scales.empty()) params.scales = a.scales;
  params.validate();
  if (a.threads < 1) throw InvalidArgument("--threads must be >= 1");
  const ScalarGrid image = load_grayscale(a.input);
  const FdMap fd = fd_map(image, params, a.threads);
  write_fdm(a.output, fd);
  if (!a.viz.empty()) write_pgm(a.viz, stretch_to_bytes(fd));
  return kOk;
}

// ---------------------------------------------------------------- eval

const char* kMetricHeader = "dsc,iou,acc,sn,sp,fpr";

std::string metric_fields(const MetricReport& m) {
  return fmt(m.dsc) + ',' + fmt(m.iou) + ',' + fmt(m.acc) + ',' + fmt(m.sn) + ',' + fmt(m.sp) + ',' +
         fmt(m.fpr);
}

void write_metrics_csv(const fs::path& path, const std::vector<std::string>& names,
                       const std::vector<MetricReport>& reports) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorKind::kOpenFailed, "cannot write " + path.string());
  out << "image," << kMetricHeader << '\n';
  for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << ',' << metric_fields(reports[i]) << '\n';
  const MetricSummary s = summarize(reports);
  out << "mean," << metric_fields(s.mean) << '\n';
  out << "std," << metric_fields(s.stddev) << '\n';
}

std::set<std::string> pgm_names(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(IoErrorKind::kOpenFailed, "not a directory: " + dir.string());
  std::set<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") names.insert(entry.path().filename().string());
  return names;
}

struct EvalArgs {
  std::string pred, gt, out;
  double threshold = 0.5;
};

int cmd_eval(const EvalArgs& a) {
  if (!(a.threshold > 0.0 && a.threshold < 1.0)) throw InvalidArgument("--threshold must lie in (0, 1)");
  const auto pred_names = pgm_names(a.pred);
  const auto gt_names = pgm_names(a.gt);
  std::vector<std::string> missing;
  for (const auto& n : pred_names)
    if (!gt_names.count(n)) missing.push_back((fs::path(a.gt) / n).string());
  for (const auto& n : gt_names)
    if (!pred_names.count(n)) missing.push_back((fs::path(a.pred) / n).string());
  if (!missing.empty()) {
    for (const auto& m : missing) std::cerr << "missing counterpart: " << m << '\n';
    return kInputError;
  }
  if (gt_names.empty()) throw IoError(IoErrorKind::kOpenFailed, "no .pgm files in " + a.gt);

  std::vector<std::string> names(gt_names.begin(), gt_names.end());
  std::vector<MetricReport> reports;
  for (const auto& n : names) {
    const BinaryMask gt = load_mask(fs::path(a.gt) / n);
    const BinaryMask pred = binarize(load_grayscale(fs::path(a.pred) / n), a.threshold);
    if (gt.rows() != pred.rows() || gt.cols() != pred.cols())
      throw IoError(IoErrorKind::kMalformedHeader, "size mismatch for " + n);
    reports.push_back(metrics_from_counts(confusion(gt, pred)));
  }
  write_metrics_csv(a.out, names, reports);
  return kOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::uint64_t seed = 1;
  int instances = 50;
  bool corrupt = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.instances < 1) throw InvalidArgument("--instances must be >= 1");
  GradcheckOptions opt;
  opt.seed = a.seed;
  opt.loss_instances = a.instances;
  opt.net_instances = a.instances;
  opt.corrupt = a.corrupt;
  bool ok = true;
  std::printf("%-20s %9s %12s %10s %s\n", "component", "instances", "max_rel_err", "tolerance", "status");
  for (const auto& e : run_gradcheck(opt)) {
    std::printf("%-20s %9d %12.3e %10.1e %s\n", e.component.c_str(), e.instances, e.max_rel_error, e.tolerance,
                e.passed() ? "ok" : "FAIL");
    ok = ok && e.passed();
  }
  return ok ? kOk : kVerifyFailed;
}

// ---------------------------------------------------------------- train

Grid<std::uint8_t> triptych(const Sample& s, const ScalarGrid& prob) {
  const Index h = s.image.rows(), w = s.image.cols(), gap = 2;
  Grid<std::uint8_t> out = Grid<std::uint8_t>::Constant(h, 3 * w + 2 * gap, 255);
  out.block(0, 0, h, w) = to_bytes(s.image);
  out.block(0, w + gap, h, w) = (s.mask.cast<int>() * 255).cast<std::uint8_t>();
  out.block(0, 2 * (w + gap), h, w) = (binarize(prob, 0.5).cast<int>() * 255).cast<std::uint8_t>();
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorKind::kOpenFailed, "cannot write " + path.string());
  out << text;
}

void run_one(const RunConfig& rc, const TrainConfig& cfg, const DatasetSplit& data, const fs::path& dir) {
  fs::create_directories(dir / "gallery");
  std::printf("training lambda_fd=%g -> %s\n", cfg.lambda_fd, dir.string().c_str());
  const FitResult fr = fit(cfg, data, [](const EpochRecord& r) {
    std::printf("  epoch %3d  loss %.5f (dice %.5f, fd %.5f)  val_dice %.4f  %.1fs\n", r.epoch, r.train_loss.total,
                r.train_loss.dice_part, r.train_loss.fd_part, r.val_dice, r.seconds);
    std::fflush(stdout);
  });
  save_checkpoint(dir / "checkpoint.tnc", fr.best);
  write_text(dir / "history.csv", history_csv(fr.history, rc.log_wall_time));

  const auto& shown = data.test.empty() ? data.val : data.test;
  std::vector<std::string> names;
  std::vector<MetricReport> reports;
  for (std::size_t i = 0; i < shown.size(); ++i) {
    const ScalarGrid prob = predict(fr.best, shown[i].image);
    char name[24];
    std::snprintf(name, sizeof name, "%04zu.pgm", i);
    names.emplace_back(name);
    reports.push_back(metrics_from_counts(confusion(shown[i].mask, binarize(prob, 0.5))));
    if (static_cast<int>(i) < rc.gallery_count) write_pgm(dir / "gallery" / name, triptych(shown[i], prob));
  }
  write_metrics_csv(dir / (data.test.empty() ? "val_metrics.csv" : "test_metrics.csv"), names, reports);
  std::printf("  best epoch %d, val_dice %.4f%s\n", fr.history.best_epoch,
              fr.history.epochs[static_cast<std::size_t>(fr.history.best_epoch - 1)].val_dice,
              fr.history.stopped_early ? " (early stop)" : "");
}

struct TrainArgs {
  std::string config, out;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a) {
  KeyValues kv;
  if (!a.config.empty()) kv = read_key_values(a.config);
  for (const auto& item : a.overrides) {
    const KeyValues one = parse_key_values(item);
    if (one.size() != 1) throw ConfigError("--set expects key=value, got '" + item + "'");
    kv[one.begin()->first] = one.begin()->second;
  }
  const RunConfig rc = apply_key_values(RunConfig{}, kv);
  rc.train.validate();

  const int size = rc.train.net.input_h;
  const DatasetSplit data = rc.data_dir.empty()
                                ? make_synthetic_split(rc.n_train, rc.n_val, rc.n_test, rc.data_seed, size)
                                : load_dataset(rc.data_dir, rc.train.net.input_h, rc.train.net.input_w);
  if (data.train.empty() || data.val.empty()) throw IoError(IoErrorKind::kOpenFailed, "dataset has no train or val samples");

  const fs::path out(a.out);
  if (rc.lambda_sweep.empty()) {
    run_one(rc, rc.train, data, out);
  } else {
    for (double lambda : rc.lambda_sweep) {
      TrainConfig cfg = rc.train;
      cfg.lambda_fd = lambda;
      std::ostringstream tag;
      tag << "lambda_" << lambda;
      run_one(rc, cfg, data, out / tag.str());
    }
  }
  return kOk;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  int size = 256;
  int threads = 8;
  int iters = 10;
  std::uint64_t seed = 1;
};

double median_ms(const ScalarGrid& image, int threads, int iters, FdMap& result) {
  std::vector<double> ms;
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    result = fd_map(image, {}, threads);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  return ms[ms.size() / 2];
}

int cmd_bench(const BenchArgs& a) {
  if (a.size < 8 || a.threads < 1 || a.iters < 1) throw InvalidArgument("bench: need size >= 8, threads >= 1, iters >= 1");
  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const ScalarGrid image = ScalarGrid::NullaryExpr(a.size, a.size, [&] { return u(rng); });

  FdMap single, multi;
  const double t1 = median_ms(image, 1, a.iters, single);
  const double tn = median_ms(image, a.threads, a.iters, multi);
  const FdMap oracle = fd_map_oracle(image);
  const double diff = (oracle - single).abs().maxCoeff();
  const bool match = diff <= 1e-12 && (multi == single).all();

  std::printf("size %d\nthreads %d\niters %d\n", a.size, a.threads, a.iters);
  std::printf("single_ms_per_frame %.3f\nmulti_ms_per_frame %.3f\nspeedup %.3f\n", t1, tn, t1 / tn);
  std::printf("oracle_checksum %s\noptimized_checksum %s\nmax_abs_diff %.3e\nchecksum_match %s\n",
              fmt(oracle.sum()).c_str(), fmt(single.sum()).c_str(), diff, match ? "yes" : "no");
  return match ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"fdseg: fractal-dimension maps, segmentation metrics and a toy FD-regularized segmenter"};
  app.require_subcommand(1);

  FdmapArgs fa;
  auto* fdmap = app.add_subcommand("fdmap", "Compute a per-pixel FD map of a PGM image");
  fdmap->add_option("--input", fa.input, "Input PGM (P5, 8-bit)")->required();
  fdmap->add_option("--output", fa.output, "Output FDM1 file")->required();
  fdmap->add_option("--R", fa.R, "Neighborhood size R")->capture_default_str();
  fdmap->add_option("--scales", fa.scales, "Box sizes, comma separated (default 2..R)")->delimiter(',');
  fdmap->add_option("--viz", fa.viz, "Optional stretched 8-bit PGM rendering");
  fdmap->add_option("--threads", fa.threads, "Worker threads")->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score predicted masks against ground truth");
  eval->add_option("--pred", ea.pred, "Directory of predicted PGMs")->required();
  eval->add_option("--gt", ea.gt, "Directory of ground-truth PGMs")->required();
  eval->add_option("--out", ea.out, "Output CSV")->required();
  eval->add_option("--threshold", ea.threshold, "Binarization threshold on pred/255")->capture_default_str();

  GradcheckArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every analytic gradient");
  grad->add_option("--seed", ga.seed, "Random seed")->capture_default_str();
  grad->add_option("--instances", ga.instances, "Random instances per suite")->capture_default_str();
  grad->add_flag("--corrupt", ga.corrupt)->group("");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the toy segmenter on synthetic or PGM data");
  train->add_option("--config", ta.config, "key=value configuration file");
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--set", ta.overrides, "Override a config key (key=value), repeatable");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time fd_map single- and multi-threaded");
  bench->add_option("--size", ba.size, "Image side length")->capture_default_str();
  bench->add_option("--threads", ba.threads, "Worker threads for the parallel run")->capture_default_str();
  bench->add_option("--iters", ba.iters, "Timed repetitions (median reported)")->capture_default_str();
  bench->add_option("--seed", ba.seed, "Random image seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kParamError;
  }

  try {
    if (fdmap->parsed()) return cmd_fdmap(fa);
    if (eval->parsed()) return cmd_eval(ea);
    if (grad->parsed()) return cmd_gradcheck(ga);
    if (train->parsed()) return cmd_train(ta);
    if (bench->parsed()) return cmd_bench(ba);
  } catch (const IoError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const ConfigError& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return kParamError;
  } catch (const InvalidArgument& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return kParamError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kVerifyFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kParamError;
}
