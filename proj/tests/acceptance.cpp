// Acceptance gate. `acceptance` runs every criterion, `acceptance 3 7` runs a
// subset. Each criterion prints one PASS/FAIL line; the exit status is 0 only
// when every requested criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "fdseg/data.hpp"
#include "fdseg/fractal.hpp"
#include "fdseg/gradcheck.hpp"
#include "fdseg/losses.hpp"
#include "fdseg/metrics.hpp"
#include "fdseg/net.hpp"
#include "fdseg/runtime.hpp"
#include "fdseg/train.hpp"

using namespace fdseg;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

ScalarGrid random_image(Index h, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return ScalarGrid::NullaryExpr(h, w, [&] { return u(rng); });
}

BinaryMask random_mask(Index h, Index w, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution b(p);
  return BinaryMask::NullaryExpr(h, w, [&] { return static_cast<std::uint8_t>(b(rng)); });
}

Outcome flatness() {
  double worst = 0.0;
  int maps = 0;
  for (double level : {0.0, 0.2, 0.5, 0.73, 1.0}) {
    for (auto [h, w] : {std::pair<Index, Index>{1, 1}, {5, 9}, {32, 32}, {64, 48}}) {
      const ScalarGrid g = ScalarGrid::Constant(h, w, level);
      worst = std::max(worst, (fd_map(g) - 2.0).abs().maxCoeff());
      worst = std::max(worst, (fd_map_oracle(g) - 2.0).abs().maxCoeff());
      maps += 2;
    }
  }
  return {worst <= 1e-9, fmt("%d constant maps, max |FD - 2| = %.3g (tol 1e-9)", maps, worst)};
}

Outcome oracle_equivalence() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ScalarGrid g = random_image(32, 32, 0xACCE55 + seed);
    worst = std::max(worst, (fd_map(g) - fd_map_oracle(g)).abs().maxCoeff());
  }
  return {worst <= 1e-12, fmt("100 images 32x32, max |fast - oracle| = %.3g (tol 1e-12)", worst)};
}

Outcome gradient_suite() {
  GradcheckOptions opt;
  opt.seed = 20240;
  const auto entries = run_gradcheck(opt);
  bool ok = !entries.empty();
  std::string detail;
  for (const auto& e : entries) {
    ok = ok && e.passed() && e.instances >= 50;
    detail += fmt("%s%s=%.2e/%d", detail.empty() ? "" : " ", e.component.c_str(), e.max_rel_error, e.instances);
  }
  for (const char* needed : {"loss.dice", "loss.fd_mse", "loss.bce", "loss.hybrid.seg", "loss.hybrid.fd",
                             "net.stem", "net.depthwise", "net.layernorm", "net.pointwise", "net.downsample",
                             "net.decoder", "net.head"}) {
    const bool present = std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.component == needed; });
    if (!present) {
      ok = false;
      detail += fmt(" missing:%s", needed);
    }
  }
  return {ok, detail + " (tol 1e-5 losses, 1e-4 net)"};
}

Outcome metric_identities() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<std::int64_t> count(0, 10000);
  int exact_fpr = 0;
  double worst_dsc = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const ConfusionCounts c{count(rng), count(rng), count(rng), count(rng)};
    const MetricReport m = metrics_from_counts(c);
    if (m.fpr + m.sp == 1.0) ++exact_fpr;
    worst_dsc = std::max(worst_dsc, std::abs(m.dsc - 2.0 * m.iou / (1.0 + m.iou)));
  }

  int agree = 0;
  for (int i = 0; i < 100; ++i) {
    const double p = 0.05 + 0.9 * (i / 99.0);
    const BinaryMask gt = random_mask(24, 31, rng, p), pred = random_mask(24, 31, rng, 1.0 - p);
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (Index k = 0; k < gt.size(); ++k) {
      if (gt(k) && pred(k)) ++tp;
      else if (!gt(k) && !pred(k)) ++tn;
      else if (pred(k)) ++fp;
      else ++fn;
    }
    const MetricReport m = metrics_from_counts(confusion(gt, pred));
    const double expect[6] = {2 * tp / (2 * tp + fp + fn), tp / (tp + fp + fn), (tp + tn) / (tp + tn + fp + fn),
                              tp / (tp + fn), tn / (tn + fp), fp / (tn + fp)};
    const double got[6] = {m.dsc, m.iou, m.acc, m.sn, m.sp, m.fpr};
    bool same = true;
    for (int j = 0; j < 6; ++j) same = same && std::abs(expect[j] - got[j]) <= 1e-15;
    agree += same;
  }
  return {exact_fpr == 1000 && worst_dsc <= 1e-15 && agree == 100,
          fmt("fpr+sp==1 exactly %d/1000, max |dsc - 2iou/(1+iou)| = %.2g, naive oracle agrees %d/100", exact_fpr,
              worst_dsc, agree)};
}

Outcome loss_decomposition() {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const BinaryMask gt = random_mask(32, 32, rng, 0.3);
  const ScalarGrid seg = ScalarGrid::NullaryExpr(32, 32, [&] { return 0.02 + 0.96 * u(rng); });
  const ScalarGrid target = ScalarGrid::NullaryExpr(32, 32, [&] { return 2.0 + u(rng); });
  const ScalarGrid fd = ScalarGrid::NullaryExpr(32, 32, [&] { return 1.5 + 1.5 * u(rng); });

  double worst = 0.0;
  for (bool bce : {false, true}) {
    for (double lambda : {0.01, 0.1, 0.5}) {
      LossConfig cfg;
      cfg.lambda_fd = lambda;
      cfg.include_bce = bce;
      const LossValue v = hybrid_loss(gt, seg, target, fd, cfg).value;
      worst = std::max(worst, std::abs(v.total - (v.dice_part + lambda * v.fd_part + (bce ? v.bce_part : 0.0))));
    }
  }
  LossConfig zero;
  zero.lambda_fd = 0.0;
  const auto h = hybrid_loss(gt, seg, target, fd, zero);
  const auto dice = dice_loss_and_grad(gt, seg, zero.epsilon);
  const bool collapses =
      h.value.total == dice.loss && (h.seg_grad == dice.grad).all() && (h.fd_grad == 0.0).all();
  return {worst <= 1e-12 && collapses,
          fmt("lambda {0.01,0.1,0.5} x bce {off,on}: max |total - parts| = %.2g (tol 1e-12); lambda 0 is pure Dice: %s",
              worst, collapses ? "yes" : "no")};
}

Outcome block_identity_and_layernorm() {
  ToyNetConfig cfg;
  cfg.stages = 1;
  cfg.stage_channels = {8};
  cfg.input_h = cfg.input_w = 16;
  const std::string prefix = names::block(0, 0);
  std::mt19937_64 rng(66);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor3<double> x(8, 16, 16);
  x.data = Mat<double>::NullaryExpr(8, 256, [&] { return u(rng); });

  ToyNetParams<double> zero(cfg);
  const bool all_zero = (convnext_block(x, zero, prefix).data.array() == x.data.array()).all();
  // Random everything except the final pointwise projection.
  ToyNetParams<double> partial = init_params(cfg, 9);
  partial.values = Vec<double>::NullaryExpr(partial.values.size(), [&] { return u(rng); });
  partial.slice(prefix + ".pw2.w").setZero();
  partial.slice(prefix + ".pw2.b").setZero();
  const bool residual_only = (convnext_block(x, partial, prefix).data.array() == x.data.array()).all();

  // Variance well above the LN epsilon so the pre-affine output is unit variance to 1e-6.
  Mat<double> wide = Mat<double>::NullaryExpr(8, 400, [&] { return 100.0 * u(rng); });
  Vec<double> inv_std;
  const Mat<double> n = layer_norm_channels(wide, inv_std);
  const double mean_err = n.colwise().mean().cwiseAbs().maxCoeff();
  const double var_err = (n.array().square().colwise().mean() - 1.0).abs().maxCoeff();
  return {all_zero && residual_only && mean_err <= 1e-6 && var_err <= 1e-6,
          fmt("zero block exact identity: %s, zero pw2 exact identity: %s, LN max |mean| %.2g, max |var-1| %.2g (tol 1e-6)",
              all_zero ? "yes" : "no", residual_only ? "yes" : "no", mean_err, var_err)};
}

Outcome training_surrogate() {
  tune_allocator();
  const auto t_data = Clock::now();
  const DatasetSplit data = make_synthetic_split(200, 50, 50, 7, 64);
  const double data_s = seconds_since(t_data);

  TrainConfig cfg;
  cfg.lambda_fd = 0.1;
  cfg.learning_rate = 1e-4;
  cfg.batch_size = 4;
  cfg.patience = 5;
  cfg.max_epochs = 100;
  cfg.seed = 1;

  struct Run {
    FitResult result;
    double seconds = 0.0;
    std::optional<int> reached_epoch;
    double reached_seconds = 0.0;
  };
  const auto execute = [&] {
    Run run;
    const auto t0 = Clock::now();
    run.result = fit(cfg, data, [&](const EpochRecord& r) {
      if (!run.reached_epoch && r.val_dice >= 0.90) {
        run.reached_epoch = r.epoch;
        run.reached_seconds = seconds_since(t0);
      }
      std::printf("  epoch %3d  total %.5f  val_dice %.4f  %.1fs\n", r.epoch, r.train_loss.total, r.val_dice, r.seconds);
      std::fflush(stdout);
    });
    run.seconds = seconds_since(t0);
    return run;
  };

  const Run a = execute();
  const Run b = execute();
  const bool same_history = history_csv(a.result.history, false) == history_csv(b.result.history, false);
  const bool same_weights = encode_checkpoint(a.result.best) == encode_checkpoint(b.result.best);
  const auto& best = a.result.history.epochs[static_cast<std::size_t>(a.result.history.best_epoch - 1)];
  const double test_dice = evaluate_split(a.result.best, data.test);

  const bool reached = a.reached_epoch.has_value();
  const bool in_time = a.seconds < 900.0;
  return {reached && in_time && same_history && same_weights,
          fmt("reached 0.90 at epoch %d (%.0fs); run %d epochs, best epoch %d val %.4f, test %.4f, %.0fs (limit 900s)%s; "
              "data %.1fs; second run bit-identical history: %s, weights: %s",
              reached ? *a.reached_epoch : -1, a.reached_seconds, static_cast<int>(a.result.history.epochs.size()),
              a.result.history.best_epoch, best.val_dice, test_dice, a.seconds,
              a.result.history.stopped_early ? " early-stopped" : "", data_s, same_history ? "yes" : "no",
              same_weights ? "yes" : "no")};
}

Outcome edge_sensitivity() {
  double band_sum = 0.0, bg_sum = 0.0;
  Index band_n = 0, bg_n = 0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const Sample s = gen_shape_sample(808, i, 64);
    const FdMap fd = fd_map_oracle(s.image);
    const BinaryMask band = boundary_band(s.mask, 1);
    const BinaryMask bg = far_background(s.mask, 7);
    for (Index p = 0; p < fd.size(); ++p) {
      if (band(p)) {
        band_sum += fd(p);
        ++band_n;
      }
      if (bg(p)) {
        bg_sum += fd(p);
        ++bg_n;
      }
    }
  }
  const double band_mean = band_sum / static_cast<double>(std::max<Index>(band_n, 1));
  const double bg_mean = bg_sum / static_cast<double>(std::max<Index>(bg_n, 1));
  return {band_n > 0 && bg_n > 0 && band_mean > bg_mean,
          fmt("20 samples: band mean FD %.4f (%ld px) vs background %.4f (%ld px)", band_mean, static_cast<long>(band_n),
              bg_mean, static_cast<long>(bg_n))};
}

double median_ms(const ScalarGrid& image, int threads, int iters, FdMap& out) {
  std::vector<double> ms;
  for (int i = 0; i < iters; ++i) {
    const auto t0 = Clock::now();
    out = fd_map(image, {}, threads);
    ms.push_back(1e3 * seconds_since(t0));
  }
  std::sort(ms.begin(), ms.end());
  return ms[ms.size() / 2];
}

Outcome performance() {
  const ScalarGrid image = random_image(256, 256, 9);
  FdMap single, multi;
  median_ms(image, 1, 2, single);
  const double t1 = median_ms(image, 1, 15, single);
  const double t8 = median_ms(image, 8, 15, multi);
  const FdMap oracle = fd_map_oracle(image);
  const double diff = std::max((single - oracle).abs().maxCoeff(), (multi - oracle).abs().maxCoeff());
  const double speedup = t1 / t8;
  return {t1 <= 50.0 && speedup >= 3.0 && diff <= 1e-12,
          fmt("256x256: %.2f ms single (limit 50), %.2f ms at 8 threads, speedup %.2fx (need 3x, %u hardware threads), "
              "max |fast - oracle| %.2g",
              t1, t8, speedup, std::thread::hardware_concurrency(), diff)};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;  // 0: no runtime limit
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "FD flatness law", 1.0, flatness},
      {2, "oracle equivalence", 30.0, oracle_equivalence},
      {3, "gradient suite", 120.0, gradient_suite},
      {4, "metric identities", 10.0, metric_identities},
      {5, "loss decomposition", 0.0, loss_decomposition},
      {6, "block identity and LN", 0.0, block_identity_and_layernorm},
      {7, "training surrogate", 0.0, training_surrogate},
      {8, "edge sensitivity", 0.0, edge_sensitivity},
      {9, "fd_map performance", 0.0, performance},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const int id = std::atoi(argv[i]);
    if (id < 1 || id > static_cast<int>(all.size())) {
      std::fprintf(stderr, "usage: acceptance [1-9 ...]\n");
      return 2;
    }
    wanted.push_back(id);
  }
  if (wanted.empty())
    for (const auto& c : all) wanted.push_back(c.id);

  bool all_pass = true;
  for (int id : wanted) {
    const Criterion& c = all[static_cast<std::size_t>(id - 1)];
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = seconds_since(t0);
    const bool in_time = c.limit_s <= 0.0 || s < c.limit_s;
    const bool pass = o.pass && in_time;
    all_pass = all_pass && pass;
    std::string timing = fmt("%.2fs", s);
    if (c.limit_s > 0.0) timing += fmt(" of %.0fs", c.limit_s);
    std::printf("criterion %d %s: %s  %s  [%s]\n", c.id, c.name, pass ? "PASS" : "FAIL", o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
