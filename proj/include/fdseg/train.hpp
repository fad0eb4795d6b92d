#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fdseg/data.hpp"
#include "fdseg/losses.hpp"
#include "fdseg/net.hpp"

namespace fdseg {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 4;
  int max_epochs = 100;
  int patience = 5;
  double lambda_fd = 0.1;
  bool include_bce = false;
  bool augment = true;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int threads = 1;
  ToyNetConfig net;

  void validate() const;
  LossConfig loss() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossValue train_loss;  // mean over training samples
  double val_dice = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;
};

struct AdamState {
  Vec<double> moment1;
  Vec<double> moment2;
  std::int64_t step = 0;

  explicit AdamState(Index n = 0) : moment1(Vec<double>::Zero(n)), moment2(Vec<double>::Zero(n)) {}
};

/// One Adam update at step t (1-based); updates params, m and v in place.
void adam_step(Vec<double>& params, const Vec<double>& grads, Vec<double>& moment1,
               Vec<double>& moment2, std::int64_t t, const TrainConfig& cfg);

/// Patience rule: an epoch improves only if its score strictly exceeds the
/// best so far; training stops after `patience` consecutive non-improving epochs.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Records the score of the next epoch; returns true when training should stop.
  bool update(double score);
  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int stale_ = 0;
  double best_ = 0.0;
  bool improved_ = false;
};

/// Mean of the per-sample DSC of predictions binarized at 0.5.
double evaluate_split(const ToyNetParams<double>& params, std::span<const Sample> samples,
                      int threads = 1);

ScalarGrid predict(const ToyNetParams<double>& params, const ScalarGrid& image);

struct BatchResult {
  LossValue loss;  // mean over the batch
  Vec<double> grad;
};

/// Mean hybrid loss and gradient over a batch; per-sample work may run on
/// `threads` workers, reduced in sample order.
BatchResult batch_gradient(const ToyNetParams<double>& params, std::span<const Sample> batch,
                           const LossConfig& loss, int threads = 1);

struct FitResult {
  ToyNetParams<double> best;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

FitResult fit(const TrainConfig& cfg, const DatasetSplit& data, const EpochCallback& on_epoch = {});

/// epoch,dice_part,fd_part,bce_part,total,val_dice,seconds
std::string history_csv(const TrainHistory& history, bool include_time = true);

}  // namespace fdseg
