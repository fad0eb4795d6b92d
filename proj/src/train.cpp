#include "fdseg/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "fdseg/metrics.hpp"
#include "fdseg/parallel.hpp"

namespace fdseg {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("TrainConfig: learning_rate must be positive");
  if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
  if (max_epochs < 1) throw InvalidArgument("TrainConfig: max_epochs must be >= 1");
  if (patience < 1 || patience > max_epochs)
    throw InvalidArgument("TrainConfig: patience must lie in [1, max_epochs]");
  if (!(lambda_fd >= 0.0)) throw InvalidArgument("TrainConfig: lambda_fd must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw InvalidArgument("TrainConfig: Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw InvalidArgument("TrainConfig: adam_eps must be positive");
  if (threads < 1) throw InvalidArgument("TrainConfig: threads must be >= 1");
  net.validate();
}

LossConfig TrainConfig::loss() const {
  LossConfig l;
  l.lambda_fd = lambda_fd;
  l.include_bce = include_bce;
  return l;
}

void adam_step(Vec<double>& params, const Vec<double>& grads, Vec<double>& moment1,
               Vec<double>& moment2, std::int64_t t, const TrainConfig& cfg) {
  if (grads.size() != params.size() || moment1.size() != params.size() || moment2.size() != params.size())
    throw ShapeMismatch("adam_step: vector lengths differ");
  if (t < 1) throw InvalidArgument("adam_step: step index must be >= 1");
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  moment1 = b1 * moment1 + (1.0 - b1) * grads;
  moment2 = b2 * moment2 + (1.0 - b2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  params.array() -= cfg.learning_rate * (moment1.array() / c1) /
                    ((moment2.array() / c2).sqrt() + cfg.adam_eps);
}

bool EarlyStopping::update(double score) {
  ++epoch_;
  improved_ = epoch_ == 1 || score > best_;
  if (improved_) {
    best_ = score;
    best_epoch_ = epoch_;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

ScalarGrid predict(const ToyNetParams<double>& params, const ScalarGrid& image) {
  return forward(image, params).seg_prob;
}

double evaluate_split(const ToyNetParams<double>& params, std::span<const Sample> samples, int threads) {
  if (samples.empty()) throw InvalidArgument("evaluate_split: empty sample list");
  std::vector<double> dice(samples.size());
  parallel_for(0, static_cast<Index>(samples.size()), threads, [&](Index lo, Index hi) {
    for (Index i = lo; i < hi; ++i) {
      const auto& s = samples[static_cast<std::size_t>(i)];
      dice[static_cast<std::size_t>(i)] =
          metrics_from_counts(confusion(s.mask, binarize(predict(params, s.image), 0.5))).dsc;
    }
  });
  return std::accumulate(dice.begin(), dice.end(), 0.0) / static_cast<double>(dice.size());
}

BatchResult batch_gradient(const ToyNetParams<double>& params, std::span<const Sample> batch,
                           const LossConfig& loss, int threads) {
  if (batch.empty()) throw InvalidArgument("batch_gradient: empty batch");
  std::vector<LossValue> values(batch.size());
  std::vector<Vec<double>> grads(batch.size());
  parallel_for(0, static_cast<Index>(batch.size()), threads, [&](Index lo, Index hi) {
    for (Index i = lo; i < hi; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const auto& s = batch[k];
      auto fwd = forward(s.image, params);
      auto h = hybrid_loss(s.mask, fwd.seg_prob, s.fd_target, fwd.fd_pred, loss);
      values[k] = h.value;
      grads[k] = backward(fwd.trace, h.seg_grad, h.fd_grad, params);
    }
  });
  BatchResult out{LossValue{}, Vec<double>::Zero(params.values.size())};
  for (std::size_t k = 0; k < batch.size(); ++k) {
    out.loss.total += values[k].total;
    out.loss.dice_part += values[k].dice_part;
    out.loss.fd_part += values[k].fd_part;
    out.loss.bce_part += values[k].bce_part;
    out.grad += grads[k];
  }
  const double n = static_cast<double>(batch.size());
  out.loss.total /= n;
  out.loss.dice_part /= n;
  out.loss.fd_part /= n;
  out.loss.bce_part /= n;
  out.grad /= n;
  return out;
}

FitResult fit(const TrainConfig& cfg, const DatasetSplit& data, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty() || data.val.empty()) throw InvalidArgument("fit: train and val splits must be nonempty");
  const LossConfig loss = cfg.loss();

  FitResult result{init_params(cfg.net, cfg.seed), {}};
  ToyNetParams<double> params = result.best;
  AdamState adam(params.values.size());
  EarlyStopping stopper(cfg.patience);

  const std::size_t n = data.train.size();
  std::vector<std::size_t> order(n);
  std::vector<Sample> batch;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x5EEDu};
    std::mt19937_64 shuffle_rng(seq);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossValue sum;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(n, b + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = b; i < e; ++i) {
        const Sample& s = data.train[order[i]];
        if (cfg.augment) {
          auto rng = augment_rng(cfg.seed, order[i], static_cast<std::uint64_t>(epoch));
          batch.push_back(augment(s, rng));
        } else {
          batch.push_back(s);
        }
      }
      const BatchResult br = batch_gradient(params, batch, loss, cfg.threads);
      if (!std::isfinite(br.loss.total) || !br.grad.allFinite())
        throw NumericalError("fit: non-finite loss or gradient at epoch " + std::to_string(epoch));
      const double w = static_cast<double>(e - b);
      sum.total += w * br.loss.total;
      sum.dice_part += w * br.loss.dice_part;
      sum.fd_part += w * br.loss.fd_part;
      sum.bce_part += w * br.loss.bce_part;
      adam_step(params.values, br.grad, adam.moment1, adam.moment2, ++adam.step, cfg);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss.dice_part = sum.dice_part / static_cast<double>(n);
    rec.train_loss.fd_part = sum.fd_part / static_cast<double>(n);
    rec.train_loss.bce_part = sum.bce_part / static_cast<double>(n);
    rec.train_loss.total = sum.total / static_cast<double>(n);
    rec.val_dice = evaluate_split(params, data.val, cfg.threads);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const bool stop = stopper.update(rec.val_dice);
    if (stopper.improved()) result.best = params;
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stop) {
      result.history.stopped_early = true;
      break;
    }
  }
  result.history.best_epoch = stopper.best_epoch();
  return result;
}

std::string history_csv(const TrainHistory& history, bool include_time) {
  std::string out = "epoch,dice_part,fd_part,bce_part,total,val_dice,seconds\n";
  char line[256];
  for (const auto& r : history.epochs) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n", r.epoch,
                  r.train_loss.dice_part, r.train_loss.fd_part, r.train_loss.bce_part,
                  r.train_loss.total, r.val_dice, include_time ? r.seconds : 0.0);
    out += line;
  }
  return out;
}

}  // namespace fdseg
