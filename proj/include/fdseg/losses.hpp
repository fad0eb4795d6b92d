#pragma once

// Hybrid segmentation objective: soft Dice loss on the segmentation head plus
// a lambda-weighted mean squared error between predicted and target FD maps,
// with optional binary cross-entropy. Every term returns its exact gradient.
// Sums run in fixed row-major order so results are reproducible.

#include <algorithm>
#include <cmath>

#include "fdseg/grid.hpp"

namespace fdseg {

struct LossConfig {
  double lambda_fd = 0.1;
  double epsilon = 1e-6;
  bool include_bce = false;
  double bce_clamp = 1e-7;

  void validate() const {
    if (!(epsilon > 0.0)) throw InvalidArgument("LossConfig: epsilon must be positive");
    if (!(lambda_fd >= 0.0)) throw InvalidArgument("LossConfig: lambda_fd must be non-negative");
    if (!(bce_clamp > 0.0 && bce_clamp < 0.5)) throw InvalidArgument("LossConfig: bad BCE clamp");
  }
};

struct LossValue {
  double total = 0.0;
  double dice_part = 0.0;
  double fd_part = 0.0;
  double bce_part = 0.0;
};

template <typename Scalar>
struct LossAndGrad {
  double loss = 0.0;
  Grid<Scalar> grad;
};

template <typename Scalar>
struct HybridResult {
  LossValue value;
  Grid<Scalar> seg_grad;
  Grid<Scalar> fd_grad;
};

namespace detail {

template <typename Scalar>
struct DiceSums {
  double intersection = 0.0;  // sum y * p
  double denominator = 0.0;   // sum y + sum p + eps
};

template <typename Scalar>
DiceSums<Scalar> dice_sums(const BinaryMask& gt, const Grid<Scalar>& pred, double epsilon) {
  require_same_shape(gt, pred, "dice");
  DiceSums<Scalar> s;
  double sum_y = 0.0, sum_p = 0.0;
  for (Index i = 0; i < gt.size(); ++i) {
    const double y = gt.data()[i];
    const double p = static_cast<double>(pred.data()[i]);
    s.intersection += y * p;
    sum_y += y;
    sum_p += p;
  }
  s.denominator = sum_y + sum_p + epsilon;
  return s;
}

}  // namespace detail

/// Smoothed soft Dice (2 sum(y p) + eps) / (sum y + sum p + eps).
template <typename Scalar>
double dice_coefficient(const BinaryMask& gt, const Grid<Scalar>& pred, double epsilon) {
  const auto s = detail::dice_sums(gt, pred, epsilon);
  return (2.0 * s.intersection + epsilon) / s.denominator;
}

/// 1 - Dice and its gradient with respect to the predicted probabilities.
template <typename Scalar>
LossAndGrad<Scalar> dice_loss_and_grad(const BinaryMask& gt, const Grid<Scalar>& pred,
                                       double epsilon) {
  const auto s = detail::dice_sums(gt, pred, epsilon);
  const double num = 2.0 * s.intersection + epsilon;
  const double den = s.denominator;
  LossAndGrad<Scalar> out{1.0 - num / den, Grid<Scalar>(pred.rows(), pred.cols())};
  const double inv_den2 = 1.0 / (den * den);
  for (Index i = 0; i < gt.size(); ++i) {
    const double y = gt.data()[i];
    out.grad.data()[i] = static_cast<Scalar>(-(2.0 * y * den - num) * inv_den2);
  }
  return out;
}

/// Mean squared error between FD maps; gradient is taken w.r.t. the prediction.
template <typename Scalar>
LossAndGrad<Scalar> fd_mse_and_grad(const ScalarGrid& target_fd, const Grid<Scalar>& pred_fd) {
  require_same_shape(target_fd, pred_fd, "fd_mse");
  const double n = static_cast<double>(pred_fd.size());
  LossAndGrad<Scalar> out{0.0, Grid<Scalar>(pred_fd.rows(), pred_fd.cols())};
  for (Index i = 0; i < pred_fd.size(); ++i) {
    const double d = static_cast<double>(pred_fd.data()[i]) - target_fd.data()[i];
    out.loss += d * d;
    out.grad.data()[i] = static_cast<Scalar>(2.0 * d / n);
  }
  out.loss /= n;
  return out;
}

/// Mean binary cross-entropy with predictions clamped to [clamp, 1 - clamp].
/// The gradient is zero where the clamp is active.
template <typename Scalar>
LossAndGrad<Scalar> bce_and_grad(const BinaryMask& gt, const Grid<Scalar>& pred,
                                 double clamp = 1e-7) {
  require_same_shape(gt, pred, "bce");
  const double n = static_cast<double>(pred.size());
  LossAndGrad<Scalar> out{0.0, Grid<Scalar>(pred.rows(), pred.cols())};
  for (Index i = 0; i < pred.size(); ++i) {
    const double raw = static_cast<double>(pred.data()[i]);
    const double p = std::clamp(raw, clamp, 1.0 - clamp);
    const double y = gt.data()[i];
    out.loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    const bool active = raw > clamp && raw < 1.0 - clamp;
    out.grad.data()[i] = static_cast<Scalar>(active ? (p - y) / (p * (1.0 - p) * n) : 0.0);
  }
  out.loss /= n;
  return out;
}

/// Dice (+ BCE) routed to the segmentation head, lambda_fd * MSE routed to the
/// FD head. The two gradients are disjoint by construction.
template <typename Scalar>
HybridResult<Scalar> hybrid_loss(const BinaryMask& gt, const Grid<Scalar>& pred_seg,
                                 const ScalarGrid& target_fd, const Grid<Scalar>& pred_fd,
                                 const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(gt, pred_fd, "hybrid_loss");
  auto dice = dice_loss_and_grad(gt, pred_seg, cfg.epsilon);
  auto mse = fd_mse_and_grad(target_fd, pred_fd);

  HybridResult<Scalar> out;
  out.value.dice_part = dice.loss;
  out.value.fd_part = mse.loss;
  out.value.total = dice.loss + cfg.lambda_fd * mse.loss;
  out.seg_grad = std::move(dice.grad);
  if (cfg.include_bce) {
    auto bce = bce_and_grad(gt, pred_seg, cfg.bce_clamp);
    out.value.bce_part = bce.loss;
    out.value.total += bce.loss;
    out.seg_grad += bce.grad;
  }
  out.fd_grad = mse.grad * static_cast<Scalar>(cfg.lambda_fd);
  return out;
}

}  // namespace fdseg
