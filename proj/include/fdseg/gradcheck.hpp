#pragma once

// Finite-difference verification of every analytic gradient in the toolkit:
// the four loss terms and each parameter family of the network.

#include <cstdint>
#include <string>
#include <vector>

#include "fdseg/grid.hpp"
#include "fdseg/net.hpp"

namespace fdseg {

struct GradcheckOptions {
  std::uint64_t seed = 1;
  int loss_instances = 50;
  int net_instances = 50;
  double step = 1e-5;
  double loss_tolerance = 1e-5;
  double net_tolerance = 1e-4;
  bool corrupt = false;  // test hook: perturb the analytic Dice gradient
};

struct GradcheckEntry {
  std::string component;
  int instances = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

/// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
double relative_error(const Vec<double>& a, const Vec<double>& b);

/// Network configurations the net suite runs on: one stage (2 channels, 8x8)
/// and two stages, which adds the downsample and decoder families.
std::vector<ToyNetConfig> gradcheck_net_configs();

/// Parameter family of a layout slot: stem, depthwise, layernorm, pointwise,
/// downsample, decoder or head.
std::string parameter_family(const std::string& slot_name);

std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& options);

}  // namespace fdseg
