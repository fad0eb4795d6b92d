#pragma once

// Flat key=value run configuration: one pair per line, '#' starts a comment,
// blank lines ignored. Unknown keys are rejected.

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fdseg/train.hpp"

namespace fdseg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::filesystem::path& path);

struct RunConfig {
  TrainConfig train;
  int n_train = 200;
  int n_val = 50;
  int n_test = 50;
  std::uint64_t data_seed = 7;
  std::string data_dir;             // empty: generate synthetic shapes
  std::vector<double> lambda_sweep;  // empty: single run at train.lambda_fd
  bool log_wall_time = true;
  int gallery_count = 8;
};

/// Applies `values` on top of `base`; throws ConfigError on unknown keys or
/// unparsable values.
RunConfig apply_key_values(RunConfig base, const KeyValues& values);

std::vector<std::string> known_config_keys();

}  // namespace fdseg
