#pragma once

// Flat key=value run configuration shared by every subcommand.
//
// Network keys are those of IdnConfig (T, N, K, d_x, d_a, d_m, hidden, embed,
// variant, bias, lr, batch_size, epochs, seed, alpha, margin). K and d_x are
// taken from the dataset manifest when training or evaluating.
//
// Generator keys describe the synthetic dataset written by `gen`:
// classes, feature_dim, prototype_scale, noise_sigma, sequence_length, chunks,
// min_run, max_run, background_rate, eval_fraction. The generator uses `seed`.
//
// Other keys: data (manifest path), checkpoint (path), epoch_mcap (bool),
// gradcheck_tolerance.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "idn/datagen.hpp"
#include "idn/network.hpp"

namespace idn {

struct RunConfig {
  IdnConfig model;
  SyntheticSpec synthetic;
  std::filesystem::path data;
  std::filesystem::path checkpoint;
  bool epoch_mcap = true;
  double gradcheck_tolerance = 1e-5;

  /// Applies one key; unknown keys and malformed values throw ConfigError.
  void set(std::string_view key, std::string_view value);

  /// Applies a `key=value` string.
  void set_pair(std::string_view pair);

  /// Every key in a fixed order, values in shortest round-trip form.
  std::vector<std::pair<std::string, std::string>> to_kv() const;

  /// Generator spec with the run seed applied.
  SyntheticSpec synthetic_spec() const;

  void validate() const;
};

/// Defaults overlaid with the keys of a config file. Relative `data` and
/// `checkpoint` paths resolve against the config file's directory.
RunConfig read_run_config(const std::filesystem::path& file);

void write_run_config(std::ostream& os, const RunConfig& c);

}  // namespace idn
