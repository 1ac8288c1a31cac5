#pragma once

// Subcommand implementations behind the `idn` tool. Every command writes its
// artifacts under an output directory and its human-readable summary to `log`.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "idn/metrics.hpp"
#include "idn/run_config.hpp"
#include "idn/train.hpp"

namespace idn::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,  // unexpected error
  kConfig = 2,   // bad flags or config keys
  kData = 3,     // unreadable or inconsistent data, scores or checkpoints
  kNumeric = 4,  // non-finite loss or failed gradient check
};

int exit_code_for(const std::exception& e);

struct GenResult {
  std::filesystem::path manifest;
  std::size_t train_chunks = 0;
  std::size_t eval_chunks = 0;
};

/// Synthetic dataset (record files + manifest) from the generator keys.
GenResult cmd_gen(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

struct TrainArgs {
  std::filesystem::path resume;           // checkpoint to continue from
  std::optional<std::uint64_t> stop_at_step;
};

/// Trains on the "train" split of `cfg.data`; writes checkpoint.bin,
/// train_log.csv, epochs.csv and config.txt.
Model cmd_train(const RunConfig& cfg, const TrainArgs& args, const std::filesystem::path& out,
                std::ostream& log);

/// Scores a split with `cfg.checkpoint`; writes metrics.csv, portion.csv and scores.tsv.
EvalReport cmd_eval(const RunConfig& cfg, const std::string& split,
                    const std::filesystem::path& out, std::ostream& log);

/// Writes gates.csv (window_id, t, mean_z, mean_r, relevance) for a split.
GateGap cmd_inspect_gates(const RunConfig& cfg, const std::string& split,
                          const std::filesystem::path& out, std::ostream& log);

struct GradcheckRow {
  Variant variant = Variant::gru;
  std::string matrix;
  double max_rel = 0.0;
  bool pass = false;
};

std::vector<GradcheckRow> gradcheck(const std::vector<Variant>& variants, std::uint64_t seed,
                                    double tolerance, const std::string& tamper = {});

/// Prints the gradient-check table; writes gradcheck.csv when `out` is non-empty.
/// Returns kNumeric when any matrix fails.
int cmd_gradcheck(const RunConfig& cfg, const std::vector<Variant>& variants,
                  const std::string& tamper, const std::filesystem::path& out,
                  std::ostream& log);

struct ParamCountRow {
  std::string convention;
  std::size_t gru_closed = 0, gru_tally = 0;
  std::size_t idu_closed = 0, idu_tally = 0;
  double ratio() const { return static_cast<double>(idu_closed) / static_cast<double>(gru_closed); }
};

/// IDU and GRU parameter counts under several counting conventions, each
/// computed from the closed form and by tallying allocated matrices.
std::vector<ParamCountRow> param_count_report(std::size_t d_x, std::size_t hidden,
                                              std::size_t embed, std::size_t K);

void write_param_count_report(std::ostream& os, const std::vector<ParamCountRow>& rows);

/// Loads `cfg.data` and adopts its K and d_x into the network config.
Dataset load_run_data(RunConfig& cfg);

}  // namespace idn::cli
