#pragma once

// Minibatch SGD over windows, with action/background balanced batches.
//
// Batch composition is a pure function of (seed, step): step s belongs to
// epoch s / steps_per_epoch, every epoch draws fresh permutations of the
// background pool and the action pool (pool = class of the newest chunk), and
// each batch takes the next B/2 windows of each pool. With odd B the spare
// slot goes to the action pool on even steps and the background pool on odd
// ones. An epoch is one pass over the larger pool; the smaller pool wraps
// around. A run resumed from a checkpoint's step counter therefore replays
// exactly the batches an uninterrupted run would have seen.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "idn/metrics.hpp"
#include "idn/network.hpp"

namespace idn {

class BalancedSampler {
 public:
  BalancedSampler(const std::vector<Window>& windows, std::size_t batch_size, std::uint64_t seed)
      : batch_size_(batch_size), seed_(seed) {
    if (windows.empty()) throw DataError("training set is empty");
    if (batch_size == 0) throw ConfigError("batch_size must be > 0");
    for (std::size_t i = 0; i < windows.size(); ++i) {
      (windows[i].current_label() == 0 ? background_ : action_).push_back(i);
    }
    if (background_.empty() || action_.empty()) {
      throw DataError("balanced batches need windows whose current chunk is background and "
                      "windows whose current chunk is an action");
    }
    while (taken(steps_per_epoch_, true) < action_.size() ||
           taken(steps_per_epoch_, false) < background_.size()) {
      ++steps_per_epoch_;
    }
  }

  std::size_t steps_per_epoch() const { return steps_per_epoch_; }

  /// Window indices of global step `step`: background first, then action.
  std::vector<std::size_t> batch(std::uint64_t step) const {
    const std::uint64_t epoch = step / steps_per_epoch_;
    const std::uint64_t i = step % steps_per_epoch_;
    if (epoch != cached_epoch_) {
      Rng rng = Rng(seed_).fork(0xBA7C4 + epoch);
      perm_bg_ = background_;
      perm_act_ = action_;
      rng.fork(0).shuffle(perm_bg_);
      rng.fork(1).shuffle(perm_act_);
      cached_epoch_ = epoch;
    }
    const std::size_t bg0 = taken(i, false), act0 = taken(i, true);
    const std::size_t n_bg = taken(i + 1, false) - bg0, n_act = taken(i + 1, true) - act0;
    std::vector<std::size_t> out;
    out.reserve(batch_size_);
    for (std::size_t j = 0; j < n_bg; ++j) out.push_back(perm_bg_[(bg0 + j) % perm_bg_.size()]);
    for (std::size_t j = 0; j < n_act; ++j) out.push_back(perm_act_[(act0 + j) % perm_act_.size()]);
    return out;
  }

 private:
  /// Windows drawn from one pool by the first `steps` batches of an epoch.
  std::size_t taken(std::uint64_t steps, bool action) const {
    const std::size_t half = batch_size_ / 2;
    if (batch_size_ % 2 == 0) return steps * half;
    return steps * half + (action ? (steps + 1) / 2 : steps / 2);
  }

  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t steps_per_epoch_ = 0;
  std::vector<std::size_t> background_, action_;
  mutable std::uint64_t cached_epoch_ = ~std::uint64_t{0};
  mutable std::vector<std::size_t> perm_bg_, perm_act_;
};

struct StepLog {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;  // 1-based count of updates after this one
  LossTerms loss;          // batch mean
  double lr = 0.0;
  std::uint64_t seed = 0;
};

struct EpochLog {
  std::uint64_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> mcap;  // on the training windows, when requested
};

struct TrainLog {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
};

struct TrainOptions {
  /// Absolute step counter to stop at; defaults to epochs * steps_per_epoch.
  std::optional<std::uint64_t> stop_at_step;
  bool epoch_mcap = false;
  std::function<void(const StepLog&)> on_step;
  std::function<void(const EpochLog&)> on_epoch;
};

inline std::vector<FrameScore> score_windows(const Model& m, const std::vector<Window>& windows);
inline EvalReport evaluate_windows(const Model& m, const std::vector<Window>& windows);

/// Plain SGD on the batch-mean loss, continuing from `model.step`.
inline TrainLog train(Model& model, const std::vector<Window>& windows,
                      const TrainOptions& opts = {}) {
  const IdnConfig& cfg = model.config;
  BalancedSampler sampler(windows, cfg.batch_size, cfg.seed);
  const std::uint64_t spe = sampler.steps_per_epoch();
  const std::uint64_t stop = opts.stop_at_step.value_or(cfg.epochs * spe);

  TrainLog log;
  Model grad = model.zeros_like();
  double epoch_loss = 0.0;
  std::size_t epoch_steps = 0;
  while (model.step < stop) {
    const std::uint64_t s = model.step;
    const auto batch = sampler.batch(s);
    for (auto v : grad.param_views()) std::fill(v.values.begin(), v.values.end(), 0.0);

    LossTerms sum;
    for (std::size_t idx : batch) sum += loss_and_gradient(model, windows[idx], &grad);
    const double inv = 1.0 / static_cast<double>(batch.size());
    const LossTerms mean = sum.scaled(inv);
    if (!std::isfinite(mean.total)) {
      throw NumericError("non-finite loss at step " + std::to_string(s) + " (epoch " +
                         std::to_string(s / spe) + ", batch " + std::to_string(s % spe) + ")");
    }
    sgd_update(model, grad, cfg.lr, inv);
    model.step = s + 1;

    StepLog entry{s / spe, model.step, mean, cfg.lr, cfg.seed};
    if (opts.on_step) opts.on_step(entry);
    log.steps.push_back(entry);
    epoch_loss += mean.total;
    ++epoch_steps;

    if (model.step % spe == 0) {
      EpochLog e{s / spe, epoch_loss / static_cast<double>(epoch_steps), std::nullopt};
      if (opts.epoch_mcap) e.mcap = evaluate_windows(model, windows).mcap;
      if (opts.on_epoch) opts.on_epoch(e);
      log.epochs.push_back(e);
      epoch_loss = 0.0;
      epoch_steps = 0;
    }
  }
  return log;
}

inline void write_step_log_header(std::ostream& os) {
  os << "epoch,step,loss_total,loss_a,loss_e,loss_c,lr,seed\n";
}

inline void write_step_log_row(std::ostream& os, const StepLog& s) {
  os << s.epoch << ',' << s.step << ',' << kv::format_double(s.loss.total) << ','
     << kv::format_double(s.loss.action) << ',' << kv::format_double(s.loss.embed) << ','
     << kv::format_double(s.loss.contrast) << ',' << kv::format_double(s.lr) << ',' << s.seed
     << '\n';
}

// ---------------------------------------------------------------------------
// Evaluation over windows

/// p_0 of every window, tagged with its video ordinal and current label.
inline std::vector<FrameScore> score_windows(const Model& m, const std::vector<Window>& windows) {
  std::vector<FrameScore> out;
  out.reserve(windows.size());
  std::size_t video = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (i > 0 && windows[i].video_id != windows[i - 1].video_id) ++video;
    out.push_back({video, windows[i].current_label(), forward(m, windows[i]).p0()});
  }
  return out;
}

inline EvalReport evaluate_frames(std::span<const FrameScore> frames, std::size_t K) {
  ScoreTable table(K);
  for (const auto& f : frames) table.add_frame(f.probs, f.label);
  return evaluate(table);
}

inline EvalReport evaluate_windows(const Model& m, const std::vector<Window>& windows) {
  const auto frames = score_windows(m, windows);
  return evaluate_frames(frames, m.config.K);
}

/// Per-step gate means of one window.
struct GateRow {
  std::size_t window = 0;
  std::ptrdiff_t t = 0;  // -T..0
  double mean_z = 0.0;
  double mean_r = 0.0;
  int relevance = 0;
};

inline std::vector<GateRow> gate_rows(const Model& m, const Window& w, std::size_t window_id) {
  if (!has_update_gate(m.config.variant)) {
    throw ConfigError("variant " + std::string(to_string(m.config.variant)) +
                      " has no reset/update gates to inspect");
  }
  const auto pass = forward(m, w);
  std::vector<GateRow> rows;
  const auto n = static_cast<std::ptrdiff_t>(pass.steps.size());
  for (std::ptrdiff_t s = 0; s < n; ++s) {
    const auto& tr = pass.steps[static_cast<std::size_t>(s)];
    rows.push_back({window_id, s - (n - 1), mean(tr.z.span()), mean(tr.r.span()),
                    w.relevance[static_cast<std::size_t>(s)]});
  }
  return rows;
}

/// Mean update-gate value over relevant and over irrelevant real (unpadded) chunks.
struct GateGap {
  double relevant = 0.0;
  double irrelevant = 0.0;
  std::size_t n_relevant = 0;
  std::size_t n_irrelevant = 0;

  double gap() const { return relevant - irrelevant; }
};

inline GateGap update_gate_gap(const Model& m, const std::vector<Window>& windows) {
  GateGap g;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto rows = gate_rows(m, windows[i], i);
    for (std::size_t s = windows[i].padded; s < rows.size(); ++s) {
      if (rows[s].relevance) {
        g.relevant += rows[s].mean_z;
        ++g.n_relevant;
      } else {
        g.irrelevant += rows[s].mean_z;
        ++g.n_irrelevant;
      }
    }
  }
  if (g.n_relevant) g.relevant /= static_cast<double>(g.n_relevant);
  if (g.n_irrelevant) g.irrelevant /= static_cast<double>(g.n_irrelevant);
  return g;
}

}  // namespace idn
