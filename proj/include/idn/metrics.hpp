#pragma once

// Frame-level average precision (AP), calibrated average precision (cAP),
// their means over action classes, and mcAP restricted to portions of action
// instances.
//
// Rows are ranked by descending score. Rows with equal scores form one tie
// group that is crossed as a unit: every positive in the group is credited
// with the precision measured after the whole group. Results are therefore
// independent of input row order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "idn/datagen.hpp"
#include "idn/kv.hpp"
#include "idn/numerics.hpp"

namespace idn {

struct ScoreRow {
  double score = 0.0;
  bool positive = false;
};

namespace detail {

struct RankCounts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline RankCounts count_rows(std::span<const ScoreRow> rows) {
  RankCounts c;
  for (const auto& r : rows) {
    if (std::isnan(r.score)) throw DataError("score table contains NaN");
    (r.positive ? c.positives : c.negatives) += 1;
  }
  if (c.positives == 0) throw DataError("class has no positive rows; AP is undefined");
  return c;
}

/// Sum over positives of prec(TP, FP) at the end of their tie group, / N_P.
template <class Precision>
double ranked_mean_precision(std::span<const ScoreRow> rows, std::size_t positives,
                             Precision&& precision) {
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rows[a].score > rows[b].score; });
  double tp = 0.0, fp = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double group_tp = 0.0;
    while (j < order.size() && rows[order[j]].score == rows[order[i]].score) {
      if (rows[order[j]].positive) group_tp += 1.0;
      else fp += 1.0;
      ++j;
    }
    tp += group_tp;
    if (group_tp > 0.0) sum += group_tp * precision(tp, fp);
    i = j;
  }
  return sum / static_cast<double>(positives);
}

}  // namespace detail

inline double average_precision(std::span<const ScoreRow> rows) {
  const auto c = detail::count_rows(rows);
  return detail::ranked_mean_precision(rows, c.positives,
                                       [](double tp, double fp) { return tp / (tp + fp); });
}

/// cPrec(i) = w TP(i) / (w TP(i) + FP(i)); w defaults to #negatives / #positives.
inline double calibrated_average_precision(std::span<const ScoreRow> rows,
                                           std::optional<double> w = std::nullopt) {
  const auto c = detail::count_rows(rows);
  const double ratio = w.value_or(static_cast<double>(c.negatives) /
                                  static_cast<double>(c.positives));
  if (!(ratio > 0.0) || !std::isfinite(ratio)) {
    // No negatives: every cut-off is pure.
    if (c.negatives == 0) return 1.0;
    throw DataError("calibration ratio must be positive");
  }
  return detail::ranked_mean_precision(rows, c.positives, [ratio](double tp, double fp) {
    return ratio * tp / (ratio * tp + fp);
  });
}

inline double mean_over_classes(std::span<const double> values) {
  if (values.empty()) throw DataError("no scored action classes to average");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

/// Per-class rows, index 0 = background. Only classes 1..K enter the means.
struct ScoreTable {
  std::size_t num_classes = 0;  // K
  std::vector<std::vector<ScoreRow>> rows;

  explicit ScoreTable(std::size_t K = 0) : num_classes(K), rows(K + 1) {}

  /// Adds one frame: its class distribution and ground-truth label.
  void add_frame(const Vec& probs, std::size_t label) {
    if (probs.size() != num_classes + 1) {
      throw ShapeError("frame has " + std::to_string(probs.size()) + " probabilities, expected " +
                       std::to_string(num_classes + 1));
    }
    for (std::size_t k = 0; k <= num_classes; ++k) rows[k].push_back({probs[k], label == k});
  }
};

struct ClassScore {
  std::size_t class_id = 0;
  double ap = 0.0;
  double cap = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

struct EvalReport {
  std::vector<ClassScore> classes;
  std::vector<std::size_t> skipped;  // action classes without positives
  double map = 0.0;
  double mcap = 0.0;
};

inline EvalReport evaluate(const ScoreTable& table) {
  EvalReport r;
  std::vector<double> aps, caps;
  for (std::size_t k = 1; k <= table.num_classes; ++k) {
    const auto& rows = table.rows[k];
    const auto pos = static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [](const ScoreRow& x) { return x.positive; }));
    if (pos == 0) {
      r.skipped.push_back(k);
      continue;
    }
    ClassScore c{k, average_precision(rows), calibrated_average_precision(rows), pos,
                 rows.size() - pos};
    aps.push_back(c.ap);
    caps.push_back(c.cap);
    r.classes.push_back(c);
  }
  r.map = mean_over_classes(aps);
  r.mcap = mean_over_classes(caps);
  return r;
}

// ---------------------------------------------------------------------------
// Portion-of-action protocol

/// One scored frame (chunk) of an online run.
struct FrameScore {
  std::size_t video = 0;
  std::size_t label = 0;
  Vec probs;
};

inline constexpr std::size_t kDeciles = 10;

/// Decile of frame i within an action instance of n frames: floor(10 i / n).
inline std::size_t decile_of(std::size_t i, std::size_t n) { return (kDeciles * i) / n; }

/// Decile per frame for frames inside action instances (maximal same-label
/// action runs within one video); background frames get no decile.
inline std::vector<std::optional<std::size_t>> instance_deciles(std::span<const FrameScore> frames) {
  std::vector<std::optional<std::size_t>> out(frames.size());
  for (std::size_t i = 0; i < frames.size();) {
    std::size_t j = i + 1;
    while (j < frames.size() && frames[j].video == frames[i].video &&
           frames[j].label == frames[i].label) {
      ++j;
    }
    if (frames[i].label != 0) {
      for (std::size_t f = i; f < j; ++f) out[f] = decile_of(f - i, j - i);
    }
    i = j;
  }
  return out;
}

struct PortionResult {
  double mcap = 0.0;
  std::vector<std::size_t> skipped;  // classes with no positive frame in the decile
};

/// mcAP where the positives of class k are its frames lying in decile `d` of
/// their instance. Every frame not labelled k stays a negative.
inline PortionResult portion_mcap(std::span<const FrameScore> frames, std::size_t K,
                                  std::size_t d) {
  if (d >= kDeciles) throw DataError("decile must be in 0..9");
  const auto deciles = instance_deciles(frames);
  PortionResult out;
  std::vector<double> caps;
  for (std::size_t k = 1; k <= K; ++k) {
    std::vector<ScoreRow> rows;
    bool any_positive = false;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (frames[i].probs.size() != K + 1) throw ShapeError("frame probability length mismatch");
      if (frames[i].label != k) {
        rows.push_back({frames[i].probs[k], false});
      } else if (deciles[i] == d) {
        rows.push_back({frames[i].probs[k], true});
        any_positive = true;
      }
    }
    if (!any_positive) {
      out.skipped.push_back(k);
      continue;
    }
    caps.push_back(calibrated_average_precision(rows));
  }
  out.mcap = caps.empty() ? 0.0 : mean_over_classes(caps);
  return out;
}

// ---------------------------------------------------------------------------
// Score files and reports
//
// Score file: tab-separated rows  frame_id <TAB> class_id <TAB> probability <TAB> gt_label
// where gt_label is the frame's ground-truth class; the row is a positive for
// class_id exactly when gt_label == class_id.

inline void write_scores(std::ostream& os, std::span<const FrameScore> frames) {
  for (std::size_t i = 0; i < frames.size(); ++i) {
    for (std::size_t k = 0; k < frames[i].probs.size(); ++k) {
      os << i << '\t' << k << '\t' << kv::format_double(frames[i].probs[k]) << '\t'
         << frames[i].label << '\n';
    }
  }
}

inline ScoreTable read_scores(const std::filesystem::path& file, std::size_t K) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open score file " + file.string());
  ScoreTable table(K);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty()) continue;
    const auto f = detail::split_tabs(line);
    std::size_t frame = 0, cls = 0, gt = 0;
    double p = 0.0;
    if (f.size() != 4 || !detail::parse_number(f[0], frame) || !detail::parse_number(f[1], cls) ||
        !detail::parse_number(f[2], p) || !detail::parse_number(f[3], gt)) {
      throw DataError(detail::where(file, line_no) +
                      ": expected frame_id, class_id, probability, gt_label");
    }
    if (cls > K || gt > K) {
      throw DataError(detail::where(file, line_no) + ": class id out of range 0.." +
                      std::to_string(K));
    }
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DataError(detail::where(file, line_no) + ": probability outside [0, 1]");
    }
    table.rows[cls].push_back({p, gt == cls});
  }
  return table;
}

inline void write_report_csv(std::ostream& os, const EvalReport& r) {
  os << "class,AP,cAP\n";
  for (const auto& c : r.classes) {
    os << c.class_id << ',' << kv::format_double(c.ap) << ',' << kv::format_double(c.cap) << '\n';
  }
  os << "mean," << kv::format_double(r.map) << ',' << kv::format_double(r.mcap) << '\n';
}

}  // namespace idn
