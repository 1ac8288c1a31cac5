#pragma once

// Cross-entropy, pairwise contrastive loss, and the multi-task combination
// used to train the network.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "idn/numerics.hpp"

namespace idn {

/// Lower bound applied to probabilities before taking logs.
inline constexpr double kLogFloor = 1e-12;

struct LossConfig {
  double alpha = 0.3;   // weight of the embedding terms
  double margin = 1.0;  // contrastive hinge margin on squared distance

  void validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(margin > 0.0)) throw ConfigError("margin must be > 0");
  }
};

/// Index of the hot entry of a one-hot label vector.
inline std::size_t one_hot_index(const Vec& y) {
  std::size_t hot = y.size();
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] == 1.0) {
      if (hot != y.size()) throw DataError("label vector has more than one hot entry");
      hot = k;
    } else if (y[k] != 0.0) {
      throw DataError("label vector entries must be 0 or 1");
    }
  }
  if (hot == y.size()) throw DataError("label vector has no hot entry");
  return hot;
}

inline Vec one_hot(std::size_t k, std::size_t n) {
  if (k >= n) throw DataError("label " + std::to_string(k) + " out of range for " +
                              std::to_string(n) + " classes");
  Vec y(n);
  y[k] = 1.0;
  return y;
}

struct CrossEntropy {
  double loss = 0.0;
  Vec dlogits;  // p - y, the gradient with respect to the softmax logits
};

/// -log p[label], with p floored at kLogFloor.
inline CrossEntropy cross_entropy(const Vec& p, std::size_t label) {
  if (label >= p.size()) {
    throw ShapeError("cross_entropy: label " + std::to_string(label) + " but " +
                     std::to_string(p.size()) + " probabilities");
  }
  CrossEntropy ce{-std::log(std::max(p[label], kLogFloor)), p};
  ce.dlogits[label] -= 1.0;
  return ce;
}

inline CrossEntropy cross_entropy(const Vec& p, const Vec& y) {
  if (p.size() != y.size()) {
    throw ShapeError("cross_entropy: " + std::to_string(p.size()) + " probabilities but " +
                     std::to_string(y.size()) + " labels");
  }
  return cross_entropy(p, one_hot_index(y));
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("squared_distance: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct Contrastive {
  double loss = 0.0;
  Vec da, db;
};

/// Same label: D^2(a, b). Different labels: max(0, margin - D^2(a, b)).
/// The hinge is active only for D^2 < margin; at and beyond it loss and gradient are 0.
inline Contrastive contrastive_loss(const Vec& a, const Vec& b, bool same_label, double margin) {
  const double d2 = squared_distance(a.span(), b.span());
  Contrastive out{0.0, Vec(a.size()), Vec(b.size())};
  double scale = 0.0;  // dL/dD^2
  if (same_label) {
    out.loss = d2;
    scale = 1.0;
  } else if (d2 < margin) {
    out.loss = margin - d2;
    scale = -1.0;
  }
  if (scale != 0.0) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      out.da[i] = scale * 2.0 * (a[i] - b[i]);
      out.db[i] = -out.da[i];
    }
  }
  return out;
}

inline Contrastive contrastive_loss(const Vec& a, const Vec& b, std::size_t label_a,
                                    std::size_t label_b, double margin) {
  return contrastive_loss(a, b, label_a == label_b, margin);
}

/// Loss of one window broken into its terms; total = action + alpha * (embed + contrast).
struct LossTerms {
  double total = 0.0;
  double action = 0.0;
  double embed = 0.0;
  double contrast = 0.0;

  LossTerms& operator+=(const LossTerms& o) {
    total += o.total;
    action += o.action;
    embed += o.embed;
    contrast += o.contrast;
    return *this;
  }
  LossTerms scaled(double s) const { return {total * s, action * s, embed * s, contrast * s}; }
};

/// Per-step quantities a window loss is computed from. Embedding fields are
/// empty for variants without an embedding module.
struct StepOutputs {
  const Vec* p = nullptr;    // head distribution p_t
  const Vec* x_e = nullptr;  // embedding x_t^e
  const Vec* p_e = nullptr;  // embedding distribution p_t^e
  std::size_t label = 0;
};

/// Gradients produced by `combined_loss`, indexed like the input steps.
struct CombinedGrads {
  std::vector<Vec> dlogits;     // head logits per step
  std::vector<Vec> dx_e;        // embedding per step (includes the pull on x_0^e at the last step)
  std::vector<Vec> dlogits_pe;  // embedding classifier logits per step
};

/// Window loss over steps t = -T..0 (the last entry is t = 0).
///
///   action   = sum_t CE(p_t, y_t)
///   embed    = mean_{t<0} CE(p_t^e, y_t) + CE(p_0^e, y_0)
///   contrast = mean_{t<0} C(x_t^e, x_0^e) + C(x_0^e, x_0^e)
///
/// The t = 0 contrastive self-pair is identically 0. Means over an empty set
/// (T = 0) are 0.
inline LossTerms combined_loss(std::span<const StepOutputs> steps, const LossConfig& cfg,
                               CombinedGrads* grads = nullptr) {
  if (steps.empty()) throw DataError("combined_loss: no steps");
  const std::size_t n = steps.size();
  const bool embedded = steps.back().x_e != nullptr;
  for (const auto& s : steps) {
    if (s.p == nullptr) throw DataError("combined_loss: missing head output");
    if (embedded && (s.x_e == nullptr || s.p_e == nullptr)) {
      throw DataError("combined_loss: missing embedding output");
    }
  }
  if (grads != nullptr) {
    grads->dlogits.assign(n, Vec());
    grads->dx_e.assign(n, Vec());
    grads->dlogits_pe.assign(n, Vec());
  }

  LossTerms terms;
  for (std::size_t t = 0; t < n; ++t) {
    auto ce = cross_entropy(*steps[t].p, steps[t].label);
    terms.action += ce.loss;
    if (grads != nullptr) grads->dlogits[t] = std::move(ce.dlogits);
  }

  if (embedded) {
    const std::size_t past = n - 1;
    const double w_past = past > 0 ? 1.0 / static_cast<double>(past) : 0.0;
    const StepOutputs& now = steps.back();
    if (grads != nullptr) {
      for (std::size_t t = 0; t < n; ++t) grads->dx_e[t] = Vec(steps[t].x_e->size());
    }
    for (std::size_t t = 0; t < n; ++t) {
      const double w = t + 1 == n ? 1.0 : w_past;
      auto ce = cross_entropy(*steps[t].p_e, steps[t].label);
      terms.embed += w * ce.loss;
      if (t + 1 < n) {
        auto c = contrastive_loss(*steps[t].x_e, *now.x_e, steps[t].label, now.label, cfg.margin);
        terms.contrast += w * c.loss;
        if (grads != nullptr) {
          axpy(cfg.alpha * w, c.da.span(), grads->dx_e[t].span());
          axpy(cfg.alpha * w, c.db.span(), grads->dx_e[n - 1].span());
        }
      }
      if (grads != nullptr) {
        for (double& v : ce.dlogits) v *= cfg.alpha * w;
        grads->dlogits_pe[t] = std::move(ce.dlogits);
      }
    }
  }
  terms.total = terms.action + cfg.alpha * (terms.embed + terms.contrast);
  return terms;
}

}  // namespace idn
