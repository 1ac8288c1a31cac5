#pragma once

// The recurrent network over a window of T past chunks plus the current one.
//
// The cell runs from the oldest chunk to the newest starting from a zero
// state. One classification head p_t = softmax(W_hp h_t + b_hp) is shared by
// every step; its output at the newest chunk is the network prediction p_0.
// Variants that read the current input receive the newest chunk's features as
// x_0 at every step.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "idn/cells.hpp"
#include "idn/datagen.hpp"
#include "idn/kv.hpp"
#include "idn/losses.hpp"

namespace idn {

struct IdnConfig {
  std::size_t T = 15;  // past chunks per window
  std::size_t N = 6;   // frames per chunk (metadata)
  std::size_t K = 20;  // action classes; background is class 0
  std::size_t d_x = 3072;
  std::size_t d_a = 0;  // appearance / motion split of d_x, 0 when undeclared
  std::size_t d_m = 0;
  std::size_t hidden = 512;
  std::size_t embed = 512;
  Variant variant = Variant::idu;
  bool bias = true;
  double lr = 0.01;
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  LossConfig loss;

  std::size_t classes() const { return K + 1; }

  CellDims cell_dims() const { return {d_x, hidden, embed, K + 1, bias}; }

  void validate() const {
    if (K == 0) throw ConfigError("K must be > 0");
    if (d_x == 0) throw ConfigError("d_x must be > 0");
    if (hidden == 0) throw ConfigError("hidden must be > 0");
    if (variant == Variant::idu && embed == 0) throw ConfigError("embed must be > 0");
    if ((d_a != 0 || d_m != 0) && d_a + d_m != d_x) {
      throw ConfigError("d_x (" + std::to_string(d_x) + ") must equal d_a + d_m (" +
                        std::to_string(d_a) + " + " + std::to_string(d_m) + ")");
    }
    if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
    if (batch_size == 0) throw ConfigError("batch_size must be > 0");
    loss.validate();
  }

  /// Key/value pairs in a fixed order; doubles in shortest round-trip form.
  std::vector<std::pair<std::string, std::string>> to_kv() const {
    return {{"T", std::to_string(T)},
            {"N", std::to_string(N)},
            {"K", std::to_string(K)},
            {"d_x", std::to_string(d_x)},
            {"d_a", std::to_string(d_a)},
            {"d_m", std::to_string(d_m)},
            {"hidden", std::to_string(hidden)},
            {"embed", std::to_string(embed)},
            {"variant", std::string(to_string(variant))},
            {"bias", bias ? "true" : "false"},
            {"lr", kv::format_double(lr)},
            {"batch_size", std::to_string(batch_size)},
            {"epochs", std::to_string(epochs)},
            {"seed", std::to_string(seed)},
            {"alpha", kv::format_double(loss.alpha)},
            {"margin", kv::format_double(loss.margin)}};
  }

  /// Applies one key; returns false when the key is not a network setting.
  bool set(std::string_view key, std::string_view value) {
    if (key == "T") T = kv::parse_size(key, value);
    else if (key == "N") N = kv::parse_size(key, value);
    else if (key == "K") K = kv::parse_size(key, value);
    else if (key == "d_x") d_x = kv::parse_size(key, value);
    else if (key == "d_a") d_a = kv::parse_size(key, value);
    else if (key == "d_m") d_m = kv::parse_size(key, value);
    else if (key == "hidden") hidden = kv::parse_size(key, value);
    else if (key == "embed") embed = kv::parse_size(key, value);
    else if (key == "variant") variant = parse_variant(value);
    else if (key == "bias") bias = kv::parse_bool(key, value);
    else if (key == "lr") lr = kv::parse_double(key, value);
    else if (key == "batch_size") batch_size = kv::parse_size(key, value);
    else if (key == "epochs") epochs = kv::parse_size(key, value);
    else if (key == "seed") seed = kv::parse_u64(key, value);
    else if (key == "alpha") loss.alpha = kv::parse_double(key, value);
    else if (key == "margin") loss.margin = kv::parse_double(key, value);
    else return false;
    return true;
  }
};

struct Model {
  IdnConfig config;
  CellParams cell;
  Mat W_hp;
  Vec b_hp;
  std::uint64_t step = 0;  // SGD updates applied so far

  /// Zero-valued parameters with the shapes `config` implies.
  static Model shaped(const IdnConfig& config) {
    config.validate();
    Model m;
    m.config = config;
    m.cell = shaped_cell(config.variant, config.cell_dims());
    m.W_hp = Mat(config.classes(), config.hidden);
    m.b_hp = config.bias ? Vec(config.classes()) : Vec();
    return m;
  }

  /// Glorot-initialised weights and zero biases drawn from `config.seed`.
  static Model initialized(const IdnConfig& config) {
    Model m = shaped(config);
    Rng rng = Rng(config.seed).fork(0x1D1);
    init_params(m, rng);
    return m;
  }

  Model zeros_like() const {
    Model m = shaped(config);
    m.step = step;
    return m;
  }

  template <class F>
  void visit(F&& f) {
    visit_params(cell, f);
    f(view("W_hp", W_hp));
    if (!b_hp.empty()) f(view("b_hp", b_hp));
  }
  template <class F>
  void visit(F&& f) const {
    visit_params(cell, f);
    f(view("W_hp", W_hp));
    if (!b_hp.empty()) f(view("b_hp", b_hp));
  }

  std::vector<ParamView> param_views() {
    std::vector<ParamView> out;
    visit([&](ParamView v) { out.push_back(v); });
    return out;
  }
  std::vector<ConstParamView> param_views() const {
    std::vector<ConstParamView> out;
    visit([&](ConstParamView v) { out.push_back(v); });
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    visit([&](ConstParamView v) { n += v.values.size(); });
    return n;
  }
};

/// Everything one forward pass over a window produces.
struct WindowPass {
  std::vector<StepTrace> steps;    // oldest first; the last is t = 0
  std::vector<Vec> probs;          // head output p_t per step
  std::vector<Embedding> embedded;  // idu only: embedding of every step's chunk

  const Vec& p0() const { return probs.back(); }
};

inline void check_window(const IdnConfig& cfg, const Window& w) {
  if (w.steps() != cfg.T + 1) {
    throw ShapeError("window has " + std::to_string(w.steps()) + " chunks, model expects T+1 = " +
                     std::to_string(cfg.T + 1));
  }
  if (w.labels.size() != w.steps()) throw ShapeError("window labels and features differ in length");
  for (std::size_t t = 0; t < w.steps(); ++t) {
    if (w.features[t].size() != cfg.d_x) {
      throw ShapeError("window chunk " + std::to_string(t) + " has " +
                       std::to_string(w.features[t].size()) + " features, model expects d_x = " +
                       std::to_string(cfg.d_x));
    }
    if (w.labels[t] > cfg.K) {
      throw DataError("window label " + std::to_string(w.labels[t]) + " exceeds K = " +
                      std::to_string(cfg.K));
    }
  }
}

inline Vec head(const Model& m, const Vec& h) {
  Vec logits = m.b_hp.empty() ? Vec(m.W_hp.rows()) : m.b_hp;
  matvec_acc(m.W_hp, h.span(), logits.span());
  return softmax(logits);
}

/// Runs the recurrence over the window. `overrides`, when given, holds one
/// optional gate override per step.
inline WindowPass forward(const Model& m, const Window& w,
                          const std::vector<GateOverride>* overrides = nullptr) {
  check_window(m.config, w);
  const std::size_t n = w.steps();
  const Vec& x0 = w.features.back();
  WindowPass pass;
  pass.steps.reserve(n);
  pass.probs.reserve(n);
  CellState state{Vec(m.config.hidden),
                  m.config.variant == Variant::lstm ? Vec(m.config.hidden) : Vec()};

  const IduParams* idu = std::get_if<IduParams>(&m.cell);
  if (idu != nullptr) {
    pass.embedded.reserve(n);
    for (const auto& x : w.features) pass.embedded.push_back(idu_embed(*idu, x));
  }
  for (std::size_t t = 0; t < n; ++t) {
    const GateOverride* ov = overrides != nullptr ? &(*overrides)[t] : nullptr;
    StepTrace tr = idu != nullptr ? idu_forward_embedded(*idu, state.h, w.features[t], x0,
                                                         pass.embedded[t], pass.embedded.back(), ov)
                                  : cell_forward(m.cell, state, w.features[t], x0, ov);
    state = next_state(tr);
    pass.probs.push_back(head(m, tr.h));
    pass.steps.push_back(std::move(tr));
  }
  return pass;
}

/// Window loss, and when `grad` is non-null its gradient accumulated into it.
inline LossTerms loss_and_gradient(const Model& m, const Window& w, Model* grad = nullptr,
                                   const std::vector<GateOverride>* overrides = nullptr) {
  const WindowPass pass = forward(m, w, overrides);
  const std::size_t n = pass.steps.size();
  const bool embedded = !pass.embedded.empty();

  std::vector<StepOutputs> outs(n);
  for (std::size_t t = 0; t < n; ++t) {
    outs[t].p = &pass.probs[t];
    outs[t].label = w.labels[t];
    if (embedded) {
      outs[t].x_e = &pass.embedded[t].x_e;
      outs[t].p_e = &pass.embedded[t].p_e;
    }
  }
  CombinedGrads lg;
  const LossTerms terms = combined_loss(outs, m.config.loss, grad != nullptr ? &lg : nullptr);
  if (grad == nullptr) return terms;

  const std::size_t H = m.config.hidden;
  Vec dh_next(H);
  Vec dc_next = m.config.variant == Variant::lstm ? Vec(H) : Vec();
  std::vector<Vec> de;
  if (embedded) de = std::move(lg.dx_e);

  for (std::size_t t = n; t-- > 0;) {
    const StepTrace& tr = pass.steps[t];
    outer_acc(lg.dlogits[t].span(), tr.h.span(), grad->W_hp);
    if (!grad->b_hp.empty()) axpy(1.0, lg.dlogits[t].span(), grad->b_hp.span());
    Vec dh = std::move(dh_next);
    matvec_t_acc(m.W_hp, lg.dlogits[t].span(), dh.span());
    if (embedded) {
      auto core = idu_core_backward(std::get<IduParams>(m.cell), tr, dh,
                                    std::get<IduParams>(grad->cell));
      dh_next = std::move(core.dh_prev);
      axpy(1.0, core.dx_te.span(), de[t].span());
      axpy(1.0, core.dx_0e.span(), de[n - 1].span());
    } else {
      auto sg = cell_backward(m.cell, tr, dh, dc_next, grad->cell);
      dh_next = std::move(sg.dh_prev);
      dc_next = std::move(sg.dc_prev);
    }
  }
  if (embedded) {
    const auto& p = std::get<IduParams>(m.cell);
    auto& g = std::get<IduParams>(grad->cell);
    for (std::size_t t = 0; t < n; ++t) {
      idu_embed_backward(p, w.features[t], pass.embedded[t].x_e, std::move(de[t]),
                         lg.dlogits_pe[t], g);
    }
  }
  return terms;
}

/// theta <- theta - lr * scale * grad, entry by entry.
inline void sgd_update(Model& m, const Model& grad, double lr, double scale = 1.0) {
  auto params = m.param_views();
  const auto grads = grad.param_views();
  if (params.size() != grads.size()) throw ShapeError("sgd_update: parameter sets differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].values.size() != grads[i].values.size()) {
      throw ShapeError("sgd_update: shape mismatch for " + std::string(params[i].name));
    }
    for (std::size_t k = 0; k < params[i].values.size(); ++k) {
      params[i].values[k] -= lr * (scale * grads[i].values[k]);
    }
  }
}

/// Online prediction: one p_0 per arriving chunk, from the newest T + 1
/// chunks seen so far, left-padded with zero features while warming up.
class StreamPredictor {
 public:
  explicit StreamPredictor(const Model& model) : model_(model) {}

  Vec push(const Vec& features) {
    if (features.size() != model_.config.d_x) {
      throw ShapeError("stream chunk has " + std::to_string(features.size()) +
                       " features, model expects d_x = " + std::to_string(model_.config.d_x));
    }
    recent_.push_back(features);
    if (recent_.size() > model_.config.T + 1) recent_.pop_front();
    return forward(model_, current_window()).p0();
  }

  /// The padded window the last prediction was made from.
  Window current_window() const {
    Window w;
    const std::size_t n = model_.config.T + 1;
    w.padded = n - recent_.size();
    w.features.assign(w.padded, Vec(model_.config.d_x));
    w.features.insert(w.features.end(), recent_.begin(), recent_.end());
    w.labels.assign(n, 0);
    w.relevance = relevance_flags(w.labels);
    return w;
  }

 private:
  const Model& model_;
  std::deque<Vec> recent_;
};

template <class Range>
std::vector<Vec> predict_stream(const Model& model, const Range& chunks) {
  StreamPredictor predictor(model);
  std::vector<Vec> out;
  for (const auto& c : chunks) out.push_back(predictor.push(c));
  return out;
}

}  // namespace idn
