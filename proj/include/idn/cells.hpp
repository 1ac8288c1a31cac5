#pragma once

// Recurrent cells with exact reverse-mode gradients.
//
// Notation used in comments: h is the previous hidden state, x the chunk
// feature at the current step, x0 the feature of the newest chunk in the
// window, cand the candidate state.
//
//   simple  h' = tanh(W_xh x + W_hh h + b_h)
//   lstm    i, f, o = sigmoid(W_x* x + W_h* h + b_*), g = tanh(W_xg x + W_hg h + b_g)
//           c' = f*c + i*g,  h' = o*tanh(c')
//   gru     r = sigmoid(W_hr h + W_xr x + b_r),  z = sigmoid(W_xz x + W_hz h + b_z)
//           cand = tanh(W_xh x + W_hh (r*h) + b_h),  h' = (1-z)*h + z*cand
//   gru-ci  as gru, but r = sigmoid(W_hr h + W_x0r x0 + b_r) and
//           z = sigmoid(W_xtz x + W_x0z x0 + b_z); candidate input weight is W_xth
//   idu     gru-ci applied to embeddings e = relu(W_xe x + b_e) of x and x0.
//           The embedding classifier pe = softmax(W_ep e + b_ep) is owned by
//           the cell; both paths share W_xe and W_ep.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>

#include "idn/numerics.hpp"

namespace idn {

enum class Variant { simple, lstm, gru, gru_ci, idu };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::simple: return "simple";
    case Variant::lstm: return "lstm";
    case Variant::gru: return "gru";
    case Variant::gru_ci: return "gru-ci";
    case Variant::idu: return "idu";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "simple") return Variant::simple;
  if (s == "lstm") return Variant::lstm;
  if (s == "gru") return Variant::gru;
  if (s == "gru-ci") return Variant::gru_ci;
  if (s == "idu") return Variant::idu;
  throw ConfigError("unknown variant '" + std::string(s) +
                    "' (expected simple, lstm, gru, gru-ci or idu)");
}

inline constexpr bool uses_current_input(Variant v) {
  return v == Variant::gru_ci || v == Variant::idu;
}

inline constexpr bool has_update_gate(Variant v) {
  return v == Variant::gru || v == Variant::gru_ci || v == Variant::idu;
}

struct CellDims {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t embed = 0;    // idu only
  std::size_t classes = 0;  // K + 1, idu only (embedding classifier)
  bool bias = true;
};

// ---------------------------------------------------------------------------
// Parameter sets

namespace detail {
inline Vec bias_vec(std::size_t n, bool on) { return on ? Vec(n) : Vec(); }

template <class V, class F>
void visit_bias(std::string_view name, V& b, F& f) {
  if (!b.empty()) f(view(name, b));
}
}  // namespace detail

struct SimpleParams {
  Mat W_xh, W_hh;
  Vec b_h;

  static SimpleParams shaped(const CellDims& d) {
    return {Mat(d.hidden, d.input), Mat(d.hidden, d.hidden), detail::bias_vec(d.hidden, d.bias)};
  }
  template <class Self, class F>
  static void visit_impl(Self& s, F&& f) {
    f(view("W_xh", s.W_xh));
    f(view("W_hh", s.W_hh));
    detail::visit_bias("b_h", s.b_h, f);
  }
  template <class F> void visit(F&& f) { visit_impl(*this, f); }
  template <class F> void visit(F&& f) const { visit_impl(*this, f); }
};

struct LstmParams {
  Mat W_xi, W_hi, W_xf, W_hf, W_xo, W_ho, W_xg, W_hg;
  Vec b_i, b_f, b_o, b_g;

  static LstmParams shaped(const CellDims& d) {
    const auto x = [&] { return Mat(d.hidden, d.input); };
    const auto h = [&] { return Mat(d.hidden, d.hidden); };
    const auto b = [&] { return detail::bias_vec(d.hidden, d.bias); };
    return {x(), h(), x(), h(), x(), h(), x(), h(), b(), b(), b(), b()};
  }
  template <class Self, class F>
  static void visit_impl(Self& s, F&& f) {
    f(view("W_xi", s.W_xi));
    f(view("W_hi", s.W_hi));
    f(view("W_xf", s.W_xf));
    f(view("W_hf", s.W_hf));
    f(view("W_xo", s.W_xo));
    f(view("W_ho", s.W_ho));
    f(view("W_xg", s.W_xg));
    f(view("W_hg", s.W_hg));
    detail::visit_bias("b_i", s.b_i, f);
    detail::visit_bias("b_f", s.b_f, f);
    detail::visit_bias("b_o", s.b_o, f);
    detail::visit_bias("b_g", s.b_g, f);
  }
  template <class F> void visit(F&& f) { visit_impl(*this, f); }
  template <class F> void visit(F&& f) const { visit_impl(*this, f); }
};

struct GruParams {
  Mat W_hr, W_xr, W_xz, W_hz, W_xh, W_hh;
  Vec b_r, b_z, b_h;

  static GruParams shaped(const CellDims& d) {
    const auto x = [&] { return Mat(d.hidden, d.input); };
    const auto h = [&] { return Mat(d.hidden, d.hidden); };
    const auto b = [&] { return detail::bias_vec(d.hidden, d.bias); };
    return {h(), x(), x(), h(), x(), h(), b(), b(), b()};
  }
  template <class Self, class F>
  static void visit_impl(Self& s, F&& f) {
    f(view("W_hr", s.W_hr));
    f(view("W_xr", s.W_xr));
    f(view("W_xz", s.W_xz));
    f(view("W_hz", s.W_hz));
    f(view("W_xh", s.W_xh));
    f(view("W_hh", s.W_hh));
    detail::visit_bias("b_r", s.b_r, f);
    detail::visit_bias("b_z", s.b_z, f);
    detail::visit_bias("b_h", s.b_h, f);
  }
  template <class F> void visit(F&& f) { visit_impl(*this, f); }
  template <class F> void visit(F&& f) const { visit_impl(*this, f); }
};

/// Gates conditioned on the current input: shared by gru-ci and idu.
struct ConditionedCore {
  Mat W_hr, W_x0r, W_xtz, W_x0z, W_xth, W_hh;
  Vec b_r, b_z, b_h;

  static ConditionedCore shaped(std::size_t in, std::size_t hidden, bool bias) {
    const auto x = [&] { return Mat(hidden, in); };
    const auto h = [&] { return Mat(hidden, hidden); };
    const auto b = [&] { return detail::bias_vec(hidden, bias); };
    return {h(), x(), x(), x(), x(), h(), b(), b(), b()};
  }
  template <class Self, class F>
  static void visit_impl(Self& s, F&& f) {
    f(view("W_hr", s.W_hr));
    f(view("W_x0r", s.W_x0r));
    f(view("W_xtz", s.W_xtz));
    f(view("W_x0z", s.W_x0z));
    f(view("W_xth", s.W_xth));
    f(view("W_hh", s.W_hh));
    detail::visit_bias("b_r", s.b_r, f);
    detail::visit_bias("b_z", s.b_z, f);
    detail::visit_bias("b_h", s.b_h, f);
  }
  template <class F> void visit(F&& f) { visit_impl(*this, f); }
  template <class F> void visit(F&& f) const { visit_impl(*this, f); }
};

struct GruCiParams {
  ConditionedCore core;

  static GruCiParams shaped(const CellDims& d) {
    return {ConditionedCore::shaped(d.input, d.hidden, d.bias)};
  }
  template <class F> void visit(F&& f) { core.visit(f); }
  template <class F> void visit(F&& f) const { core.visit(f); }
};

struct IduParams {
  Mat W_xe, W_ep;
  Vec b_e, b_ep;
  ConditionedCore core;

  static IduParams shaped(const CellDims& d) {
    return {Mat(d.embed, d.input), Mat(d.classes, d.embed), detail::bias_vec(d.embed, d.bias),
            detail::bias_vec(d.classes, d.bias), ConditionedCore::shaped(d.embed, d.hidden, d.bias)};
  }
  template <class Self, class F>
  static void visit_impl(Self& s, F&& f) {
    f(view("W_xe", s.W_xe));
    f(view("W_ep", s.W_ep));
    detail::visit_bias("b_e", s.b_e, f);
    detail::visit_bias("b_ep", s.b_ep, f);
    s.core.visit(f);
  }
  template <class F> void visit(F&& f) { visit_impl(*this, f); }
  template <class F> void visit(F&& f) const { visit_impl(*this, f); }
};

using CellParams = std::variant<SimpleParams, LstmParams, GruParams, GruCiParams, IduParams>;

inline Variant variant_of(const CellParams& p) { return static_cast<Variant>(p.index()); }

inline CellParams shaped_cell(Variant v, const CellDims& d) {
  if (v == Variant::idu && (d.embed == 0 || d.classes == 0)) {
    throw ConfigError("idu cell needs embed and classes > 0");
  }
  if (d.input == 0 || d.hidden == 0) throw ConfigError("cell needs input and hidden > 0");
  switch (v) {
    case Variant::simple: return SimpleParams::shaped(d);
    case Variant::lstm: return LstmParams::shaped(d);
    case Variant::gru: return GruParams::shaped(d);
    case Variant::gru_ci: return GruCiParams::shaped(d);
    case Variant::idu: return IduParams::shaped(d);
  }
  throw ConfigError("unreachable variant");
}

template <class F>
void visit_params(CellParams& p, F&& f) {
  std::visit([&](auto& q) { q.visit(f); }, p);
}
template <class F>
void visit_params(const CellParams& p, F&& f) {
  std::visit([&](const auto& q) { q.visit(f); }, p);
}

/// Glorot-uniform weights, zero biases.
template <class P>
void init_params(P& params, Rng& rng) {
  params.visit([&](ParamView v) {
    if (v.name.starts_with("b_")) {
      std::fill(v.values.begin(), v.values.end(), 0.0);
      return;
    }
    const double a = std::sqrt(6.0 / static_cast<double>(v.rows + v.cols));
    for (double& x : v.values) x = rng.uniform(-a, a);
  });
}

inline void init_params(CellParams& params, Rng& rng) {
  std::visit([&](auto& q) { init_params(q, rng); }, params);
}

template <class P>
std::size_t count_params(const P& params) {
  std::size_t n = 0;
  params.visit([&](ConstParamView v) { n += v.values.size(); });
  return n;
}

inline std::size_t count_params(const CellParams& params) {
  return std::visit([](const auto& q) { return count_params(q); }, params);
}

/// Closed-form parameter count of a cell from its dimensions alone.
inline std::size_t closed_form_param_count(Variant v, const CellDims& d) {
  const std::size_t H = d.hidden, D = d.input, E = d.embed, C = d.classes;
  const std::size_t b = d.bias ? 1 : 0;
  switch (v) {
    case Variant::simple: return H * D + H * H + b * H;
    case Variant::lstm: return 4 * (H * D + H * H + b * H);
    case Variant::gru: return 3 * H * D + 3 * H * H + b * 3 * H;
    case Variant::gru_ci: return 4 * H * D + 2 * H * H + b * 3 * H;
    case Variant::idu: return E * D + C * E + 4 * H * E + 2 * H * H + b * (E + C + 3 * H);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Forward

/// Forced gate values for invariant tests. Forced gates receive no gradient.
struct GateOverride {
  std::optional<Vec> r, z;        // gru, gru-ci, idu
  std::optional<Vec> i, f, o;     // lstm
};

struct CellState {
  Vec h;
  Vec c;  // lstm cell state; empty otherwise
};

/// Cached activations of one step. Fields a variant does not use stay empty.
struct StepTrace {
  Variant variant = Variant::gru;
  Vec x_t, x_0;
  Vec x_te, x_0e, p_te, p_0e;  // idu embeddings and their class distributions
  Vec h_prev, r, h_reset, z, cand, h;
  Vec c_prev, i, f, o, g, c, tanh_c;
  bool r_forced = false, z_forced = false;
  bool i_forced = false, f_forced = false, o_forced = false;
};

namespace detail {

inline void require_len(const Vec& v, std::size_t n, std::string_view what) {
  if (v.size() != n) {
    throw ShapeError(std::string(what) + " has length " + std::to_string(v.size()) +
                     ", expected " + std::to_string(n));
  }
}

inline Vec pre_activation(const Vec& bias, std::size_t n) { return bias.empty() ? Vec(n) : bias; }

inline Vec gate(Vec a, const std::optional<Vec>& forced, bool& was_forced, std::string_view name) {
  if (forced) {
    require_len(*forced, a.size(), std::string("forced gate ") + std::string(name));
    was_forced = true;
    return *forced;
  }
  for (double& v : a) v = sigmoid(v);
  return a;
}

inline void tanh_inplace(Vec& a) {
  for (double& v : a) v = std::tanh(v);
}

/// Gated core shared by gru-ci and idu over inputs (u_t, u_0).
inline void conditioned_forward(const ConditionedCore& p, const Vec& h, const Vec& u_t,
                                const Vec& u_0, const GateOverride* ov, StepTrace& tr) {
  const std::size_t H = p.W_hh.rows();
  require_len(h, H, "h_prev");
  Vec a_r = pre_activation(p.b_r, H);
  matvec_acc(p.W_hr, h.span(), a_r.span());
  matvec_acc(p.W_x0r, u_0.span(), a_r.span());
  tr.r = gate(std::move(a_r), ov ? ov->r : std::nullopt, tr.r_forced, "r");

  tr.h_reset = Vec(H);
  for (std::size_t k = 0; k < H; ++k) tr.h_reset[k] = tr.r[k] * h[k];

  Vec a_z = pre_activation(p.b_z, H);
  matvec_acc(p.W_xtz, u_t.span(), a_z.span());
  matvec_acc(p.W_x0z, u_0.span(), a_z.span());
  tr.z = gate(std::move(a_z), ov ? ov->z : std::nullopt, tr.z_forced, "z");

  tr.cand = pre_activation(p.b_h, H);
  matvec_acc(p.W_xth, u_t.span(), tr.cand.span());
  matvec_acc(p.W_hh, tr.h_reset.span(), tr.cand.span());
  tanh_inplace(tr.cand);

  tr.h = Vec(H);
  for (std::size_t k = 0; k < H; ++k) tr.h[k] = (1.0 - tr.z[k]) * h[k] + tr.z[k] * tr.cand[k];
  tr.h_prev = h;
}

}  // namespace detail

inline StepTrace simple_rnn_forward(const SimpleParams& p, const Vec& h_prev, const Vec& x_t) {
  const std::size_t H = p.W_hh.rows();
  detail::require_len(h_prev, H, "h_prev");
  StepTrace tr;
  tr.variant = Variant::simple;
  tr.x_t = x_t;
  tr.h_prev = h_prev;
  tr.h = detail::pre_activation(p.b_h, H);
  matvec_acc(p.W_xh, x_t.span(), tr.h.span());
  matvec_acc(p.W_hh, h_prev.span(), tr.h.span());
  detail::tanh_inplace(tr.h);
  return tr;
}

inline StepTrace lstm_forward(const LstmParams& p, const CellState& s, const Vec& x_t,
                              const GateOverride* ov = nullptr) {
  const std::size_t H = p.W_hi.rows();
  detail::require_len(s.h, H, "h_prev");
  detail::require_len(s.c, H, "c_prev");
  StepTrace tr;
  tr.variant = Variant::lstm;
  tr.x_t = x_t;
  tr.h_prev = s.h;
  tr.c_prev = s.c;
  const auto pre = [&](const Mat& wx, const Mat& wh, const Vec& b) {
    Vec a = detail::pre_activation(b, H);
    matvec_acc(wx, x_t.span(), a.span());
    matvec_acc(wh, s.h.span(), a.span());
    return a;
  };
  tr.i = detail::gate(pre(p.W_xi, p.W_hi, p.b_i), ov ? ov->i : std::nullopt, tr.i_forced, "i");
  tr.f = detail::gate(pre(p.W_xf, p.W_hf, p.b_f), ov ? ov->f : std::nullopt, tr.f_forced, "f");
  tr.o = detail::gate(pre(p.W_xo, p.W_ho, p.b_o), ov ? ov->o : std::nullopt, tr.o_forced, "o");
  tr.g = pre(p.W_xg, p.W_hg, p.b_g);
  detail::tanh_inplace(tr.g);
  tr.c = Vec(H);
  tr.tanh_c = Vec(H);
  tr.h = Vec(H);
  for (std::size_t k = 0; k < H; ++k) {
    tr.c[k] = tr.f[k] * s.c[k] + tr.i[k] * tr.g[k];
    tr.tanh_c[k] = std::tanh(tr.c[k]);
    tr.h[k] = tr.o[k] * tr.tanh_c[k];
  }
  return tr;
}

inline StepTrace gru_forward(const GruParams& p, const Vec& h_prev, const Vec& x_t,
                             const GateOverride* ov = nullptr) {
  const std::size_t H = p.W_hh.rows();
  detail::require_len(h_prev, H, "h_prev");
  StepTrace tr;
  tr.variant = Variant::gru;
  tr.x_t = x_t;
  tr.h_prev = h_prev;

  Vec a_r = detail::pre_activation(p.b_r, H);
  matvec_acc(p.W_hr, h_prev.span(), a_r.span());
  matvec_acc(p.W_xr, x_t.span(), a_r.span());
  tr.r = detail::gate(std::move(a_r), ov ? ov->r : std::nullopt, tr.r_forced, "r");

  tr.h_reset = Vec(H);
  for (std::size_t k = 0; k < H; ++k) tr.h_reset[k] = tr.r[k] * h_prev[k];

  Vec a_z = detail::pre_activation(p.b_z, H);
  matvec_acc(p.W_xz, x_t.span(), a_z.span());
  matvec_acc(p.W_hz, h_prev.span(), a_z.span());
  tr.z = detail::gate(std::move(a_z), ov ? ov->z : std::nullopt, tr.z_forced, "z");

  tr.cand = detail::pre_activation(p.b_h, H);
  matvec_acc(p.W_xh, x_t.span(), tr.cand.span());
  matvec_acc(p.W_hh, tr.h_reset.span(), tr.cand.span());
  detail::tanh_inplace(tr.cand);

  tr.h = Vec(H);
  for (std::size_t k = 0; k < H; ++k) {
    tr.h[k] = (1.0 - tr.z[k]) * h_prev[k] + tr.z[k] * tr.cand[k];
  }
  return tr;
}

inline StepTrace gru_ci_forward(const GruCiParams& p, const Vec& h_prev, const Vec& x_t,
                                const Vec& x_0, const GateOverride* ov = nullptr) {
  StepTrace tr;
  tr.variant = Variant::gru_ci;
  tr.x_t = x_t;
  tr.x_0 = x_0;
  detail::conditioned_forward(p.core, h_prev, x_t, x_0, ov, tr);
  return tr;
}

struct Embedding {
  Vec x_e;  // relu(W_xe x + b_e)
  Vec p_e;  // softmax(W_ep x_e + b_ep)
};

inline Embedding idu_embed(const IduParams& p, const Vec& x) {
  Embedding e;
  e.x_e = detail::pre_activation(p.b_e, p.W_xe.rows());
  matvec_acc(p.W_xe, x.span(), e.x_e.span());
  for (double& v : e.x_e) v = v > 0.0 ? v : 0.0;
  Vec logits = detail::pre_activation(p.b_ep, p.W_ep.rows());
  matvec_acc(p.W_ep, e.x_e.span(), logits.span());
  e.p_e = softmax(logits);
  return e;
}

/// IDU step from embeddings that were already computed for x_t and x_0.
inline StepTrace idu_forward_embedded(const IduParams& p, const Vec& h_prev, const Vec& x_t,
                                      const Vec& x_0, const Embedding& et, const Embedding& e0,
                                      const GateOverride* ov = nullptr) {
  StepTrace tr;
  tr.variant = Variant::idu;
  tr.x_t = x_t;
  tr.x_0 = x_0;
  tr.x_te = et.x_e;
  tr.p_te = et.p_e;
  tr.x_0e = e0.x_e;
  tr.p_0e = e0.p_e;
  detail::conditioned_forward(p.core, h_prev, et.x_e, e0.x_e, ov, tr);
  return tr;
}

inline StepTrace idu_forward(const IduParams& p, const Vec& h_prev, const Vec& x_t,
                             const Vec& x_0, const GateOverride* ov = nullptr) {
  return idu_forward_embedded(p, h_prev, x_t, x_0, idu_embed(p, x_t), idu_embed(p, x_0), ov);
}

/// One step of any variant. `x_0` is ignored by variants that do not use it.
inline StepTrace cell_forward(const CellParams& params, const CellState& s, const Vec& x_t,
                              const Vec& x_0, const GateOverride* ov = nullptr) {
  return std::visit(
      [&](const auto& p) -> StepTrace {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, SimpleParams>) return simple_rnn_forward(p, s.h, x_t);
        else if constexpr (std::is_same_v<P, LstmParams>) return lstm_forward(p, s, x_t, ov);
        else if constexpr (std::is_same_v<P, GruParams>) return gru_forward(p, s.h, x_t, ov);
        else if constexpr (std::is_same_v<P, GruCiParams>) return gru_ci_forward(p, s.h, x_t, x_0, ov);
        else return idu_forward(p, s.h, x_t, x_0, ov);
      },
      params);
}

inline CellState next_state(const StepTrace& tr) { return {tr.h, tr.c}; }

// ---------------------------------------------------------------------------
// Backward
//
// Every backward call *accumulates* into the gradient parameter set, so a
// single accumulator can be threaded through all timesteps of a window.

/// Gradients flowing out of one step. dc_prev is set for lstm only; dx_0 for
/// variants that read x_0.
struct StepGrads {
  Vec dh_prev, dc_prev, dx_t, dx_0;
};

namespace detail {

inline Vec sigmoid_back(const Vec& d, const Vec& s, bool forced) {
  Vec a(s.size());
  if (forced) return a;
  for (std::size_t k = 0; k < s.size(); ++k) a[k] = d[k] * s[k] * (1.0 - s[k]);
  return a;
}

inline void add_bias(Vec& db, const Vec& da) {
  if (!db.empty()) axpy(1.0, da.span(), db.span());
}

struct CoreGrads {
  Vec dh_prev, du_t, du_0;
};

inline CoreGrads conditioned_backward(const ConditionedCore& p, const StepTrace& tr,
                                      const Vec& u_t, const Vec& u_0, const Vec& dh,
                                      ConditionedCore& g) {
  const std::size_t H = tr.h.size();
  CoreGrads out{Vec(H), Vec(u_t.size()), Vec(u_0.size())};
  Vec dz(H), da_c(H);
  for (std::size_t k = 0; k < H; ++k) {
    dz[k] = dh[k] * (tr.cand[k] - tr.h_prev[k]);
    da_c[k] = dh[k] * tr.z[k] * (1.0 - tr.cand[k] * tr.cand[k]);
    out.dh_prev[k] = dh[k] * (1.0 - tr.z[k]);
  }
  outer_acc(da_c.span(), u_t.span(), g.W_xth);
  outer_acc(da_c.span(), tr.h_reset.span(), g.W_hh);
  add_bias(g.b_h, da_c);
  matvec_t_acc(p.W_xth, da_c.span(), out.du_t.span());
  Vec dhr(H);
  matvec_t_acc(p.W_hh, da_c.span(), dhr.span());

  Vec dr(H);
  for (std::size_t k = 0; k < H; ++k) {
    dr[k] = dhr[k] * tr.h_prev[k];
    out.dh_prev[k] += dhr[k] * tr.r[k];
  }

  const Vec da_z = sigmoid_back(dz, tr.z, tr.z_forced);
  outer_acc(da_z.span(), u_t.span(), g.W_xtz);
  outer_acc(da_z.span(), u_0.span(), g.W_x0z);
  add_bias(g.b_z, da_z);
  matvec_t_acc(p.W_xtz, da_z.span(), out.du_t.span());
  matvec_t_acc(p.W_x0z, da_z.span(), out.du_0.span());

  const Vec da_r = sigmoid_back(dr, tr.r, tr.r_forced);
  outer_acc(da_r.span(), tr.h_prev.span(), g.W_hr);
  outer_acc(da_r.span(), u_0.span(), g.W_x0r);
  add_bias(g.b_r, da_r);
  matvec_t_acc(p.W_hr, da_r.span(), out.dh_prev.span());
  matvec_t_acc(p.W_x0r, da_r.span(), out.du_0.span());
  return out;
}

}  // namespace detail

inline StepGrads simple_rnn_backward(const SimpleParams& p, const StepTrace& tr, const Vec& dh,
                                     SimpleParams& g) {
  const std::size_t H = tr.h.size();
  Vec da(H);
  for (std::size_t k = 0; k < H; ++k) da[k] = dh[k] * (1.0 - tr.h[k] * tr.h[k]);
  StepGrads out{Vec(H), {}, Vec(tr.x_t.size()), {}};
  outer_acc(da.span(), tr.x_t.span(), g.W_xh);
  outer_acc(da.span(), tr.h_prev.span(), g.W_hh);
  detail::add_bias(g.b_h, da);
  matvec_t_acc(p.W_xh, da.span(), out.dx_t.span());
  matvec_t_acc(p.W_hh, da.span(), out.dh_prev.span());
  return out;
}

/// `dc` is the gradient arriving at this step's cell state from later steps.
inline StepGrads lstm_backward(const LstmParams& p, const StepTrace& tr, const Vec& dh,
                               const Vec& dc_next, LstmParams& g) {
  const std::size_t H = tr.h.size();
  Vec d_o(H), d_i(H), d_f(H), d_g(H);
  StepGrads out{Vec(H), Vec(H), Vec(tr.x_t.size()), {}};
  for (std::size_t k = 0; k < H; ++k) {
    const double dck = (dc_next.empty() ? 0.0 : dc_next[k]) +
                       dh[k] * tr.o[k] * (1.0 - tr.tanh_c[k] * tr.tanh_c[k]);
    d_o[k] = dh[k] * tr.tanh_c[k];
    d_f[k] = dck * tr.c_prev[k];
    d_i[k] = dck * tr.g[k];
    d_g[k] = dck * tr.i[k] * (1.0 - tr.g[k] * tr.g[k]);
    out.dc_prev[k] = dck * tr.f[k];
  }
  const auto route = [&](const Vec& da, const Mat& wx, const Mat& wh, Mat& gx, Mat& gh, Vec& gb) {
    outer_acc(da.span(), tr.x_t.span(), gx);
    outer_acc(da.span(), tr.h_prev.span(), gh);
    detail::add_bias(gb, da);
    matvec_t_acc(wx, da.span(), out.dx_t.span());
    matvec_t_acc(wh, da.span(), out.dh_prev.span());
  };
  route(detail::sigmoid_back(d_i, tr.i, tr.i_forced), p.W_xi, p.W_hi, g.W_xi, g.W_hi, g.b_i);
  route(detail::sigmoid_back(d_f, tr.f, tr.f_forced), p.W_xf, p.W_hf, g.W_xf, g.W_hf, g.b_f);
  route(detail::sigmoid_back(d_o, tr.o, tr.o_forced), p.W_xo, p.W_ho, g.W_xo, g.W_ho, g.b_o);
  route(d_g, p.W_xg, p.W_hg, g.W_xg, g.W_hg, g.b_g);
  return out;
}

inline StepGrads gru_backward(const GruParams& p, const StepTrace& tr, const Vec& dh,
                              GruParams& g) {
  const std::size_t H = tr.h.size();
  StepGrads out{Vec(H), {}, Vec(tr.x_t.size()), {}};
  Vec dz(H), da_c(H);
  for (std::size_t k = 0; k < H; ++k) {
    dz[k] = dh[k] * (tr.cand[k] - tr.h_prev[k]);
    da_c[k] = dh[k] * tr.z[k] * (1.0 - tr.cand[k] * tr.cand[k]);
    out.dh_prev[k] = dh[k] * (1.0 - tr.z[k]);
  }
  outer_acc(da_c.span(), tr.x_t.span(), g.W_xh);
  outer_acc(da_c.span(), tr.h_reset.span(), g.W_hh);
  detail::add_bias(g.b_h, da_c);
  matvec_t_acc(p.W_xh, da_c.span(), out.dx_t.span());
  Vec dhr(H);
  matvec_t_acc(p.W_hh, da_c.span(), dhr.span());

  Vec dr(H);
  for (std::size_t k = 0; k < H; ++k) {
    dr[k] = dhr[k] * tr.h_prev[k];
    out.dh_prev[k] += dhr[k] * tr.r[k];
  }

  const Vec da_z = detail::sigmoid_back(dz, tr.z, tr.z_forced);
  outer_acc(da_z.span(), tr.x_t.span(), g.W_xz);
  outer_acc(da_z.span(), tr.h_prev.span(), g.W_hz);
  detail::add_bias(g.b_z, da_z);
  matvec_t_acc(p.W_xz, da_z.span(), out.dx_t.span());
  matvec_t_acc(p.W_hz, da_z.span(), out.dh_prev.span());

  const Vec da_r = detail::sigmoid_back(dr, tr.r, tr.r_forced);
  outer_acc(da_r.span(), tr.h_prev.span(), g.W_hr);
  outer_acc(da_r.span(), tr.x_t.span(), g.W_xr);
  detail::add_bias(g.b_r, da_r);
  matvec_t_acc(p.W_hr, da_r.span(), out.dh_prev.span());
  matvec_t_acc(p.W_xr, da_r.span(), out.dx_t.span());
  return out;
}

inline StepGrads gru_ci_backward(const GruCiParams& p, const StepTrace& tr, const Vec& dh,
                                 GruCiParams& g) {
  auto core = detail::conditioned_backward(p.core, tr, tr.x_t, tr.x_0, dh, g.core);
  return {std::move(core.dh_prev), {}, std::move(core.du_t), std::move(core.du_0)};
}

/// Gradients of an IDU step with respect to h_prev and the two embeddings.
struct IduCoreGrads {
  Vec dh_prev, dx_te, dx_0e;
};

inline IduCoreGrads idu_core_backward(const IduParams& p, const StepTrace& tr, const Vec& dh,
                                      IduParams& g) {
  auto core = detail::conditioned_backward(p.core, tr, tr.x_te, tr.x_0e, dh, g.core);
  return {std::move(core.dh_prev), std::move(core.du_t), std::move(core.du_0)};
}

/// Backward through x_e = relu(W_xe x + b_e) and, when `dlogits_pe` is non-empty,
/// through the embedding classifier p_e = softmax(W_ep x_e + b_ep).
/// Returns the gradient with respect to x.
inline Vec idu_embed_backward(const IduParams& p, const Vec& x, const Vec& x_e, Vec de,
                              const Vec& dlogits_pe, IduParams& g) {
  if (!dlogits_pe.empty()) {
    outer_acc(dlogits_pe.span(), x_e.span(), g.W_ep);
    detail::add_bias(g.b_ep, dlogits_pe);
    matvec_t_acc(p.W_ep, dlogits_pe.span(), de.span());
  }
  for (std::size_t k = 0; k < de.size(); ++k) {
    if (!(x_e[k] > 0.0)) de[k] = 0.0;
  }
  outer_acc(de.span(), x.span(), g.W_xe);
  detail::add_bias(g.b_e, de);
  Vec dx(x.size());
  matvec_t_acc(p.W_xe, de.span(), dx.span());
  return dx;
}

inline StepGrads idu_backward(const IduParams& p, const StepTrace& tr, const Vec& dh,
                              IduParams& g) {
  auto core = idu_core_backward(p, tr, dh, g);
  StepGrads out;
  out.dh_prev = std::move(core.dh_prev);
  out.dx_t = idu_embed_backward(p, tr.x_t, tr.x_te, std::move(core.dx_te), {}, g);
  out.dx_0 = idu_embed_backward(p, tr.x_0, tr.x_0e, std::move(core.dx_0e), {}, g);
  return out;
}

/// Single-step backward for any variant. `dc` is used by lstm only.
inline StepGrads cell_backward(const CellParams& params, const StepTrace& tr, const Vec& dh,
                               const Vec& dc, CellParams& grads) {
  if (variant_of(params) != tr.variant || variant_of(grads) != tr.variant) {
    throw ShapeError("cell_backward: trace is " + std::string(to_string(tr.variant)) +
                     " but parameters are " + std::string(to_string(variant_of(params))));
  }
  return std::visit(
      [&](const auto& p) -> StepGrads {
        using P = std::decay_t<decltype(p)>;
        auto& g = std::get<P>(grads);
        if constexpr (std::is_same_v<P, SimpleParams>) return simple_rnn_backward(p, tr, dh, g);
        else if constexpr (std::is_same_v<P, LstmParams>) return lstm_backward(p, tr, dh, dc, g);
        else if constexpr (std::is_same_v<P, GruParams>) return gru_backward(p, tr, dh, g);
        else if constexpr (std::is_same_v<P, GruCiParams>) return gru_ci_backward(p, tr, dh, g);
        else return idu_backward(p, tr, dh, g);
      },
      params);
}

}  // namespace idn
