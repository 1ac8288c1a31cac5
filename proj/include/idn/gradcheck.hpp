#pragma once

// Whole-network gradient check: analytic backprop of the full window loss
// against central finite differences, reported per parameter matrix.

#include <algorithm>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "idn/network.hpp"

namespace idn {

struct MatrixCheck {
  std::string name;
  double max_rel = 0.0;
};

/// `tamper` names a matrix whose analytic gradient is deliberately corrupted
/// before comparison (negative control for the checker itself).
inline std::vector<MatrixCheck> check_model_gradient(Model m, const Window& w, double eps = 1e-5,
                                                     std::string_view tamper = {}) {
  Model g = m.zeros_like();
  loss_and_gradient(m, w, &g);
  auto analytic = g.param_views();
  auto params = m.param_views();
  std::vector<MatrixCheck> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name == tamper && !analytic[i].values.empty()) analytic[i].values[0] += 1e-3;
    const auto numeric = fd_gradient([&] { return loss_and_gradient(m, w).total; },
                                     params[i].values, eps, params[i].name);
    MatrixCheck r{std::string(params[i].name), 0.0};
    for (std::size_t k = 0; k < numeric.size(); ++k) {
      r.max_rel = std::max(r.max_rel, relative_error(analytic[i].values[k], numeric[k]));
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Hidden-4, K=2, T=3, d_x=3 model with every parameter drawn from N(0, 0.25)
/// and a window whose labels mix background and both actions.
inline std::pair<Model, Window> gradcheck_instance(Variant v, std::uint64_t seed) {
  IdnConfig c;
  c.variant = v;
  c.T = 3;
  c.K = 2;
  c.d_x = 3;
  c.hidden = 4;
  c.embed = 4;
  c.seed = seed;
  Model m = Model::shaped(c);
  Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(v) + 1);
  m.visit([&](ParamView p) {
    for (double& x : p.values) x = 0.5 * rng.normal();
  });
  Window w;
  w.video_id = "gradcheck";
  w.labels = {0, 2, 1, 1};
  for (std::size_t t = 0; t < w.labels.size(); ++t) {
    Vec x(c.d_x);
    for (double& f : x) f = rng.normal();
    w.features.push_back(std::move(x));
  }
  w.relevance = relevance_flags(w.labels);
  w.position = c.T;
  return {std::move(m), std::move(w)};
}

}  // namespace idn
