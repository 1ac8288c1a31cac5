#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "idn/idn.hpp"

namespace idn::test_support {

inline Vec random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  Vec v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

inline Mat random_mat(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (double& x : m.span()) x = scale * rng.normal();
  return m;
}

/// Fills every parameter, biases included, with N(0, scale^2) draws.
template <class P>
void randomize(P& params, Rng& rng, double scale = 0.5) {
  params.visit([&](ParamView v) {
    for (double& x : v.values) x = scale * rng.normal();
  });
}

inline void randomize(CellParams& params, Rng& rng, double scale = 0.5) {
  std::visit([&](auto& p) { randomize(p, rng, scale); }, params);
}

/// Small model with every parameter random, including biases.
inline Model small_model(Variant v, std::uint64_t seed, std::size_t hidden = 4, std::size_t K = 2,
                         std::size_t T = 3, std::size_t d_x = 3) {
  IdnConfig c;
  c.variant = v;
  c.hidden = hidden;
  c.embed = hidden;
  c.K = K;
  c.T = T;
  c.d_x = d_x;
  c.seed = seed;
  Model m = Model::shaped(c);
  Rng rng(seed);
  m.visit([&](ParamView p) {
    for (double& x : p.values) x = 0.5 * rng.normal();
  });
  return m;
}

/// Window with random features and the given labels (oldest first).
inline Window random_window(std::size_t d_x, const std::vector<std::size_t>& labels, Rng& rng) {
  Window w;
  w.video_id = "w";
  w.labels = labels;
  for (std::size_t i = 0; i < labels.size(); ++i) w.features.push_back(random_vec(d_x, rng));
  w.relevance = relevance_flags(labels);
  w.position = labels.size() - 1;
  return w;
}

using GradReport = MatrixCheck;
using idn::check_model_gradient;

}  // namespace idn::test_support
