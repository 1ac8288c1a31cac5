#include <gtest/gtest.h>

#include "idn/network.hpp"
#include "support.hpp"

using namespace idn;
using test_support::random_vec;
using test_support::random_window;
using test_support::small_model;

namespace {
constexpr Variant kAll[] = {Variant::simple, Variant::lstm, Variant::gru, Variant::gru_ci,
                            Variant::idu};
}

TEST(Forward, ZeroParametersGiveUniformPrediction) {
  for (Variant v : kAll) {
    IdnConfig c;
    c.variant = v;
    c.hidden = 4;
    c.embed = 4;
    c.K = 3;
    c.T = 2;
    c.d_x = 5;
    const Model m = Model::shaped(c);
    Rng rng(1);
    const auto pass = forward(m, random_window(5, {0, 1, 2}, rng));
    for (double p : pass.p0()) EXPECT_EQ(p, 0.25) << to_string(v);
  }
}

TEST(Forward, MatchesManualComposition) {
  for (Variant v : kAll) {
    const Model m = small_model(v, 7);
    Rng rng(2);
    const Window w = random_window(3, {0, 1, 1, 2}, rng);
    CellState s{Vec(4), v == Variant::lstm ? Vec(4) : Vec()};
    for (const auto& x : w.features) s = next_state(cell_forward(m.cell, s, x, w.features.back()));
    Vec logits = linear(m.W_hp, s.h, &m.b_hp);
    const Vec expect = softmax(logits);
    const Vec got = forward(m, w).p0();
    for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_NEAR(got[k], expect[k], 1e-14) << to_string(v);
  }
}

TEST(Forward, SingleChunkWindowIsOneCellStepPlusHead) {
  for (Variant v : kAll) {
    Model m = small_model(v, 8, 4, 2, 0);
    Rng rng(3);
    const Window w = random_window(3, {1}, rng);
    const CellState s{Vec(4), v == Variant::lstm ? Vec(4) : Vec()};
    const auto tr = cell_forward(m.cell, s, w.features[0], w.features[0]);
    EXPECT_EQ(forward(m, w).p0(), head(m, tr.h)) << to_string(v);
  }
}

TEST(Forward, EveryStepDistributionSumsToOne) {
  Rng rng(4);
  for (Variant v : kAll) {
    const Model m = small_model(v, 9, 4, 3, 5);
    const auto pass = forward(m, random_window(3, {0, 1, 2, 3, 3, 3}, rng));
    for (const auto& p : pass.probs) {
      double s = 0.0;
      for (double x : p) s += x;
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Forward, RejectsMismatchedWindows) {
  const Model m = small_model(Variant::gru, 10);
  Rng rng(5);
  EXPECT_THROW(forward(m, random_window(3, {0, 1}, rng)), ShapeError);
  EXPECT_THROW(forward(m, random_window(4, {0, 1, 1, 0}, rng)), ShapeError);
  EXPECT_THROW(forward(m, random_window(3, {0, 1, 1, 9}, rng)), DataError);
}

class WindowGradient : public ::testing::TestWithParam<Variant> {};

TEST_P(WindowGradient, FullLossMatchesFiniteDifferences) {
  Rng rng(6);
  for (std::uint64_t seed : {11u, 12u}) {
    const Model m = small_model(GetParam(), seed);
    const Window w = random_window(3, {0, 2, 1, 1}, rng);
    for (const auto& r : test_support::check_model_gradient(m, w)) {
      EXPECT_LT(r.max_rel, 1e-5) << to_string(GetParam()) << ' ' << r.name;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllVariants, WindowGradient, ::testing::ValuesIn(kAll),
                         [](const auto& info) {
                           std::string n(to_string(info.param));
                           std::erase(n, '-');
                           return n;
                         });

TEST(WindowGradient, IduWithoutBiasesAndSameLabelWindow) {
  IdnConfig c;
  c.variant = Variant::idu;
  c.hidden = 4;
  c.embed = 3;
  c.K = 2;
  c.T = 3;
  c.d_x = 3;
  c.bias = false;
  Model m = Model::shaped(c);
  Rng rng(13);
  m.visit([&](ParamView p) {
    for (double& x : p.values) x = 0.5 * rng.normal();
  });
  for (const auto& r : test_support::check_model_gradient(m, random_window(3, {2, 2, 2, 2}, rng))) {
    EXPECT_LT(r.max_rel, 1e-5) << r.name;
  }
}

TEST(Model, ParameterNamesPerVariant) {
  const auto names = [](Variant v) {
    std::vector<std::string> out;
    const Model m = small_model(v, 1);
    for (const auto& p : m.param_views()) out.emplace_back(p.name);
    return out;
  };
  EXPECT_EQ(names(Variant::gru),
            (std::vector<std::string>{"W_hr", "W_xr", "W_xz", "W_hz", "W_xh", "W_hh", "b_r", "b_z",
                                      "b_h", "W_hp", "b_hp"}));
  const auto idu = names(Variant::idu);
  EXPECT_EQ(std::count(idu.begin(), idu.end(), "W_xe"), 1);
  EXPECT_EQ(std::count(idu.begin(), idu.end(), "W_ep"), 1);
}

TEST(Model, InitializationIsSeededAndBiasesStartAtZero) {
  IdnConfig c;
  c.hidden = 6;
  c.embed = 6;
  c.d_x = 4;
  c.K = 2;
  const Model a = Model::initialized(c), b = Model::initialized(c);
  c.seed = 2;
  const Model d = Model::initialized(c);
  const auto va = a.param_views(), vb = b.param_views(), vd = d.param_views();
  bool differs = false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    EXPECT_TRUE(std::ranges::equal(va[i].values, vb[i].values));
    differs |= !std::ranges::equal(va[i].values, vd[i].values);
    if (va[i].name.starts_with("b_")) {
      for (double x : va[i].values) EXPECT_EQ(x, 0.0);
    } else {
      const double lim = std::sqrt(6.0 / static_cast<double>(va[i].rows + va[i].cols));
      for (double x : va[i].values) EXPECT_LE(std::abs(x), lim);
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Config, ValidationAndKeys) {
  IdnConfig c;
  EXPECT_NO_THROW(c.validate());
  c.d_a = 1000;
  c.d_m = 1000;
  EXPECT_THROW(c.validate(), ConfigError);
  c.d_a = 1024;
  c.d_m = 2048;
  EXPECT_NO_THROW(c.validate());
  EXPECT_FALSE(c.set("no_such_key", "1"));
  EXPECT_TRUE(c.set("variant", "gru-ci"));
  EXPECT_EQ(c.variant, Variant::gru_ci);
  EXPECT_THROW(c.set("hidden", "-3"), ConfigError);
  EXPECT_THROW(c.set("lr", "fast"), ConfigError);
  IdnConfig d;
  for (const auto& [k, v] : c.to_kv()) EXPECT_TRUE(d.set(k, v)) << k;
  EXPECT_EQ(d.to_kv(), c.to_kv());
}

// ---------------------------------------------------------------------------
// Streaming

TEST(Stream, FirstChunkEqualsPaddedWindow) {
  const Model m = small_model(Variant::idu, 20);
  Rng rng(21);
  const Vec x = random_vec(3, rng);
  const std::vector<Vec> stream{x};
  const auto out = predict_stream(m, stream);
  ASSERT_EQ(out.size(), 1u);
  Window w;
  w.features = {Vec(3), Vec(3), Vec(3), x};
  w.labels = {0, 0, 0, 0};
  EXPECT_EQ(out[0], forward(m, w).p0());
}

TEST(Stream, FullWindowMatchesForward) {
  for (Variant v : kAll) {
    const Model m = small_model(v, 22);
    Rng rng(23);
    const Window w = random_window(3, {0, 1, 1, 2}, rng);
    EXPECT_EQ(predict_stream(m, w.features).back(), forward(m, w).p0()) << to_string(v);
  }
}

TEST(Stream, Causality) {
  const Model m = small_model(Variant::idu, 24);
  Rng rng(25);
  std::vector<Vec> stream;
  for (int i = 0; i < 12; ++i) stream.push_back(random_vec(3, rng));
  const auto base = predict_stream(m, stream);
  for (int trial = 0; trial < 20; ++trial) {
    auto mutated = stream;
    const std::size_t j = rng.below(stream.size());
    mutated[j] = random_vec(3, rng, 5.0);
    const auto out = predict_stream(m, mutated);
    for (std::size_t i = 0; i < j; ++i) EXPECT_EQ(out[i], base[i]);
    EXPECT_NE(out[j], base[j]);
  }
}

TEST(Stream, DimensionMismatchThrows) {
  const Model m = small_model(Variant::gru, 26);
  StreamPredictor sp(m);
  EXPECT_THROW(sp.push(Vec(4)), ShapeError);
}
