#include <gtest/gtest.h>

#include <cmath>

#include "caepl/graph.hpp"
#include "caepl/init.hpp"
#include "caepl/models.hpp"

using caepl::GraphSpec;
using caepl::LayerKind;
using caepl::LayerSpec;
using caepl::ModelGraph;
using caepl::Tensor;

namespace {

GraphSpec tiny_graph() {
  GraphSpec g;
  g.layers.push_back({.name = "input", .kind = LayerKind::Input, .channels = 3});
  g.layers.push_back({.name = "c1",
                      .kind = LayerKind::Conv,
                      .inputs = {"input"},
                      .filters = 4,
                      .kernel = 3,
                      .stride = 1,
                      .pad = 1});
  g.layers.push_back({.name = "b1", .kind = LayerKind::BatchNorm, .inputs = {"c1"}});
  g.layers.push_back({.name = "r1", .kind = LayerKind::ReLU, .inputs = {"b1"}});
  g.layers.push_back({.name = "p1",
                      .kind = LayerKind::MaxPool,
                      .inputs = {"r1"},
                      .stride = 2,
                      .window = 2});
  g.layers.push_back({.name = "up",
                      .kind = LayerKind::TConv,
                      .inputs = {"p1"},
                      .filters = 4,
                      .kernel = 4,
                      .stride = 2});
  g.layers.push_back({.name = "out", .kind = LayerKind::MTanh, .inputs = {"up"}});
  return g;
}

TEST(GraphSpec, ValidationCatchesBadGraphs) {
  GraphSpec dup = tiny_graph();
  dup.layers[3].name = "c1";
  EXPECT_THROW(dup.validate(), caepl::ConfigError);

  GraphSpec fwd = tiny_graph();
  fwd.layers[1].inputs = {"p1"};  // forward reference = cycle under list order
  EXPECT_THROW(fwd.validate(), caepl::ConfigError);

  GraphSpec arity = tiny_graph();
  arity.layers[2].inputs = {};
  EXPECT_THROW(arity.validate(), caepl::ConfigError);
}

TEST(GraphSpec, JsonRoundTripIsIdentical) {
  GraphSpec g = tiny_graph();
  g.validate();
  auto j = g.to_json();
  GraphSpec back = GraphSpec::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  // same shapes end to end
  auto a = g.predict_shapes({2, 3, 8, 8});
  auto b = back.predict_shapes({2, 3, 8, 8});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(a[i].second, b[i].second);
  }
}

TEST(ModelGraph, PredictedShapesMatchActualForward) {
  ModelGraph<float> model(tiny_graph());
  caepl::default_init(model, 5);
  auto input = Tensor<float>::zeros({2, 3, 8, 8});
  caepl::RngStream rng(9);
  for (auto& v : input->values) v = static_cast<float>(rng.uniform(0, 1));
  auto acts = model.forward_all(input, {.training = false});
  auto predicted = model.predict_shapes(input->shape);
  ASSERT_EQ(acts.size(), predicted.size());
  for (std::size_t i = 0; i < acts.size(); ++i)
    EXPECT_EQ(acts[i]->shape, predicted[i].second) << predicted[i].first;
}

TEST(HeNormalInit, SampleStdMatchesFanIn) {
  GraphSpec g;
  g.layers.push_back({.name = "input", .kind = LayerKind::Input, .channels = 3});
  g.layers.push_back({.name = "c",
                      .kind = LayerKind::Conv,
                      .inputs = {"input"},
                      .filters = 64,
                      .kernel = 3,
                      .stride = 1,
                      .pad = 1});
  ModelGraph<double> model(g);
  caepl::he_normal_init(model, 123);
  auto w = model.state("c").weight;
  ASSERT_EQ(w->size(), 64 * 3 * 3 * 3);
  double sum = 0, sq = 0;
  for (double v : w->values) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(w->size());
  const double std_dev = std::sqrt(sq / n - (sum / n) * (sum / n));
  const double expected = std::sqrt(2.0 / 27.0);
  EXPECT_NEAR(std_dev, expected, 0.05 * expected);

  auto b = model.state("c").bias;
  for (double v : b->values) EXPECT_EQ(v, 0.0);
}

TEST(HeNormalInit, SameSeedBitwiseIdentical) {
  ModelGraph<float> m1(tiny_graph());
  ModelGraph<float> m2(tiny_graph());
  caepl::he_normal_init(m1, 42);
  caepl::he_normal_init(m2, 42);
  auto p1 = m1.named_parameters();
  auto p2 = m2.named_parameters();
  ASSERT_EQ(p1.size(), p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    EXPECT_EQ(p1[i].first, p2[i].first);
    EXPECT_EQ(p1[i].second->values, p2[i].second->values);
  }
  ModelGraph<float> m3(tiny_graph());
  caepl::he_normal_init(m3, 43);
  EXPECT_NE(m1.state("c1").weight->values, m3.state("c1").weight->values);
}

TEST(BilinearInit, TentFactorsAndZeroCrossPlanes) {
  auto w = Tensor<double>::zeros({3, 3, 4, 4});
  caepl::bilinear_init(w, 2);
  // separable outer product of [0.25, 0.75, 0.75, 0.25]
  const double f[4] = {0.25, 0.75, 0.75, 0.25};
  for (int c = 0; c < 3; ++c)
    for (int ky = 0; ky < 4; ++ky)
      for (int kx = 0; kx < 4; ++kx)
        EXPECT_DOUBLE_EQ(w->values[((c * 3 + c) * 4 + ky) * 4 + kx], f[ky] * f[kx]);
  for (int ci = 0; ci < 3; ++ci)
    for (int co = 0; co < 3; ++co) {
      if (ci == co) continue;
      for (int i = 0; i < 16; ++i) EXPECT_EQ(w->values[(ci * 3 + co) * 16 + i], 0.0);
    }
  EXPECT_THROW(caepl::bilinear_init(w, 3), caepl::ParamError);
}

TEST(BilinearInit, UpsampledConstantIsConstantInside) {
  auto w = Tensor<double>::zeros({2, 2, 16, 16});
  caepl::bilinear_init(w, 8);
  auto x = Tensor<double>::full({1, 2, 4, 4}, 1.5);
  auto y = caepl::transposed_conv2d(x, w, 8);
  ASSERT_EQ(y->shape, (caepl::Shape{1, 2, 32, 32}));
  for (int c = 0; c < 2; ++c)
    for (int yy = 8; yy < 24; ++yy)
      for (int xx = 8; xx < 24; ++xx)
        EXPECT_NEAR(y->values[(c * 32 + yy) * 32 + xx], 1.5, 1e-12);
}

TEST(ModelGraph, BatchNormModesDiffer) {
  // training mode uses batch stats, inference uses moving stats
  ModelGraph<double> model(tiny_graph());
  caepl::default_init(model, 7);
  caepl::RngStream rng(3);
  auto x = Tensor<double>::zeros({2, 3, 8, 8});
  for (auto& v : x->values) v = rng.uniform(0, 1);
  auto train_out = model.forward(x, {.training = true, .update_stats = true});
  auto infer_out = model.forward(x, {.training = false});
  bool any_diff = false;
  for (std::size_t i = 0; i < train_out->values.size(); ++i)
    if (train_out->values[i] != infer_out->values[i]) any_diff = true;
  EXPECT_TRUE(any_diff);
}

}  // namespace
