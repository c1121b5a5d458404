#include <gtest/gtest.h>

#include <cmath>

#include "hyperinv/error.hpp"
#include "hyperinv/gradcheck.hpp"
#include "hyperinv/hypernet.hpp"

using namespace hyperinv;

namespace {

Tensor random_code(const ToyDims& dims, const HyperConfig& hyper, std::size_t batch, Rng& rng) {
  return rng.normal({batch, layer_table(dims).size(), hyper_input_channels(dims, hyper),
                     dims.appearance_size, dims.appearance_size});
}

}  // namespace

TEST(HyperNet, ZeroInitialisedMappersGiveZeroResiduals) {
  const ToyDims dims;
  const HyperConfig hyper;
  const auto table = layer_table(dims);
  NamedTensors H = init_hypernet(dims, hyper, 0);
  Rng rng(0);
  const Tensor h = random_code(dims, hyper, 2, rng);
  const ResidualWeights r = predict_residuals(H, table, hyper.hidden_dim, h, 7);
  ASSERT_EQ(r.layers.size(), 8u);
  for (std::size_t j = 0; j < 8; ++j) {
    Shape expect = table[j].kernel_shape();
    expect.insert(expect.begin(), 2);
    EXPECT_EQ(r.layers[j].shape(), expect);
    EXPECT_EQ(max_abs(r.layers[j]), 0.0);
  }
  // Zero A with nonzero B is also an exact zero.
  for (auto& [n, t] : H) {
    if (n.ends_with(".A")) t = Tensor(t.shape());
    if (n.ends_with(".B")) t = rng.normal(t.shape());
  }
  for (const Tensor& t : predict_residuals(H, table, hyper.hidden_dim, h, 7).layers)
    EXPECT_EQ(max_abs(t), 0.0);
}

TEST(HyperNet, Deterministic) {
  const ToyDims dims;
  const HyperConfig hyper;
  NamedTensors H = init_hypernet(dims, hyper, 1);
  Rng rng(1);
  for (auto& [n, t] : H)
    if (n.ends_with(".B")) t = rng.normal(t.shape());
  const Tensor h = random_code(dims, hyper, 1, rng);
  const auto a = predict_residuals(H, layer_table(dims), 64, h, 0);
  const auto b = predict_residuals(H, layer_table(dims), 64, h, 0);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(content_hash(a.layers[j]), content_hash(b.layers[j]));
}

TEST(HyperNet, LayerAxisMismatchIsAnError) {
  const ToyDims dims;
  const HyperConfig hyper;
  const NamedTensors H = init_hypernet(dims, hyper, 0);
  Rng rng(0);
  EXPECT_THROW(predict_residuals(H, layer_table(dims), 64, rng.normal({1, 5, 64, 4, 4}), 0),
               ShapeError);
}

TEST(HyperNet, MapperGradientsMatchFiniteDifferences) {
  ToyDims dims;
  dims.resolution = 8;
  dims.channel_base = 4;
  dims.appearance_channels = 2;
  HyperConfig hyper;
  hyper.hidden_dim = 3;
  hyper.feature_dim = 5;
  const LayerSpec layer = layer_table(dims)[2];
  NamedTensors H = init_hypernet(dims, hyper, 4);
  Rng rng(4);
  const std::string n = "hyper." + std::to_string(layer.index);
  H[n + ".B"] = rng.normal(H[n + ".B"].shape());
  const std::vector<std::string> names = {n + ".A", n + ".B", n + ".ft.0.weight",
                                          n + ".ft.0.bias", n + ".ft.1.weight", n + ".ft.1.bias"};
  std::vector<Tensor> values{rng.normal({2, 4, 4, 4})};
  for (const auto& name : names) values.push_back(H[name]);
  auto r = check_gradients(
      [&](std::span<const Var> v) {
        VarMap hp;
        for (std::size_t i = 0; i < names.size(); ++i) hp.emplace(names[i], v[i + 1]);
        return hyper_layer_forward(hp, layer, hyper.hidden_dim, v[0]);
      },
      values, 4, 40);
  EXPECT_LE(r.max_relative_error, 1e-5);
}

TEST(Refine, ZeroResidualIsIdentity) {
  const Generator G = Generator::initialize(ToyDims{}, 0);
  ResidualWeights zero{{}, G.hash()};
  for (const auto& l : G.layers()) zero.layers.emplace_back(l.kernel_shape());
  const Generator R = refine_generator(G, zero);
  for (const auto& [n, t] : G.params()) EXPECT_TRUE(bit_equal(t, R.params().at(n))) << n;
  const ContentCode w = G.sample_codes(1, 2);
  EXPECT_TRUE(bit_equal(G.generate(w), R.generate(w)));
  EXPECT_EQ(R.hash(), G.hash());
}

TEST(Refine, AdditiveAndSparse) {
  const Generator G = Generator::initialize(ToyDims{}, 0);
  Rng rng(5);
  ResidualWeights d1{{}, G.hash()}, d2{{}, G.hash()}, sum{{}, G.hash()};
  for (const auto& l : G.layers()) {
    d1.layers.push_back(rng.normal(l.kernel_shape(), 0.01));
    d2.layers.push_back(rng.normal(l.kernel_shape(), 0.01));
    Tensor s = d1.layers.back();
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += d2.layers.back()[i];
    sum.layers.push_back(std::move(s));
  }
  const Generator twice = refine_generator(refine_generator(G, d1), d2);
  const Generator once = refine_generator(G, sum);
  // theta + d1 + d2 vs theta + (d1 + d2): compare against the same
  // association the refinement performs.
  for (std::size_t j = 1; j <= G.num_layers(); ++j) {
    const Tensor& a = twice.kernel(j);
    const Tensor& t = G.kernel(j);
    for (std::size_t i = 0; i < a.size(); ++i)
      EXPECT_EQ(a[i], (t[i] + d1.layers[j - 1][i]) + d2.layers[j - 1][i]);
    for (std::size_t i = 0; i < a.size(); ++i)
      EXPECT_NEAR(once.kernel(j)[i], a[i], 1e-15 * (1.0 + std::abs(a[i])));
  }

  ResidualWeights single{{}, G.hash()};
  for (const auto& l : G.layers()) single.layers.emplace_back(l.kernel_shape());
  single.layers[0][0] = 1e-3;
  const Generator S = refine_generator(G, single);
  std::size_t differing = 0;
  for (const auto& [n, t] : G.params()) {
    const Tensor& u = S.params().at(n);
    for (std::size_t i = 0; i < t.size(); ++i) differing += t[i] != u[i];
  }
  EXPECT_EQ(differing, 1u);
  EXPECT_EQ(G.hash(), params_hash(G.params(), "g."));
}

TEST(Refine, HashMismatchIsRejected) {
  const Generator G = Generator::initialize(ToyDims{}, 0);
  ResidualWeights zero{{}, G.hash() ^ 1};
  for (const auto& l : G.layers()) zero.layers.emplace_back(l.kernel_shape());
  EXPECT_THROW(refine_generator(G, zero), HashMismatch);
}

TEST(MapperParamCount, ClosedForm) {
  const LayerSpec main{1, LayerRole::MainConv, 4, 32, 32, 3, 1};
  const auto c = mapper_param_count(main, 256, 64);
  EXPECT_EQ(c.factorized, 542720u);
  EXPECT_EQ(c.naive, 2359296u);
  const LayerSpec torgb{2, LayerRole::ToRgb, 4, 32, 3, 1, 2};
  EXPECT_EQ(mapper_param_count(torgb, 256, 64).factorized, 51200u);
  // Reported even when factorisation does not save anything.
  const auto big = mapper_param_count(main, 256, 32 * 9);
  EXPECT_GE(big.factorized, big.naive);
}

TEST(MapperParamCount, MatchesEnumeratedParameters) {
  const ToyDims dims;
  const HyperConfig hyper;
  const NamedTensors H = init_hypernet(dims, hyper, 0);
  for (const auto& l : layer_table(dims)) {
    const std::string p = "hyper." + std::to_string(l.index) + ".";
    const std::size_t mapper = H.at(p + "A").size() + H.at(p + "B").size();
    EXPECT_EQ(mapper, mapper_param_count(l, hyper.feature_dim, hyper.hidden_dim).factorized);
    EXPECT_EQ(parameter_count(H, p),
              mapper + feature_transformer_param_count(hyper_input_channels(dims, hyper),
                                                       hyper.feature_dim));
  }
}
