/*
 * Copyright 2026 The dlscale Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "dlscale/core/bytes.hpp"
#include "dlscale/core/op_graph.hpp"
#include "dlscale/model/autodiff.hpp"
#include "dlscale/model/dataset.hpp"
#include "dlscale/model/io.hpp"
#include "dlscale/model/kernels.hpp"
#include "dlscale/model/loss.hpp"
#include "dlscale/model/metrics.hpp"
#include "dlscale/model/net.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace dlscale::model {
namespace {

using testing::check_op;
using testing::naive_conv;

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(s));
  Rng rng(seed);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

Tensor<float> small_ints(Shape s, std::uint64_t seed) {
  Tensor<float> t(std::move(s));
  Rng rng(seed);
  for (auto& v : t.data) v = static_cast<float>(static_cast<int>(rng.below(7)) - 3);
  return t;
}

TEST(Kernels, ConvMatchesNestedLoopExactly) {
  struct Case {
    int k, stride, dil;
    Padding pad;
    Shape x;
  };
  const std::vector<Case> cases{{3, 1, 1, Padding::same, {2, 3, 8, 8}},  {1, 1, 1, Padding::same, {1, 4, 5, 7}},
                                {3, 2, 1, Padding::valid, {1, 2, 8, 7}}, {3, 1, 2, Padding::same, {2, 2, 8, 6}},
                                {2, 1, 1, Padding::same, {1, 3, 4, 4}},  {3, 2, 1, Padding::same, {1, 2, 7, 8}}};
  std::uint64_t seed = 0;
  for (const auto& c : cases) {
    kernels::ConvSpec s;
    s.kernel_h = s.kernel_w = c.k;
    s.stride = c.stride;
    s.dilation = c.dil;
    s.padding = c.pad;
    const auto x = small_ints(c.x, ++seed);
    const auto w = small_ints({5, c.x[1], c.k, c.k}, ++seed);
    const auto got = kernels::conv2d_forward(x, w, s);
    const auto want = naive_conv(x, w, s);
    EXPECT_EQ(got.shape, want.shape);
    EXPECT_EQ(got.data, want.data) << "k=" << c.k << " stride=" << c.stride << " dil=" << c.dil;
  }
}

TEST(Kernels, PoolAndUpsampleValues) {
  Tensor<float> x({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto p = kernels::avgpool_forward(x, 2);
  EXPECT_EQ(p.data, (std::vector<float>{3.5f, 5.5f}));
  const auto u = kernels::upsample_forward(p, 2);
  EXPECT_EQ(u.data, (std::vector<float>{3.5f, 3.5f, 5.5f, 5.5f, 3.5f, 3.5f, 5.5f, 5.5f}));
  EXPECT_THROW(kernels::avgpool_forward(Tensor<float>({1, 1, 3, 4}), 2), ShapeError);
}

kernels::ConvSpec spec(int k, int stride = 1, int dil = 1, Padding pad = Padding::same) {
  kernels::ConvSpec s;
  s.kernel_h = s.kernel_w = k;
  s.stride = stride;
  s.dilation = dil;
  s.padding = pad;
  return s;
}

TEST(GradCheck, ConvolutionVariants) {
  for (const auto& s : {spec(3), spec(1), spec(3, 2, 1, Padding::valid), spec(3, 1, 2), spec(2), spec(3, 2)}) {
    const auto r = check_op({random_tensor({2, 3, 6, 5}, 1), random_tensor({4, 3, s.kernel_h, s.kernel_w}, 2)},
                            [&](Tape<double>& t, const std::vector<Var>& v) { return ops::conv2d(t, v[0], v[1], s); });
    EXPECT_LT(r.max_rel_error, 1e-4) << "k=" << s.kernel_h << " stride=" << s.stride << " dil=" << s.dilation;
  }
}

TEST(GradCheck, ElementwiseAndStructuralOps) {
  auto bias = check_op({random_tensor({2, 3, 4, 4}, 3), random_tensor({3}, 4)},
                       [](Tape<double>& t, const std::vector<Var>& v) { return ops::bias_add(t, v[0], v[1]); });
  EXPECT_LT(bias.max_rel_error, 1e-4);

  // Inputs kept away from the kink at zero.
  auto away = random_tensor({2, 2, 3, 3}, 5, 0.1, 1.0);
  Rng signs(6);
  for (auto& v : away.data)
    if (signs.below(2)) v = -v;
  auto relu = check_op({away}, [](Tape<double>& t, const std::vector<Var>& v) { return ops::relu(t, v[0]); });
  EXPECT_LT(relu.max_rel_error, 1e-4);

  auto cat = check_op({random_tensor({2, 2, 3, 4}, 7), random_tensor({2, 3, 3, 4}, 8), random_tensor({2, 1, 3, 4}, 9)},
                      [](Tape<double>& t, const std::vector<Var>& v) { return ops::concat(t, v); });
  EXPECT_LT(cat.max_rel_error, 1e-4);

  auto pool = check_op({random_tensor({2, 2, 4, 6}, 10)},
                       [](Tape<double>& t, const std::vector<Var>& v) { return ops::avgpool(t, v[0], 2); });
  EXPECT_LT(pool.max_rel_error, 1e-4);

  auto up = check_op({random_tensor({2, 2, 3, 2}, 11)},
                     [](Tape<double>& t, const std::vector<Var>& v) { return ops::upsample(t, v[0], 2); });
  EXPECT_LT(up.max_rel_error, 1e-4);

  auto mm = check_op({random_tensor({3, 4, 5}, 12), random_tensor({5, 2}, 13)},
                     [](Tape<double>& t, const std::vector<Var>& v) { return ops::matmul(t, v[0], v[1]); });
  EXPECT_LT(mm.max_rel_error, 1e-4);

  auto add = check_op({random_tensor({2, 3}, 14), random_tensor({2, 3}, 15)},
                      [](Tape<double>& t, const std::vector<Var>& v) { return ops::add(t, v[0], v[1]); });
  EXPECT_LT(add.max_rel_error, 1e-4);

  auto mul = check_op({random_tensor({2, 3}, 16), random_tensor({2, 3}, 17)},
                      [](Tape<double>& t, const std::vector<Var>& v) { return ops::mul(t, v[0], v[1]); });
  EXPECT_LT(mul.max_rel_error, 1e-4);
}

TEST(GradCheck, WeightedSoftmaxCrossEntropy) {
  const std::vector<std::uint8_t> labels{0, 1, 2, 2, 0, 1, 1, 0, 2, 0, 0, 1};
  const std::vector<double> w{1.0, 7.5, 31.0};
  auto r = check_op({random_tensor({2, 3, 2, 3}, 18, -3.0, 3.0)},
                    [&](Tape<double>& t, const std::vector<Var>& v) { return ops::softmax_ce(t, v[0], labels, w); });
  EXPECT_LT(r.max_rel_error, 1e-4);
  auto fixed = check_op({random_tensor({2, 3, 2, 3}, 19)}, [&](Tape<double>& t, const std::vector<Var>& v) {
    return ops::softmax_ce(t, v[0], labels, w, 17.0);
  });
  EXPECT_LT(fixed.max_rel_error, 1e-4);
}

TEST(GradCheck, ComposedNetwork) {
  NetConfig cfg;
  cfg.in_channels = 4;
  cfg.stem_channels = 4;
  cfg.growth = 4;
  const auto r = testing::check_network(cfg, 2, 8, 8, 100, 3);
  EXPECT_EQ(r.checked, 100u);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Autodiff, LinearLayerClosedForm) {
  Tape<double> t;
  const Tensor<double> xv({2, 3}, {1, 2, 3, 4, 5, 6});
  const Var x = t.constant(xv);
  const Var w = t.parameter(Tensor<double>({3, 1}, {0.5, -1, 2}), "w");
  const Var y = ops::matmul(t, x, w);
  EXPECT_EQ(t.value(y).data, (std::vector<double>{4.5, 9}));
  t.backward(y, Tensor<double>({2, 1}, {1.0, -2.0}));
  // X^T delta
  EXPECT_EQ(t.grad(w).data, (std::vector<double>{1 - 8, 2 - 10, 3 - 12}));
  EXPECT_FALSE(t.has_grad(x));
}

TEST(Autodiff, ZeroSeedGivesZeroGradients) {
  const MiniDenseNet net;
  const auto params = net.init(1);
  Tape<float> t;
  auto vars = net.bind<float>(t, params);
  Tensor<float> x({1, 16, 8, 8});
  Rng rng(2);
  for (auto& v : x.data) v = static_cast<float>(rng.normal());
  const Var out = net.forward(t, t.constant(x), vars);
  t.backward(out, Tensor<float>(t.value(out).shape));
  for (auto v : vars) {
    if (!t.has_grad(v)) continue;
    for (float g : t.grad(v).data) ASSERT_EQ(g, 0.0f);
  }
}

TEST(Autodiff, NonFiniteValuesNameTheLayer) {
  Tape<float> t;
  const float big = std::numeric_limits<float>::max();
  const Var x = t.parameter(Tensor<float>({1, 1, 1, 2}, {big, 2.0f}), "x");
  const Var b = t.parameter(Tensor<float>({1}, {big}), "b");
  try {
    ops::bias_add(t, x, b, "head.bias_add");
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("head.bias_add"), std::string::npos);
  }
  EXPECT_THROW(t.parameter(Tensor<float>({1}, {std::nanf("")}), "nan"), NumericError);
  Tape<float> g;
  const Var y = g.parameter(Tensor<float>({1}, {3.0f}), "y");
  const Var z = ops::relu(g, y, "act");
  EXPECT_THROW(g.backward(z, Tensor<float>({1}, {INFINITY})), NumericError);
  EXPECT_THROW(ops::add(t, x, b), ShapeError);
}

TEST(Loss, UniformLogitsGiveLnThree) {
  const Tensor<double> z({1, 3, 1, 1});
  for (double w : {0.3, 1.0, 31.6}) {
    const std::vector<double> weights{w, w, w};
    const std::vector<std::uint8_t> y{1};
    EXPECT_NEAR(weighted_ce_loss(z, y, weights).loss, std::log(3.0), 1e-15);
  }
}

TEST(Loss, EqualWeightsReduceToMeanCrossEntropy) {
  const auto z = random_tensor({2, 3, 2, 2}, 21, -2, 2);
  const std::vector<std::uint8_t> y{0, 1, 2, 0, 2, 2, 1, 0};
  const std::vector<double> ones{1, 1, 1}, fives{5, 5, 5};
  const auto a = weighted_ce_loss(z, y, ones), b = weighted_ce_loss(z, y, fives);
  EXPECT_NEAR(a.loss, b.loss, 1e-14);
  double mean = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 4; ++p) {
      double denom = 0.0;
      for (std::size_t c = 0; c < 3; ++c) denom += std::exp(z.data[(n * 3 + c) * 4 + p]);
      mean -= std::log(std::exp(z.data[(n * 3 + y[n * 4 + p]) * 4 + p]) / denom);
    }
  EXPECT_NEAR(a.loss, mean / 8.0, 1e-12);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 4; ++p) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) s += a.grad.data[(n * 3 + c) * 4 + p];
      EXPECT_NEAR(s, 0.0, 1e-15);
    }
}

TEST(Loss, InverseSqrtWeightsAndErrors) {
  const std::vector<double> f{0.982, 0.017, 0.001};
  const auto w = inverse_sqrt_weights(f);
  EXPECT_NEAR(w[0], 1.0091, 5e-4);
  EXPECT_NEAR(w[1], 7.6696, 5e-4);
  EXPECT_NEAR(w[2], 31.623, 5e-3);
  EXPECT_NEAR(w[2] / w[0], 31.34, 0.01);
  EXPECT_THROW(inverse_sqrt_weights(std::vector<double>{0.5, 0.0}), ConfigError);

  const Tensor<double> z({1, 3, 1, 2});
  const std::vector<double> ones{1, 1, 1};
  EXPECT_THROW(weighted_ce_loss(z, std::vector<std::uint8_t>{0, 3}, ones), ConfigError);
  EXPECT_THROW(weighted_ce_loss(z, std::vector<std::uint8_t>{0}, ones), ShapeError);
  EXPECT_THROW(weighted_ce_loss(z, std::vector<std::uint8_t>{0, 1}, std::vector<double>{1, 1}), ShapeError);
  EXPECT_THROW(weighted_ce_loss(z, std::vector<std::uint8_t>{0, 1}, std::vector<double>{1, 0, 1}), ConfigError);
}

TEST(Loss, WeightsShiftTheNormaliser) {
  const Tensor<double> z({1, 3, 1, 2});
  const std::vector<std::uint8_t> y{0, 2};
  const std::vector<double> w{1.0, 2.0, 3.0};
  const auto r = weighted_ce_loss(z, y, w);
  EXPECT_DOUBLE_EQ(r.weight_sum, 4.0);
  EXPECT_NEAR(r.weighted_sum, 4.0 * std::log(3.0), 1e-14);
  EXPECT_NEAR(weighted_ce_loss(z, y, w, 8.0).loss, 0.5 * std::log(3.0), 1e-14);
}

TEST(Softmax, RowsSumToOne) {
  const auto p = softmax(random_tensor({2, 3, 4, 5}, 22, -30, 30));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 20; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) s += p.data[(n * 3 + c) * 20 + i];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Metrics, IouCases) {
  const std::vector<std::uint8_t> y{0, 2, 2, 0, 1, 1};
  EXPECT_EQ(iou(y, y, 2), 1.0);
  EXPECT_EQ(iou(std::vector<std::uint8_t>{0, 0, 0, 2, 0, 0}, std::vector<std::uint8_t>{2, 0, 0, 0, 0, 0}, 2), 0.0);
  // prediction covers the two labelled pixels plus two more
  EXPECT_EQ(iou(std::vector<std::uint8_t>{2, 2, 2, 2, 0, 0}, std::vector<std::uint8_t>{2, 2, 0, 0, 0, 0}, 2), 0.5);
  EXPECT_EQ(iou(std::vector<std::uint8_t>{0, 0}, std::vector<std::uint8_t>{0, 0}, 1), 1.0);
  EXPECT_THROW(iou(y, std::vector<std::uint8_t>{0}, 0), ShapeError);
}

TEST(Metrics, AccumulatorMatchesDirectIou) {
  IoUAccumulator acc;
  const std::vector<std::uint8_t> p1{0, 1, 1, 2}, y1{0, 1, 0, 2}, p2{2, 2, 0, 0}, y2{2, 0, 0, 1};
  acc.add(p1, y1);
  acc.add(p2, y2);
  std::vector<std::uint8_t> p(p1), y(y1);
  p.insert(p.end(), p2.begin(), p2.end());
  y.insert(y.end(), y2.begin(), y2.end());
  for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(acc.iou(c), iou(p, y, c));
  EXPECT_DOUBLE_EQ(acc.accuracy(), 5.0 / 8.0);
  EXPECT_DOUBLE_EQ(acc.label_frequency(0), 4.0 / 8.0);
  const Tensor<float> z({1, 3, 1, 2}, {1, 0, 2, 0, 2, 0});
  EXPECT_EQ(argmax_labels(z), (std::vector<std::uint8_t>{1, 0}));
}

TEST(Dataset, BackgroundOnlyRequest) {
  SceneConfig c;
  c.height = 16;
  c.width = 16;
  c.frequencies = {1.0, 0.0, 0.0};
  for (const auto& s : gen_dataset(c, 20, 4))
    for (auto l : s.labels) ASSERT_EQ(l, kBackground);
}

TEST(Dataset, AggregateFrequenciesTrackRequest) {
  const SceneConfig c;
  const auto scenes = gen_dataset(c, 1000, 7);
  const auto f = label_frequencies(scenes);
  EXPECT_NEAR(f[0], 0.982, 0.002);
  EXPECT_NEAR(f[1], 0.017, 0.002);
  EXPECT_NEAR(f[2], 0.001, 0.002);
  EXPECT_GT(f[2], 0.0);
}

TEST(Dataset, DeterministicAndValidated) {
  SceneConfig c;
  c.height = 32;
  c.width = 24;
  const auto a = gen_dataset(c, 5, 9), b = gen_dataset(c, 5, 9), other = gen_dataset(c, 5, 10);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(encode_scene(a[i]), encode_scene(b[i]));
    EXPECT_NE(encode_scene(a[i]), encode_scene(other[i]));
  }
  auto bad = c;
  bad.cyclone_radius = 20;
  EXPECT_THROW(gen_dataset(bad, 1, 0), ConfigError);
  bad = c;
  bad.frequencies = {0.4, 0.5, 0.1};
  EXPECT_THROW(gen_dataset(bad, 1, 0), ConfigError);
  bad = c;
  bad.frequencies = {0.9, 0.05, 0.01};
  EXPECT_THROW(gen_dataset(bad, 1, 0), ConfigError);

  const std::vector<std::uint64_t> idx{3, 1};
  auto [x, y] = make_batch(a, idx);
  EXPECT_EQ(x.shape, (Shape{2, 16, 32, 24}));
  EXPECT_TRUE(std::equal(a[3].input.begin(), a[3].input.end(), x.data.begin()));
  EXPECT_TRUE(std::equal(a[1].labels.begin(), a[1].labels.end(), y.begin() + 32 * 24));
  EXPECT_THROW(make_batch(a, std::vector<std::uint64_t>{9}), ShapeError);
}

TEST(Io, SceneRoundTripAndCorruption) {
  SceneConfig c;
  c.height = 8;
  c.width = 8;
  c.cyclone_radius = 1;
  c.river_min_length = 3;
  c.river_max_length = 6;
  const auto s = gen_dataset(c, 1, 3)[0];
  const auto dir = std::filesystem::temp_directory_path() / "dlscale_io_test";
  std::filesystem::create_directories(dir);
  write_scene(dir / "s.dlsc", s);
  const auto back = read_scene(dir / "s.dlsc");
  EXPECT_EQ(back.input, s.input);
  EXPECT_EQ(back.labels, s.labels);
  std::filesystem::remove_all(dir);

  auto bytes = encode_scene(s);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_scene(truncated), ProtocolError);
  auto magic = bytes;
  magic[0] ^= 1;
  EXPECT_THROW(decode_scene(magic), ProtocolError);
  EXPECT_THROW(read_scene("/nonexistent/dir/x.dlsc"), Error);
}

TEST(Io, CheckpointRoundTrip) {
  const MiniDenseNet net;
  auto tensors = named_gradients(net, net.init(5));
  const auto bytes = encode_checkpoint(tensors);
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), tensors.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].name(), tensors[i].name());
    EXPECT_EQ(back[i].shape(), tensors[i].shape());
    EXPECT_EQ(back[i].values().size(), tensors[i].values().size());
    EXPECT_TRUE(std::equal(back[i].values().begin(), back[i].values().end(), tensors[i].values().begin()));
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), ProtocolError);
  auto cut = bytes;
  cut.resize(cut.size() / 2);
  EXPECT_THROW(decode_checkpoint(cut), ProtocolError);
}

TEST(Net, FullResolutionLogits) {
  const MiniDenseNet net;
  const auto params = net.init(1);
  Tensor<float> x({2, 16, 64, 48});
  Rng rng(3);
  for (auto& v : x.data) v = static_cast<float>(rng.normal());
  const auto y = net.predict<float>(params, x);
  EXPECT_EQ(y.shape, (Shape{2, 3, 64, 48}));
  const auto again = net.predict<float>(params, x);
  EXPECT_EQ(std::memcmp(y.data.data(), again.data.data(), y.data.size() * sizeof(float)), 0);
  const auto g = net.op_graph();
  EXPECT_EQ(infer_shapes(g, {{"input", x.shape}}).back(), y.shape);
  EXPECT_THROW(net.predict<float>(params, Tensor<float>({1, 16, 30, 48})), ShapeError);
  EXPECT_THROW(net.predict<float>(params, Tensor<float>({1, 8, 64, 48})), ShapeError);
}

TEST(Net, ZeroInputWithZeroHeadGivesEqualLogits) {
  NetConfig cfg;
  cfg.zero_init_head = true;
  const MiniDenseNet net(cfg);
  const auto y = net.predict<float>(net.init(2), Tensor<float>({1, 16, 16, 16}));
  const auto hw = 16 * 16;
  for (int p = 0; p < hw; ++p) {
    EXPECT_EQ(y.data[static_cast<std::size_t>(p)], y.data[static_cast<std::size_t>(hw + p)]);
    EXPECT_EQ(y.data[static_cast<std::size_t>(p)], y.data[static_cast<std::size_t>(2 * hw + p)]);
  }
}

TEST(Net, ParameterNamesAreStableAndUnique) {
  for (int growth : {16, 32}) {
    NetConfig cfg;
    cfg.growth = growth;
    const MiniDenseNet a(cfg), b(cfg);
    std::set<std::string> names;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      EXPECT_EQ(a.params()[i].name, b.params()[i].name);
      EXPECT_TRUE(names.insert(a.params()[i].name).second);
    }
    EXPECT_EQ(a.init(4), b.init(4));
    EXPECT_NE(a.init(4), a.init(5));
  }
  NetConfig flat;
  flat.levels = 0;
  const MiniDenseNet net(flat);
  EXPECT_EQ(net.predict<float>(net.init(1), Tensor<float>({1, 16, 5, 7})).shape, (Shape{1, 3, 5, 7}));
  NetConfig bad;
  bad.classes = 1;
  EXPECT_THROW(MiniDenseNet{bad}, ConfigError);
}

TEST(Net, GradientsCoverEveryParameter) {
  const MiniDenseNet net;
  const auto params = net.init(8);
  auto scenes = gen_dataset(SceneConfig{}, 2, 1);
  const std::vector<std::uint64_t> idx{0, 1};
  auto [x, y] = make_batch(scenes, idx);
  const std::vector<double> w{1, 7, 30};
  const auto r = loss_and_gradients<float>(net, params, x, y, w);
  ASSERT_EQ(r.grads.size(), params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(r.grads[i].size(), params[i].size());
    EXPECT_TRUE(std::any_of(r.grads[i].begin(), r.grads[i].end(), [](float g) { return g != 0.0f; }))
        << net.params()[i].name;
  }
  EXPECT_GT(r.loss.loss, 0.0);
}

}  // namespace
}  // namespace dlscale::model
