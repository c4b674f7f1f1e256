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
#include <limits>
#include <vector>

#include "dlscale/core/rng.hpp"
#include "dlscale/optimizer/optimizer.hpp"

namespace dlscale::optim {
namespace {

using Vec = std::vector<double>;

TEST(Larc, HandExample) {
  OptimConfig cfg;
  cfg.lr = 0.1;
  cfg.trust = 0.02;
  const Vec w{2.0, 0.0}, g{0.0, 1.0};
  EXPECT_NEAR(larc_effective_lr<double>(w, g, cfg), 0.02 * 2.0 / (1.0 + 1e-8), 1e-12);
  cfg.epsilon = std::numeric_limits<double>::min();
  EXPECT_NEAR(larc_effective_lr<double>(w, g, cfg), 0.04, 1e-12);
}

TEST(Larc, ClipsToGlobalRate) {
  OptimConfig cfg;
  cfg.lr = 0.1;
  EXPECT_EQ(larc_effective_lr<double>(Vec{1.0, 1.0}, Vec{0.0, 0.0}, cfg), 0.1);
  EXPECT_EQ(larc_effective_lr<double>(Vec{0.0, 0.0}, Vec{3.0, 4.0}, cfg), 0.1);
  EXPECT_EQ(larc_effective_lr<double>(Vec{0.0}, Vec{0.0}, cfg), 0.1);
}

TEST(Larc, WeightDecayEntersDenominator) {
  OptimConfig cfg;
  cfg.lr = 1.0;
  cfg.trust = 0.5;
  cfg.weight_decay = 0.25;
  cfg.epsilon = 1e-300;
  // |w| = 5, |g| = 2 -> 0.5*5 / (2 + 1.25)
  EXPECT_NEAR(larc_effective_lr<double>(Vec{3.0, 4.0}, Vec{0.0, 2.0}, cfg), 2.5 / 3.25, 1e-15);
}

TEST(Larc, RandomLayersRespectBound) {
  Rng rng(2024);
  OptimConfig cfg;
  for (int i = 0; i < 10000; ++i) {
    cfg.lr = std::exp(rng.uniform(-8.0, 1.0));
    cfg.trust = std::exp(rng.uniform(-6.0, 0.0));
    const std::size_t n = 1 + rng.below(16);
    Vec w(n), g(n);
    const double ws = std::exp(rng.uniform(-10.0, 10.0)), gs = std::exp(rng.uniform(-10.0, 10.0));
    for (std::size_t k = 0; k < n; ++k) {
      w[k] = ws * rng.normal();
      g[k] = gs * rng.normal();
    }
    const double lr = larc_effective_lr<double>(w, g, cfg);
    ASSERT_GT(lr, 0.0);
    ASSERT_LE(lr, cfg.lr);
    const double wn = l2_norm<double>(w), gn = l2_norm<double>(g);
    ASSERT_LE(lr * gn, cfg.trust * wn * (1.0 + 1e-12));
  }
}

TEST(Larc, RejectsMismatchAndNonFinite) {
  OptimConfig cfg;
  EXPECT_THROW(larc_effective_lr<double>(Vec{1.0}, Vec{1.0, 2.0}, cfg), ShapeError);
  EXPECT_THROW(larc_effective_lr<double>(Vec{1.0}, Vec{std::nan("")}, cfg), NumericError);
  EXPECT_THROW(larc_effective_lr<double>(Vec{INFINITY}, Vec{1.0}, cfg), NumericError);
}

TEST(Sgd, ZeroMomentumIsPlainSgd) {
  OptimConfig cfg;
  cfg.momentum = 0.0;
  cfg.larc = false;
  cfg.lr = 0.5;
  LayerParam<double> p("w", {1.0, -2.0});
  apply_gradient<double>(p, Vec{0.2, 0.4}, cfg);
  EXPECT_EQ(p.weights, (Vec{0.9, -2.2}));
  apply_gradient<double>(p, Vec{-1.0, 0.0}, cfg);
  EXPECT_EQ(p.weights, (Vec{1.4, -2.2}));
}

TEST(Sgd, MomentumTwoStepClosedForm) {
  OptimConfig cfg;
  cfg.momentum = 0.9;
  cfg.larc = false;
  cfg.lr = 0.1;
  LayerParam<double> p("w", {1.0});
  apply_gradient<double>(p, Vec{1.0}, cfg);
  apply_gradient<double>(p, Vec{1.0}, cfg);
  // w2 = w0 - lr*g - lr*(beta*g + g)
  EXPECT_NEAR(p.weights[0], 1.0 - 0.1 - 0.1 * 1.9, 1e-15);
  EXPECT_NEAR(p.momentum[0], 1.9, 1e-15);
}

TEST(Sgd, WeightDecayFoldsIntoMomentum) {
  OptimConfig cfg;
  cfg.momentum = 0.0;
  cfg.larc = false;
  cfg.lr = 1.0;
  cfg.weight_decay = 0.5;
  LayerParam<double> p("w", {2.0});
  apply_gradient<double>(p, Vec{0.0}, cfg);
  EXPECT_EQ(p.weights[0], 1.0);
}

TEST(Sgd, NonFiniteUpdateLeavesParameterUntouched) {
  OptimConfig cfg;
  cfg.larc = false;
  LayerParam<float> p("w", {1.0f, 2.0f});
  const std::vector<float> bad{0.0f, std::numeric_limits<float>::infinity()};
  EXPECT_THROW(apply_gradient<float>(p, bad, cfg), NumericError);
  EXPECT_EQ(p.weights, (std::vector<float>{1.0f, 2.0f}));
  EXPECT_EQ(p.momentum, (std::vector<float>{0.0f, 0.0f}));
  EXPECT_THROW(apply_gradient<float>(p, std::vector<float>{1.0f}, cfg), ShapeError);
}

TEST(Lag, FirstLaggedStepOnlyBuffers) {
  OptimConfig cfg;
  cfg.lag = 1;
  LayerParam<double> p("w", {1.0, 1.0});
  lagged_apply<double>(p, Vec{0.5, 0.5}, cfg);
  EXPECT_EQ(p.weights, (Vec{1.0, 1.0}));
  ASSERT_TRUE(p.lagged);
  EXPECT_EQ(*p.lagged, (Vec{0.5, 0.5}));
}

TEST(Lag, LagOneAppliesPreviousGradient) {
  OptimConfig cfg0, cfg1;
  cfg1.lag = 1;
  const std::vector<Vec> grads{{0.3, -0.1}, {0.2, 0.4}, {-0.5, 0.05}, {0.1, 0.1}};
  LayerParam<double> a("w", {1.0, -1.0}), b("w", {1.0, -1.0});
  for (const auto& g : grads) lagged_apply<double>(a, g, cfg1);
  for (std::size_t i = 0; i + 1 < grads.size(); ++i) lagged_apply<double>(b, grads[i], cfg0);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.momentum, b.momentum);
  EXPECT_EQ(*a.lagged, grads.back());
}

TEST(Lag, LagZeroMatchesApplyGradient) {
  OptimConfig cfg;
  LayerParam<double> a("w", {0.7, 0.2}), b("w", {0.7, 0.2});
  lagged_apply<double>(a, Vec{0.1, 0.3}, cfg);
  apply_gradient<double>(b, Vec{0.1, 0.3}, cfg);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_FALSE(a.lagged);
}

TEST(Config, Validation) {
  OptimConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  auto bad = cfg;
  bad.lag = 2;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.momentum = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.lr = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.epsilon = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  LayerParam<double> p("w", {1.0});
  bad = cfg;
  bad.lag = 3;
  EXPECT_THROW(lagged_apply<double>(p, Vec{1.0}, bad), ConfigError);
}

}  // namespace
}  // namespace dlscale::optim
