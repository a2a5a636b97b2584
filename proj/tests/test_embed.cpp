#include <gtest/gtest.h>

#include "support/checks.hpp"

using namespace biopt;
using namespace biopt::checks;

namespace {

EmbedSpec small_spec() {
  EmbedSpec s;
  s.widths = {3, 4, 3};
  return s;
}

}  // namespace

TEST(EmbedSpec, ResolvesDefaults) {
  EmbedSpec s;
  s.widths = {3, 16, 32, 32};
  const auto r = s.resolved();
  EXPECT_EQ(r.kernels, (std::vector<std::size_t>{3, 3, 3}));
  EXPECT_EQ(r.strides, (std::vector<int>{2, 2, 1}));
  EXPECT_EQ(r.dilations, (std::vector<int>{1, 1, 1}));
  EXPECT_EQ(r.downsample(), 4);
}

TEST(EmbedSpec, RejectsInvalidLayouts) {
  EmbedSpec s;
  s.widths = {3};
  EXPECT_THROW(s.resolved(), ConfigError);
  s.widths = {3, 4};
  s.kernels = {2};
  EXPECT_THROW(s.resolved(), ConfigError);
  s.kernels = {3, 3};
  EXPECT_THROW(s.resolved(), ConfigError);
}

TEST(EmbedInit, DeterministicAndBounded) {
  const auto a = embed_init(small_spec(), 5), b = embed_init(small_spec(), 5), c = embed_init(small_spec(), 6);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto& l : a.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.kernel.dim(0) * l.kernel.dim(1) * l.kernel.dim(2)));
    for (double v : l.kernel.values()) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(EmbedForward, OutputShapeFollowsStrides) {
  EmbedSpec s;
  s.widths = {3, 16, 32, 32};
  const auto p = embed_init(s, 1);
  const auto out = embed_forward(Tensor({64, 64, 3}, 0.5), p);
  EXPECT_EQ(out.features.shape(), (Shape{16, 16, 32}));
}

TEST(EmbedForward, ZeroImageGivesZeroFeatures) {
  const auto p = embed_init(small_spec(), 2);
  const auto out = embed_forward(Tensor({8, 8, 3}), p);
  for (double v : out.features.values()) EXPECT_EQ(v, 0.0);
}

TEST(EmbedForward, RejectsIndivisibleOrWrongChannels) {
  const auto p = embed_init(small_spec(), 2);
  EXPECT_THROW(embed_forward(Tensor({10, 8, 3}), p), ShapeError);
  EXPECT_THROW(embed_forward(Tensor({8, 8, 1}), p), ShapeError);
}

TEST(EmbedForward, PositivelyHomogeneous) {
  CounterRng rng(3);
  const auto p = embed_init(small_spec(), 3);
  const Tensor img = random_tensor({8, 8, 3}, rng, 0.0, 1.0);
  const Tensor a = embed_forward(img, p).features;
  const Tensor b = embed_forward(2.0 * img, p).features;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 2.0 * a[i], 1e-12);
}

TEST(EmbedBackward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CounterRng rng = CounterRng(seed).derive("embed-test");
    EmbedParams p = embed_init(small_spec(), seed);
    const Tensor img = random_tensor({8, 8, 3}, rng, 0.0, 1.0);
    const auto base = embed_forward(img, p);
    const Tensor G = random_tensor(base.features.shape(), rng);
    const auto grads = embed_backward(p, base.cache, G);
    auto pattern = [](const EmbedCache& c) {
      std::vector<bool> b;
      for (const auto& t : c.pre)
        for (double v : t.values()) b.push_back(v > 0.0);
      return b;
    };
    const auto want = pattern(base.cache);
    EmbedCache last;
    auto loss = [&] {
      auto o = embed_forward(img, p);
      last = o.cache;
      double s = 0.0;
      for (std::size_t i = 0; i < G.size(); ++i) s += G[i] * o.features[i];
      return s;
    };
    auto smooth = [&] { return pattern(last) == want; };
    FdStats st;
    for (std::size_t l = 0; l < p.layers.size(); ++l)
      st.merge(fd_compare(p.layers[l].kernel, grads.kernels[l], loss, smooth, smooth));
    EXPECT_LT(st.rel(), 1e-6) << "seed " << seed;
    EXPECT_GT(st.coords, st.skipped);
  }
}

TEST(EmbedBackward, ZeroGradientGivesZeroGrads) {
  const auto p = embed_init(small_spec(), 4);
  const auto out = embed_forward(Tensor({8, 8, 3}, 0.3), p);
  const auto g = embed_backward(p, out.cache, Tensor(out.features.shape()));
  for (const auto& k : g.kernels)
    for (double v : k.values()) EXPECT_EQ(v, 0.0);
}

TEST(EmbedBackward, RejectsStaleCache) {
  auto p = embed_init(small_spec(), 4);
  const auto out = embed_forward(Tensor({8, 8, 3}, 0.3), p);
  p.layers[0].kernel[0] += 1e-3;
  EXPECT_THROW(embed_backward(p, out.cache, Tensor(out.features.shape())), ShapeError);
}
