#include <gtest/gtest.h>

#include "support/checks.hpp"

using namespace biopt;
using namespace biopt::checks;

TEST(WeightGenerator, ZeroParametersGiveHalf) {
  CounterRng rng(1);
  const PrototypeSet ps{random_tensor({3, 4}, rng)}, pp{random_tensor({3, 4}, rng)};
  const auto w = generate_weights(ps, pp, WeightGenerator::zeros(4));
  for (double v : w.omega.values()) EXPECT_EQ(v, 0.5);
  const auto p0 = init_query_protos(ps, pp, w);
  for (std::size_t i = 0; i < p0.protos.size(); ++i) EXPECT_EQ(p0.protos[i], (ps.protos[i] + pp.protos[i]) / 2.0);
}

TEST(WeightGenerator, LargeBiasSaturates) {
  CounterRng rng(2);
  const PrototypeSet ps{random_tensor({2, 3}, rng)}, pp{random_tensor({2, 3}, rng)};
  auto gen = WeightGenerator::zeros(3);
  for (double& b : gen.b.values()) b = 10.0;
  const auto w = generate_weights(ps, pp, gen);
  for (double v : w.omega.values()) EXPECT_NEAR(v, 1.0 / (1.0 + std::exp(-10.0)), 1e-15);
}

TEST(WeightGenerator, SharedAcrossClassRows) {
  CounterRng rng(3);
  Tensor s({2, 3}), t({2, 3});
  for (std::size_t ch = 0; ch < 3; ++ch) {
    s(0, ch) = s(1, ch) = rng.uniform();
    t(0, ch) = t(1, ch) = rng.uniform();
  }
  WeightGenerator gen{random_tensor({3, 6}, rng), random_tensor({3}, rng)};
  const auto w = generate_weights(PrototypeSet{s}, PrototypeSet{t}, gen);
  for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(w.omega(0, ch), w.omega(1, ch));
}

TEST(WeightGenerator, OmegaStrictlyInsideUnitInterval) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CounterRng rng(seed);
    const PrototypeSet ps{random_tensor({3, 5}, rng)}, pp{random_tensor({3, 5}, rng)};
    WeightGenerator gen{random_tensor({5, 10}, rng, -3, 3), random_tensor({5}, rng, -3, 3)};
    const auto w = generate_weights(ps, pp, gen);
    const auto p0 = init_query_protos(ps, pp, w);
    for (std::size_t i = 0; i < w.omega.size(); ++i) {
      EXPECT_GT(w.omega[i], 0.0);
      EXPECT_LT(w.omega[i], 1.0);
      EXPECT_GE(p0.protos[i], std::min(ps.protos[i], pp.protos[i]) - 1e-15);
      EXPECT_LE(p0.protos[i], std::max(ps.protos[i], pp.protos[i]) + 1e-15);
    }
  }
}

TEST(WeightGenerator, RejectsShapeMismatch) {
  const PrototypeSet ps{Tensor({2, 3}, 1.0)}, pp{Tensor({2, 3}, 1.0)};
  EXPECT_THROW(generate_weights(ps, pp, WeightGenerator::zeros(4)), ShapeError);
  EXPECT_THROW(generate_weights(ps, PrototypeSet{Tensor({3, 3}, 1.0)}, WeightGenerator::zeros(3)), ShapeError);
}

TEST(InitQueryProtos, Endpoints) {
  const PrototypeSet ps{Tensor({1, 2}, std::vector<double>{2, 0})}, pp{Tensor({1, 2}, std::vector<double>{0, 2})};
  EXPECT_EQ(init_query_protos(ps, pp, WeightTensor{Tensor({1, 2}, 1.0)}), ps);
  EXPECT_EQ(init_query_protos(ps, pp, WeightTensor{Tensor({1, 2}, 0.0)}), pp);
  EXPECT_EQ(init_query_protos(ps, pp, WeightTensor{Tensor({1, 2}, 0.5)}).protos.vec(), (std::vector<double>{1, 1}));
}

TEST(GeneratorBackward, MatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto st = generator_grad_instance(s);
    EXPECT_LT(st.rel(), 1e-6) << "seed " << s;
  }
}

TEST(GeneratorBackward, BiasGradientAtZeroIsQuarterSum) {
  CounterRng rng(7);
  const PrototypeSet ps{random_tensor({3, 2}, rng)}, pp{random_tensor({3, 2}, rng)};
  const Tensor G = random_tensor({3, 2}, rng);
  const auto g = weight_generator_backward(ps, pp, WeightGenerator::zeros(2), G);
  for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(g.db[o], 0.25 * (G(0, o) + G(1, o) + G(2, o)), 1e-15);
  const auto z = weight_generator_backward(ps, pp, WeightGenerator::zeros(2), Tensor({3, 2}));
  for (double v : z.dW.values()) EXPECT_EQ(v, 0.0);
}

TEST(TempQueryProtos, AbsentClassFallsBackToSupport) {
  Tensor Q({1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  const PrototypeSet support{Tensor({3, 2}, std::vector<double>{1, 0, 0, 1, 1, 1})};
  const auto t = temp_query_protos(Q, LabelMask(1, 2, std::vector<int>{0, 1}), support);
  EXPECT_FALSE(t.fell_back[0]);
  EXPECT_FALSE(t.fell_back[1]);
  EXPECT_TRUE(t.fell_back[2]);
  EXPECT_EQ(t.protos.protos(2, 0), 1.0);
  EXPECT_EQ(t.protos.protos(2, 1), 1.0);
}

TEST(TargetMask, OmegaOneReproducesTemporaryMask) {
  CounterRng rng(8);
  const Tensor Q = random_tensor({6, 6, 4}, rng);
  const PrototypeSet ps{random_tensor({3, 4}, rng)};
  const auto tm = temp_query_mask(Q, ps, 20.0);
  const auto tp = temp_query_protos(Q, tm.hard, ps);
  const auto p0 = init_query_protos(ps, tp.protos, WeightTensor{Tensor({3, 4}, 1.0)});
  EXPECT_EQ(build_target_mask(Q, p0, 20.0).hard, tm.hard);
}
