#include <gtest/gtest.h>

#include "support/checks.hpp"

using namespace biopt;
using namespace biopt::checks;

TEST(MaskedAveragePool, HandComputedMeans) {
  Tensor f({1, 3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6});
  LabelMask m(1, 3, std::vector<int>{0, 1, 1});
  const auto r = masked_average_pool(f, m, 3);
  EXPECT_EQ(r.protos.protos.vec(), (std::vector<double>{1, 2, 4, 5, 0, 0}));
  EXPECT_EQ(r.counts, (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_TRUE(r.empty[2]);
  EXPECT_TRUE(r.any_empty());
}

TEST(MaskedAveragePool, PoolsShotsJointly) {
  Tensor a({1, 2, 1}, std::vector<double>{1, 3}), b({1, 2, 1}, std::vector<double>{5, 100});
  LabelMask ma(1, 2, std::vector<int>{1, 1}), mb(1, 2, std::vector<int>{1, 0});
  const Tensor fs[] = {a, b};
  const LabelMask ms[] = {ma, mb};
  const auto r = masked_average_pool(fs, ms, 2);
  EXPECT_DOUBLE_EQ(r.protos.protos(1, 0), 3.0);
  EXPECT_DOUBLE_EQ(r.protos.protos(0, 0), 100.0);
}

TEST(MaskedAveragePool, RejectsMismatches) {
  EXPECT_THROW(masked_average_pool(Tensor({2, 2, 1}), LabelMask(2, 3), 2), ShapeError);
  EXPECT_THROW(masked_average_pool(Tensor({2, 2, 1}), LabelMask(2, 2, 5), 2), ShapeError);
}

TEST(CosineScores, InvariantToPositiveRescaling) {
  CounterRng rng(1);
  const Tensor Q = random_tensor({4, 4, 5}, rng);
  const PrototypeSet P{random_tensor({3, 5}, rng)};
  const Tensor a = cosine_score_map(Q, P, 20.0);
  const Tensor b = cosine_score_map(3.5 * Q, PrototypeSet{0.2 * P.protos}, 20.0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(CosineScores, BoundedByAlphaAndZeroForZeroPixels) {
  CounterRng rng(2);
  Tensor Q = random_tensor({3, 3, 4}, rng);
  for (std::size_t ch = 0; ch < 4; ++ch) Q(1, 1, ch) = 0.0;
  const PrototypeSet P{random_tensor({2, 4}, rng)};
  const Tensor s = cosine_score_map(Q, P, 20.0);
  for (double v : s.values()) EXPECT_LE(std::abs(v), 20.0 + 1e-12);
  const std::size_t p = 1 * 3 + 1;
  EXPECT_EQ(s[p * 2], 0.0);
  EXPECT_EQ(s[p * 2 + 1], 0.0);
}

TEST(HardMask, TiesGoToLowestIndex) {
  SoftMask s{Tensor({1, 2, 3}, std::vector<double>{0.4, 0.4, 0.2, 0.1, 0.45, 0.45})};
  EXPECT_EQ(hard_mask(s).labels, (std::vector<int>{0, 1}));
}

TEST(SoftPredictBackward, MatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto st = cosine_ce_grad_instance(s);
    EXPECT_LT(st.rel(), 1e-6) << "seed " << s;
  }
}

TEST(SoftPredictBackward, RejectsZeroNormPrototype) {
  PrototypeSet P{Tensor({2, 2}, std::vector<double>{1, 0, 0, 0})};
  EXPECT_THROW(soft_predict_backward(Tensor({1, 1, 2}, 1.0), P, 20.0, LabelMask(1, 1)), NumericalError);
}

TEST(SoftPredictBackward, PrototypeGradientIsOrthogonalToPrototype) {
  CounterRng rng(5);
  const Tensor Q = random_tensor({2, 3, 3}, rng);
  const PrototypeSet P{random_tensor({3, 3}, rng)};
  const auto g = soft_predict_backward(Q, P, 20.0, random_mask(2, 3, 3, rng));
  for (std::size_t c = 0; c < 3; ++c) {
    double dot = 0.0;
    for (std::size_t ch = 0; ch < 3; ++ch) dot += g.dP(c, ch) * P.protos(c, ch);
    EXPECT_NEAR(dot, 0.0, 1e-12);
  }
}

TEST(SoftPredictBackward, FeatureGradientIsOrthogonalToFeature) {
  CounterRng rng(6);
  const Tensor Q = random_tensor({2, 2, 4}, rng, 0.1, 1.0);
  const PrototypeSet P{random_tensor({3, 4}, rng)};
  const auto g = soft_predict_backward(Q, P, 20.0, random_mask(2, 2, 3, rng));
  for (std::size_t p = 0; p < 4; ++p) {
    double dot = 0.0;
    for (std::size_t ch = 0; ch < 4; ++ch) dot += g.dQ[p * 4 + ch] * Q[p * 4 + ch];
    EXPECT_NEAR(dot, 0.0, 1e-12);
  }
}
