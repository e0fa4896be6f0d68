#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "enf/error.hpp"
#include "enf/geometry.hpp"

namespace enf {
namespace {

constexpr double kTol = 1e-12;

void expect_near(const GroupElement& a, const GroupElement& b, double tol = kTol) {
  EXPECT_EQ(a.kind, b.kind);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a.t[i], b.t[i], tol);
  const double d = std::remainder(a.theta - b.theta, kTwoPi);
  EXPECT_NEAR(d, 0.0, tol);
}

GroupElement random_se2(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0), a(0.0, kTwoPi);
  return GroupElement::roto_translation(u(rng), u(rng), a(rng));
}

TEST(GroupProduct, TranslationsCommute) {
  const auto g = GroupElement::roto_translation(1, 0, 0), h = GroupElement::roto_translation(0, 1, 0);
  expect_near(group_product(g, h), GroupElement::roto_translation(1, 1, 0));
  expect_near(group_product(h, g), GroupElement::roto_translation(1, 1, 0));
}

TEST(GroupProduct, RotationThenTranslationByHand) {
  const auto g = GroupElement::roto_translation(0, 0, kPi / 2), h = GroupElement::roto_translation(1, 0, 0);
  expect_near(group_product(g, h), GroupElement::roto_translation(0, 1, kPi / 2));
}

TEST(GroupProduct, IdentityIsNeutral) {
  std::mt19937_64 rng(1);
  const auto g = random_se2(rng);
  const auto e = GroupElement::identity(GroupKind::RotoTranslation2);
  expect_near(group_product(g, e), g);
  expect_near(group_product(e, g), g);
}

TEST(GroupProduct, IsAssociative) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_se2(rng), b = random_se2(rng), c = random_se2(rng);
    expect_near(group_product(group_product(a, b), c), group_product(a, group_product(b, c)), 1e-12);
  }
}

TEST(GroupProduct, KindMismatchThrows) {
  EXPECT_THROW(group_product(GroupElement::translation(1, 0), GroupElement::translation3(0, 0, 1)),
               KindMismatchError);
}

TEST(GroupInverse, TranslationNegates) {
  expect_near(group_inverse(GroupElement::roto_translation(1, 1, 0)), GroupElement::roto_translation(-1, -1, 0));
}

TEST(GroupInverse, ComposesToIdentity) {
  std::mt19937_64 rng(3);
  const auto e = GroupElement::identity(GroupKind::RotoTranslation2);
  for (int i = 0; i < 100; ++i) {
    const auto g = random_se2(rng);
    expect_near(group_product(group_inverse(g), g), e);
    expect_near(group_product(g, group_inverse(g)), e);
  }
  const auto g = GroupElement::roto_translation(1, 0, kPi / 2);
  expect_near(group_inverse(g), GroupElement::roto_translation(0, 1, 3 * kPi / 2));
}

TEST(ActOnPoint, Examples) {
  const Vec2 a = act_on_point(GroupElement::roto_translation(1, 1, 0), {0, 0});
  EXPECT_NEAR(a[0], 1, kTol);
  EXPECT_NEAR(a[1], 1, kTol);
  const Vec2 b = act_on_point(GroupElement::roto_translation(0, 0, kPi / 2), {1, 0});
  EXPECT_NEAR(b[0], 0, kTol);
  EXPECT_NEAR(b[1], 1, kTol);
  const Vec2 c = act_on_point(GroupElement::identity(GroupKind::RotoTranslation2), {0.3, -0.2});
  EXPECT_EQ(c, (Vec2{0.3, -0.2}));
}

TEST(ActOnPoint, IsAGroupAction) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 100; ++i) {
    const auto g = random_se2(rng), h = random_se2(rng);
    const Vec2 x{u(rng), u(rng)};
    const Vec2 lhs = act_on_point(group_product(g, h), x), rhs = act_on_point(g, act_on_point(h, x));
    EXPECT_NEAR(lhs[0], rhs[0], 1e-12);
    EXPECT_NEAR(lhs[1], rhs[1], 1e-12);
  }
}

TEST(ActOnPoint, Translation3) {
  const Vec3 y = act_on_point3(GroupElement::translation3(1, 2, 3), {1, 1, 1});
  EXPECT_EQ(y, (Vec3{2, 3, 4}));
}

TEST(ActOnPose, Examples) {
  const auto p = GroupElement::roto_translation(0.2, 0.3, 1.0);
  expect_near(act_on_pose(GroupElement::identity(GroupKind::RotoTranslation2), p), p);
  expect_near(act_on_pose(GroupElement::roto_translation(1, 0, 0), GroupElement::roto_translation(0, 0, kPi / 4)),
              GroupElement::roto_translation(1, 0, kPi / 4));
  expect_near(act_on_pose(GroupElement::roto_translation(0, 0, kPi / 2), GroupElement::roto_translation(1, 0, 0)),
              GroupElement::roto_translation(0, 1, kPi / 2));
}

TEST(ActOnPose, TranslationActsOnTranslationPose) {
  expect_near(act_on_pose(GroupElement::translation(0.5, 0), GroupElement::translation(0.1, 0.2)),
              GroupElement::translation(0.6, 0.2));
}

TEST(ActOnPose, RotationOnTranslationPoseIsAKindMismatch) {
  EXPECT_THROW(act_on_pose(GroupElement::roto_translation(0, 0, 1.0), GroupElement::translation(0.1, 0.2)),
               KindMismatchError);
}

TEST(CanonicalAngle, WrapsIntoHalfOpenRange) {
  EXPECT_NEAR(canonical_angle(-kPi / 2), 3 * kPi / 2, kTol);
  EXPECT_NEAR(canonical_angle(5 * kPi), kPi, 1e-12);
  EXPECT_EQ(canonical_angle(kTwoPi), 0.0);
  EXPECT_GE(canonical_angle(-1e-300), 0.0);
  EXPECT_LT(canonical_angle(-1e-300), kTwoPi);
}

TEST(BiInvariant, Examples) {
  EXPECT_EQ(bi_invariant(BiInvariantKind::Translation, {3, 4}, GroupElement::translation(1, 1)),
            (std::vector<double>{2, 3}));
  const auto r = bi_invariant(BiInvariantKind::RotoTranslation, {1, 0}, GroupElement::roto_translation(0, 0, kPi / 2));
  ASSERT_EQ(r.size(), 2u);
  EXPECT_NEAR(r[0], 0, kTol);
  EXPECT_NEAR(r[1], -1, kTol);
  EXPECT_EQ(bi_invariant(BiInvariantKind::None, {3, 4}, GroupElement::point(1, 2)), (std::vector<double>{1, 2, 3, 4}));
}

TEST(BiInvariant, DimensionsPerKind) {
  EXPECT_EQ(attribute_dim(BiInvariantKind::None), 4u);
  EXPECT_EQ(attribute_dim(BiInvariantKind::Translation), 2u);
  EXPECT_EQ(attribute_dim(BiInvariantKind::RotoTranslation), 2u);
  EXPECT_EQ(pose_dim(BiInvariantKind::RotoTranslation), 3u);
  EXPECT_EQ(pose_dim(BiInvariantKind::Translation), 2u);
}

class BiInvarianceProperty : public ::testing::TestWithParam<BiInvariantKind> {};

TEST_P(BiInvarianceProperty, HoldsUnderTheGroupAction) {
  const BiInvariantKind kind = GetParam();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto g = kind == BiInvariantKind::RotoTranslation ? random_se2(rng)
                                                            : GroupElement::translation(2 * u(rng), 2 * u(rng));
    const Pose p = kind == BiInvariantKind::RotoTranslation ? random_se2(rng)
                                                            : GroupElement::translation(u(rng), u(rng));
    const Vec2 x{u(rng), u(rng)};
    const auto a = bi_invariant(kind, x, p), b = bi_invariant(kind, act_on_point(g, x), act_on_pose(g, p));
    for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
  }
  EXPECT_LT(worst, 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Kinds, BiInvarianceProperty,
                         ::testing::Values(BiInvariantKind::Translation, BiInvariantKind::RotoTranslation));

TEST(BiInvariance, NoneKindIsNotInvariant) {
  const auto g = GroupElement::translation(0.5, 0.25);
  const Vec2 x{0.1, 0.2};
  const Pose p = GroupElement::point(0.3, -0.4);
  const auto a = bi_invariant(BiInvariantKind::None, x, p);
  const auto b = bi_invariant(BiInvariantKind::None, act_on_point(g, x), act_on_pose(g, p));
  EXPECT_GT(std::abs(a[0] - b[0]), 1e-3);
}

TEST(KindNames, RoundTripAndCaseInsensitive) {
  for (auto k : {BiInvariantKind::None, BiInvariantKind::Translation, BiInvariantKind::RotoTranslation}) {
    EXPECT_EQ(parse_bi_invariant_kind(to_string(k)), k);
  }
  EXPECT_EQ(parse_bi_invariant_kind("rototranslation"), BiInvariantKind::RotoTranslation);
  EXPECT_THROW(parse_bi_invariant_kind("SE3"), ConfigError);
}

}  // namespace
}  // namespace enf
