#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "enf/checks.hpp"
#include "enf/downstream.hpp"
#include "enf/error.hpp"
#include "test_util.hpp"

namespace enf {
namespace {

using testing::TempDir;

TEST(RelativePose, IdenticalPosesGiveIdentity) {
  const auto p = GroupElement::roto_translation(0.3, -0.2, 1.0);
  const auto e = relative_pose_invariant(BiInvariantKind::RotoTranslation, p, p);
  ASSERT_EQ(e.size(), 4u);
  EXPECT_NEAR(e[0], 0, 1e-15);
  EXPECT_NEAR(e[1], 0, 1e-15);
  EXPECT_NEAR(e[2], 1, 1e-15);
  EXPECT_NEAR(e[3], 0, 1e-15);
}

TEST(RelativePose, PureTranslationPair) {
  const auto e = relative_pose_invariant(BiInvariantKind::RotoTranslation, GroupElement::roto_translation(1, 0, 0),
                                         GroupElement::roto_translation(0, 0, 0));
  EXPECT_EQ(e, (std::vector<double>{1, 0, 1, 0}));
}

TEST(RelativePose, InvariantUnderGlobalMotion) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1), a(0, kTwoPi);
  for (int i = 0; i < 200; ++i) {
    const auto pi = GroupElement::roto_translation(u(rng), u(rng), a(rng));
    const auto pj = GroupElement::roto_translation(u(rng), u(rng), a(rng));
    const auto g = GroupElement::roto_translation(u(rng), u(rng), a(rng));
    const auto e1 = relative_pose_invariant(BiInvariantKind::RotoTranslation, pi, pj);
    const auto e2 = relative_pose_invariant(BiInvariantKind::RotoTranslation, act_on_pose(g, pi), act_on_pose(g, pj));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(e1[j], e2[j], 1e-10);
  }
}

MpnnConfig small_mpnn(ClassifierKind model, BiInvariantKind kind) {
  MpnnConfig c;
  c.model = model;
  c.kind = kind;
  c.d_latent = 4;
  c.d_node_hidden = 8;
  return c;
}

TEST(Mpnn, SingleLatentDependsOnlyOnContext) {
  const auto cfg = small_mpnn(ClassifierKind::Mpnn, BiInvariantKind::RotoTranslation);
  const auto params = MpnnParams::init(cfg, 1);
  auto z = random_latents(BiInvariantKind::RotoTranslation, 1, 4, 2);
  const auto a = mpnn_forward(z, params, cfg);
  z.points[0].pose = GroupElement::roto_translation(0.9, -0.7, 2.0);
  const auto b = mpnn_forward(z, params, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
  z.points[0].context[0] += 0.5;
  EXPECT_NE(mpnn_forward(z, params, cfg), a);
}

TEST(Mpnn, InvariantToPermutation) {
  const auto cfg = small_mpnn(ClassifierKind::Mpnn, BiInvariantKind::RotoTranslation);
  const auto params = MpnnParams::init(cfg, 1);
  auto z = random_latents(BiInvariantKind::RotoTranslation, 5, 4, 3);
  const auto a = mpnn_forward(z, params, cfg);
  std::rotate(z.points.begin(), z.points.begin() + 2, z.points.end());
  const auto b = mpnn_forward(z, params, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-13);
}

class MpnnInvariance : public ::testing::TestWithParam<BiInvariantKind> {};

TEST_P(MpnnInvariance, LogitsUnchangedUnderGlobalTransform) {
  const BiInvariantKind kind = GetParam();
  const auto cfg = small_mpnn(ClassifierKind::Mpnn, kind);
  const auto params = MpnnParams::init(cfg, 5);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1), a(0, kTwoPi);
  for (int i = 0; i < 20; ++i) {
    const auto z = random_latents(kind, 6, 4, rng(), DType::F32);
    const auto g = kind == BiInvariantKind::RotoTranslation ? GroupElement::roto_translation(u(rng), u(rng), a(rng))
                                                            : GroupElement::translation(u(rng), u(rng));
    const auto l1 = mpnn_forward(z, params, cfg), l2 = mpnn_forward(act_on_latent_set(g, z), params, cfg);
    for (std::size_t j = 0; j < l1.size(); ++j) EXPECT_NEAR(l1[j], l2[j], 1e-6);
  }
}

INSTANTIATE_TEST_SUITE_P(Kinds, MpnnInvariance,
                         ::testing::Values(BiInvariantKind::Translation, BiInvariantKind::RotoTranslation));

TEST(Mpnn, NoneKindSeesAbsolutePositions) {
  const auto cfg = small_mpnn(ClassifierKind::Mpnn, BiInvariantKind::None);
  const auto params = MpnnParams::init(cfg, 5);
  const auto z = random_latents(BiInvariantKind::None, 4, 4, 8);
  const auto l1 = mpnn_forward(z, params, cfg);
  const auto l2 = mpnn_forward(act_on_latent_set(GroupElement::translation(0.5, 0.3), z), params, cfg);
  double diff = 0.0;
  for (std::size_t j = 0; j < l1.size(); ++j) diff += std::abs(l1[j] - l2[j]);
  EXPECT_GT(diff, 1e-6);
}

std::vector<LatentSet> random_sets(std::size_t n, std::uint64_t seed, std::vector<int>& labels, int classes,
                                   bool informative) {
  std::mt19937_64 rng(seed);
  std::vector<LatentSet> out;
  labels.clear();
  for (std::size_t i = 0; i < n; ++i) {
    auto z = random_latents(BiInvariantKind::RotoTranslation, 4, 4, rng());
    const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
    if (informative) {
      for (auto& p : z.points) p.context[0] = 0.3 * p.context[0] + (label == 0 ? 1.0 : -1.0);
    }
    out.push_back(z);
    labels.push_back(label);
  }
  return out;
}

TEST(TrainClassifier, SingleClassIsPerfect) {
  std::vector<int> labels, test_labels;
  const auto train = random_sets(12, 1, labels, 1, false);
  const auto test = random_sets(6, 2, test_labels, 1, false);
  auto cfg = small_mpnn(ClassifierKind::Mpnn, BiInvariantKind::RotoTranslation);
  cfg.n_classes = 1;
  ClassifierTrainConfig tc;
  tc.epochs = 2;
  const auto r = train_classifier(train, labels, test, test_labels, cfg, tc);
  EXPECT_EQ(r.report.test_accuracy, 1.0);
}

TEST(TrainClassifier, LearnsASeparableSignal) {
  std::vector<int> labels, test_labels;
  const auto train = random_sets(40, 1, labels, 2, true);
  const auto test = random_sets(20, 2, test_labels, 2, true);
  auto cfg = small_mpnn(ClassifierKind::MeanContext, BiInvariantKind::RotoTranslation);
  cfg.n_classes = 2;
  ClassifierTrainConfig tc;
  tc.epochs = 40;
  tc.lr = 1e-2;
  const auto r = train_classifier(train, labels, test, test_labels, cfg, tc);
  EXPECT_GE(r.report.test_accuracy, 0.95);
  EXPECT_DOUBLE_EQ(accuracy(test, test_labels, r.params, cfg), r.report.test_accuracy);
}

TEST(TrainClassifier, ShuffledLabelsStayNearChance) {
  std::vector<int> labels, test_labels;
  const auto train = random_sets(60, 3, labels, 3, false);
  const auto test = random_sets(90, 4, test_labels, 3, false);
  std::mt19937_64 rng(5);
  std::shuffle(labels.begin(), labels.end(), rng);
  const auto cfg = small_mpnn(ClassifierKind::Mpnn, BiInvariantKind::RotoTranslation);
  ClassifierTrainConfig tc;
  tc.epochs = 30;
  const auto r = train_classifier(train, labels, test, test_labels, cfg, tc);
  EXPECT_NEAR(r.report.test_accuracy, 1.0 / 3.0, 0.15);
}

TEST(TrainClassifier, LabelOutOfRangeThrows) {
  std::vector<int> labels;
  const auto train = random_sets(4, 1, labels, 2, false);
  labels[0] = 7;
  const auto cfg = small_mpnn(ClassifierKind::Mpnn, BiInvariantKind::RotoTranslation);
  EXPECT_THROW(train_classifier(train, labels, {}, {}, cfg, {}), Error);
}

TEST(Classifier, SaveLoadRoundTrip) {
  TempDir dir("clf");
  const auto cfg = small_mpnn(ClassifierKind::Mpnn, BiInvariantKind::RotoTranslation);
  const auto params = MpnnParams::init(cfg, 3);
  save_classifier(dir / "c.enfk", cfg, params);
  const auto [c2, p2] = load_classifier(dir / "c.enfk");
  EXPECT_EQ(c2, cfg);
  const auto z = random_latents(BiInvariantKind::RotoTranslation, 3, 4, 1);
  EXPECT_EQ(mpnn_forward(z, p2, c2), mpnn_forward(z, params, cfg));
}

TEST(Classifier, ConfigJsonRejectsUnknownKeys) {
  MpnnConfig c;
  EXPECT_EQ(MpnnConfig::from_json(c.to_json()), c);
  EXPECT_THROW(MpnnConfig::from_json(R"({"layers": 2})"), ConfigError);
}

}  // namespace
}  // namespace enf
