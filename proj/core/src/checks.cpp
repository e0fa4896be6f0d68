#include "enf/checks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "enf/ops.hpp"

namespace enf {
namespace {

GroupElement random_group_element(BiInvariantKind kind, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-1.0, 1.0), ang(0.0, kTwoPi);
  const double tx = pos(rng), ty = pos(rng), theta = ang(rng);
  // Kind None is exercised with roto-translations: its points accept any planar g.
  if (kind == BiInvariantKind::Translation) return GroupElement::translation(tx, ty);
  return GroupElement::roto_translation(tx, ty, theta);
}

EnfConfig random_config(BiInvariantKind kind, std::mt19937_64& rng) {
  EnfConfig c;
  c.kind = kind;
  c.d_latent = 4;
  c.d_hidden = 8;
  c.num_heads = 2;
  c.rff_dim = 8;
  c.sigma_q = 1.0;
  c.sigma_v = 1.0 + static_cast<double>(rng() % 3);
  return c;
}

}  // namespace

LatentSet random_latents(BiInvariantKind kind, std::size_t n, std::size_t d_latent, std::uint64_t seed,
                         DType dtype) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0), ang(0.0, kTwoPi);
  std::vector<double> contexts(n * d_latent), poses;
  for (auto& v : contexts) v = unit(rng);
  for (std::size_t i = 0; i < n; ++i) {
    poses.push_back(unit(rng));
    poses.push_back(unit(rng));
    if (pose_dim(kind) == 3) poses.push_back(ang(rng));
  }
  return LatentSet::from_tensors(kind, Tensor({n, d_latent}, std::move(contexts), dtype),
                                 Tensor({n, pose_dim(kind)}, std::move(poses), dtype));
}

GradCheckReport enf_gradcheck(std::uint64_t seed, BiInvariantKind kind) {
  std::mt19937_64 rng(seed);
  EnfConfig config;
  config.kind = kind;
  config.d_latent = 8;
  config.d_hidden = 16;
  config.num_heads = 2;
  config.rff_dim = 8;
  const EnfParams params = EnfParams::init(config, rng(), DType::F64);
  const LatentSet z = random_latents(kind, 2, config.d_latent, rng(), DType::F64);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> target(16);
  for (auto& v : target) v = unit(rng);
  const Tensor coords = [] {
    std::vector<double> xs;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        xs.push_back(-1.0 + (2.0 * c + 1.0) / 4.0);
        xs.push_back(-1.0 + (2.0 * r + 1.0) / 4.0);
      }
    }
    return Tensor({16, 2}, std::move(xs));
  }();
  const Tensor target_t({16, 1}, std::move(target));

  std::vector<Tensor> inputs;
  for (const Tensor* t : params.trainable()) inputs.push_back(*t);
  inputs.push_back(z.context_tensor());
  inputs.push_back(z.pose_tensor());
  const LossBuilder loss = [&](Tape& tape, std::span<const Var> v) {
    ParamVars pv;
    pv.W_q = v[0];
    pv.W_k = v[1];
    pv.W_v = v[2];
    pv.W_ag = v[3];
    pv.W_ab = v[4];
    pv.W_o = v[5];
    pv.B_q = tape.constant(params.B_q);
    pv.B_v = tape.constant(params.B_v);
    return mse(field_graph(config, pv, v[6], v[7], coords), tape.constant(target_t));
  };
  return finite_difference_check(loss, inputs, 1e-5, 1e-4);
}

double steerability_deviation(BiInvariantKind kind, std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const EnfConfig config = random_config(kind, rng);
    const EnfParams params = EnfParams::init(config, rng(), DType::F64);
    const LatentSet z = random_latents(kind, 2 + rng() % 4, config.d_latent, rng());
    const GroupElement g = random_group_element(kind, rng);
    const GroupElement g_inv = group_inverse(g);
    const Vec2 x{unit(rng), unit(rng)};
    const Vec2 gx = act_on_point(g_inv, x);
    const Tensor lhs = field_forward(Tensor({1, 2}, {gx[0], gx[1]}), z, params, config);
    const Tensor rhs = field_forward(Tensor({1, 2}, {x[0], x[1]}), act_on_latent_set(g, z), params, config);
    for (std::size_t i = 0; i < lhs.numel(); ++i) worst = std::max(worst, std::abs(lhs[i] - rhs[i]));
  }
  return worst;
}

double bi_invariance_deviation(BiInvariantKind kind, std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0), ang(0.0, kTwoPi);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const GroupElement g = random_group_element(kind, rng);
    const Vec2 x{unit(rng), unit(rng)};
    Pose p = GroupElement::identity(pose_kind(kind));
    p.t[0] = unit(rng);
    p.t[1] = unit(rng);
    if (kind == BiInvariantKind::RotoTranslation) p.theta = ang(rng);
    const auto a = bi_invariant(kind, x, p);
    const auto b = bi_invariant(kind, act_on_point(g, x), act_on_pose(g, p));
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

double knn_equivalence_deviation(std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto kind = static_cast<BiInvariantKind>(rng() % 3);
    EnfConfig config = random_config(kind, rng);
    const EnfParams params = EnfParams::init(config, rng(), DType::F32);
    const std::size_t n = 1 + rng() % 9;
    const LatentSet z = random_latents(kind, n, config.d_latent, rng(), DType::F32);
    const Tensor x({4, 2}, {unit(rng), unit(rng), unit(rng), unit(rng), unit(rng), unit(rng), unit(rng), unit(rng)},
                   DType::F32);
    config.k_nearest.reset();
    const Tensor full = field_forward(x, z, params, config);
    config.k_nearest = n;
    const Tensor knn = field_forward(x, z, params, config);
    for (std::size_t i = 0; i < full.numel(); ++i) worst = std::max(worst, std::abs(full[i] - knn[i]));
  }
  return worst;
}

std::vector<CheckResult> run_property_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back({"steerability/Translation", steerability_deviation(BiInvariantKind::Translation, 100, seed), 1e-10});
  out.push_back({"steerability/RotoTranslation",
                 steerability_deviation(BiInvariantKind::RotoTranslation, 100, seed + 1), 1e-10});
  out.push_back({"steerability/None (must fail)", steerability_deviation(BiInvariantKind::None, 100, seed + 2), 1e-3,
                 false});
  out.push_back(
      {"bi_invariance/Translation", bi_invariance_deviation(BiInvariantKind::Translation, 1000, seed + 3), 1e-10});
  out.push_back({"bi_invariance/RotoTranslation",
                 bi_invariance_deviation(BiInvariantKind::RotoTranslation, 1000, seed + 4), 1e-10});
  out.push_back({"bi_invariance/None (must fail)", bi_invariance_deviation(BiInvariantKind::None, 1000, seed + 5),
                 1e-3, false});
  out.push_back({"knn_equivalence", knn_equivalence_deviation(100, seed + 6), 1e-6});
  out.push_back({"gradcheck", enf_gradcheck(seed + 7).max_error, 1e-4});
  return out;
}

}  // namespace enf
