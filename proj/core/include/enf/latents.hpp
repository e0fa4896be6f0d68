#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "enf/geometry.hpp"
#include "enf/tensor.hpp"

namespace enf {

struct LatentPoint {
  Pose pose;
  std::vector<double> context;
  /// Per-latent window scale. Carried through persistence, ignored by the field.
  std::optional<double> window_scale;

  bool operator==(const LatentPoint&) const = default;
};

/// Conditioning point cloud z = {(p_i, c_i)}.
struct LatentSet {
  std::vector<LatentPoint> points;
  std::size_t d_latent = 0;
  BiInvariantKind kind = BiInvariantKind::Translation;
  std::optional<std::string> sample_id;
  /// Precision used when the set is written to disk.
  DType dtype = DType::F64;

  std::size_t size() const { return points.size(); }

  /// Throws ContractError unless N >= 1 and every point has the set's
  /// d_latent and pose kind.
  void validate() const;

  /// [N x d_latent] contexts.
  Tensor context_tensor() const;
  /// [N x pose_dim(kind)] rows of (tx, ty[, theta]).
  Tensor pose_tensor() const;

  /// Inverse of context_tensor()/pose_tensor(); angles are canonicalized.
  static LatentSet from_tensors(BiInvariantKind kind, const Tensor& contexts, const Tensor& poses,
                                std::optional<std::string> sample_id = std::nullopt);

  bool operator==(const LatentSet&) const = default;
};

/// Poses on the cell centres of an a x b grid over [-1,1]^2 (a*b = N with
/// |a-b| minimal, a rows, b columns, row-major), each coordinate perturbed by
/// N(0, noise_std^2). Orientations are 0.
std::vector<Pose> init_grid_poses(std::size_t n, BiInvariantKind kind, double noise_std,
                                  std::uint64_t seed);

/// Greedy farthest-point subset of `candidates`. The first pick is drawn
/// with `seed`; ties go to the lowest candidate index. Orientations are 0.
std::vector<Pose> init_fps_poses(std::size_t n, const std::vector<Vec2>& candidates, std::uint64_t seed,
                                 BiInvariantKind kind = BiInvariantKind::Translation);

/// Zero contexts at the given poses.
LatentSet make_latent_set(const std::vector<Pose>& poses, std::size_t d_latent, BiInvariantKind kind,
                          DType dtype = DType::F64);

using Region = std::function<bool(const Vec2&)>;

/// {x : normal . x < offset}.
struct HalfPlane {
  Vec2 normal{1.0, 0.0};
  double offset = 0.0;

  bool contains(const Vec2& x) const { return normal[0] * x[0] + normal[1] * x[1] < offset; }
  Region region() const {
    return [*this](const Vec2& x) { return contains(x); };
  }
};

/// Points of `a` inside `region` followed by points of `b` outside it.
LatentSet stitch(const LatentSet& a, const LatentSet& b, const Region& region);

/// g z = {(g p_i, c_i)}; contexts and metadata are untouched.
LatentSet act_on_latent_set(const GroupElement& g, const LatentSet& z);

void save_latents(const std::filesystem::path& path, const std::vector<LatentSet>& sets);
std::vector<LatentSet> load_latents(const std::filesystem::path& path);

}  // namespace enf
