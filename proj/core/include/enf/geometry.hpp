#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace enf {

using Vec2 = std::array<double, 2>;
using Vec3 = std::array<double, 3>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Wraps an angle into [0, 2*pi).
double canonical_angle(double theta);

enum class GroupKind : std::uint8_t {
  Trivial = 0,
  Translation2 = 1,
  RotoTranslation2 = 2,
  Translation3 = 3,
};

const char* to_string(GroupKind kind);

/// Element of the trivial group, R^2, SE(2) or R^3.
///
/// Only the fields meaningful for `kind` are used: `t[0..1]` for the planar
/// kinds, `t[0..2]` for Translation3, `theta` for RotoTranslation2 (kept in
/// [0, 2*pi)). A Trivial element used as a pose carries a free position in
/// `t[0..1]`.
struct GroupElement {
  GroupKind kind = GroupKind::Trivial;
  Vec3 t{0.0, 0.0, 0.0};
  double theta = 0.0;

  static GroupElement identity(GroupKind kind);
  static GroupElement translation(double tx, double ty);
  static GroupElement roto_translation(double tx, double ty, double theta);
  static GroupElement translation3(double tx, double ty, double tz);
  /// Trivial-kind pose at a free position.
  static GroupElement point(double x, double y);

  Vec2 position() const { return {t[0], t[1]}; }

  bool operator==(const GroupElement&) const = default;
};

/// Poses use the same parameterization as group elements.
using Pose = GroupElement;

/// Family of bi-invariant attributes a(x, p).
enum class BiInvariantKind : std::uint8_t { None = 0, Translation = 1, RotoTranslation = 2 };

const char* to_string(BiInvariantKind kind);
/// Accepts "None", "Translation", "RotoTranslation" (case-insensitive).
BiInvariantKind parse_bi_invariant_kind(std::string_view name);

/// Group kind of the poses paired with an attribute family.
GroupKind pose_kind(BiInvariantKind kind);
/// Scalars per pose in tensor form: (tx, ty[, theta]).
std::size_t pose_dim(BiInvariantKind kind);
/// Length of a(x, p): 4 for None, 2 otherwise.
std::size_t attribute_dim(BiInvariantKind kind);

GroupElement group_product(const GroupElement& g, const GroupElement& h);
GroupElement group_inverse(const GroupElement& g);

/// g x: R x + t, x + t, or x for the trivial group.
Vec2 act_on_point(const GroupElement& g, const Vec2& x);
Vec3 act_on_point3(const GroupElement& g, const Vec3& x);

/// g p. The acting element must belong to (a subgroup of) the pose's group;
/// Trivial poses are free points and accept any planar g.
Pose act_on_pose(const GroupElement& g, const Pose& p);

/// a(x, p) for the given family: x - t, R(-theta)(x - t), or (p_pos, x).
std::vector<double> bi_invariant(BiInvariantKind kind, const Vec2& x, const Pose& p);

}  // namespace enf
