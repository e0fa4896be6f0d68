#include "enf/geometry.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "enf/error.hpp"

namespace enf {
namespace {

bool is_planar(GroupKind k) { return k != GroupKind::Translation3; }

Vec2 rotate(double theta, const Vec2& v) {
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * v[0] - s * v[1], s * v[0] + c * v[1]};
}

// Views a planar element as an SE(2) element.
GroupElement promote_to_se2(const GroupElement& g) {
  return GroupElement::roto_translation(g.t[0], g.t[1], g.kind == GroupKind::RotoTranslation2 ? g.theta : 0.0);
}

[[noreturn]] void mismatch(const char* op, GroupKind a, GroupKind b) {
  throw KindMismatchError(std::string(op) + ": incompatible kinds " + to_string(a) + " and " + to_string(b));
}

}  // namespace

double canonical_angle(double theta) {
  double r = std::fmod(theta, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  // fmod of a tiny negative value can round up to exactly 2*pi.
  if (r >= kTwoPi) r = 0.0;
  return r;
}

const char* to_string(GroupKind kind) {
  switch (kind) {
    case GroupKind::Trivial: return "Trivial";
    case GroupKind::Translation2: return "Translation2";
    case GroupKind::RotoTranslation2: return "RotoTranslation2";
    case GroupKind::Translation3: return "Translation3";
  }
  return "?";
}

GroupElement GroupElement::identity(GroupKind kind) {
  GroupElement g;
  g.kind = kind;
  return g;
}

GroupElement GroupElement::translation(double tx, double ty) {
  return {GroupKind::Translation2, {tx, ty, 0.0}, 0.0};
}

GroupElement GroupElement::roto_translation(double tx, double ty, double theta) {
  return {GroupKind::RotoTranslation2, {tx, ty, 0.0}, canonical_angle(theta)};
}

GroupElement GroupElement::translation3(double tx, double ty, double tz) {
  return {GroupKind::Translation3, {tx, ty, tz}, 0.0};
}

GroupElement GroupElement::point(double x, double y) { return {GroupKind::Trivial, {x, y, 0.0}, 0.0}; }

const char* to_string(BiInvariantKind kind) {
  switch (kind) {
    case BiInvariantKind::None: return "None";
    case BiInvariantKind::Translation: return "Translation";
    case BiInvariantKind::RotoTranslation: return "RotoTranslation";
  }
  return "?";
}

BiInvariantKind parse_bi_invariant_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "none") return BiInvariantKind::None;
  if (lower == "translation") return BiInvariantKind::Translation;
  if (lower == "rototranslation") return BiInvariantKind::RotoTranslation;
  throw ConfigError("unknown bi-invariant kind '" + std::string(name) + "'");
}

GroupKind pose_kind(BiInvariantKind kind) {
  switch (kind) {
    case BiInvariantKind::None: return GroupKind::Trivial;
    case BiInvariantKind::Translation: return GroupKind::Translation2;
    case BiInvariantKind::RotoTranslation: return GroupKind::RotoTranslation2;
  }
  return GroupKind::Trivial;
}

std::size_t pose_dim(BiInvariantKind kind) { return kind == BiInvariantKind::RotoTranslation ? 3 : 2; }

std::size_t attribute_dim(BiInvariantKind kind) { return kind == BiInvariantKind::None ? 4 : 2; }

GroupElement group_product(const GroupElement& g, const GroupElement& h) {
  if (g.kind != h.kind) mismatch("group_product", g.kind, h.kind);
  switch (g.kind) {
    case GroupKind::Trivial: return GroupElement::identity(GroupKind::Trivial);
    case GroupKind::Translation2: return GroupElement::translation(g.t[0] + h.t[0], g.t[1] + h.t[1]);
    case GroupKind::Translation3:
      return GroupElement::translation3(g.t[0] + h.t[0], g.t[1] + h.t[1], g.t[2] + h.t[2]);
    case GroupKind::RotoTranslation2: {
      const Vec2 rt = rotate(g.theta, h.position());
      return GroupElement::roto_translation(g.t[0] + rt[0], g.t[1] + rt[1], g.theta + h.theta);
    }
  }
  return g;
}

GroupElement group_inverse(const GroupElement& g) {
  switch (g.kind) {
    case GroupKind::Trivial: return g;
    case GroupKind::Translation2: return GroupElement::translation(-g.t[0], -g.t[1]);
    case GroupKind::Translation3: return GroupElement::translation3(-g.t[0], -g.t[1], -g.t[2]);
    case GroupKind::RotoTranslation2: {
      const Vec2 rt = rotate(-g.theta, g.position());
      return GroupElement::roto_translation(-rt[0], -rt[1], -g.theta);
    }
  }
  return g;
}

Vec2 act_on_point(const GroupElement& g, const Vec2& x) {
  switch (g.kind) {
    case GroupKind::Trivial: return x;
    case GroupKind::Translation2: return {x[0] + g.t[0], x[1] + g.t[1]};
    case GroupKind::RotoTranslation2: {
      const Vec2 r = rotate(g.theta, x);
      return {r[0] + g.t[0], r[1] + g.t[1]};
    }
    case GroupKind::Translation3: break;
  }
  throw KindMismatchError("act_on_point: Translation3 element cannot act on a planar point");
}

Vec3 act_on_point3(const GroupElement& g, const Vec3& x) {
  if (g.kind == GroupKind::Trivial) return x;
  if (g.kind != GroupKind::Translation3) mismatch("act_on_point3", g.kind, GroupKind::Translation3);
  return {x[0] + g.t[0], x[1] + g.t[1], x[2] + g.t[2]};
}

Pose act_on_pose(const GroupElement& g, const Pose& p) {
  switch (p.kind) {
    case GroupKind::Trivial: {
      if (!is_planar(g.kind)) mismatch("act_on_pose", g.kind, p.kind);
      const Vec2 moved = act_on_point(g, p.position());
      return GroupElement::point(moved[0], moved[1]);
    }
    case GroupKind::Translation2:
      if (g.kind == GroupKind::Trivial) return p;
      if (g.kind != GroupKind::Translation2) mismatch("act_on_pose", g.kind, p.kind);
      return group_product(g, p);
    case GroupKind::Translation3:
      if (g.kind == GroupKind::Trivial) return p;
      if (g.kind != GroupKind::Translation3) mismatch("act_on_pose", g.kind, p.kind);
      return group_product(g, p);
    case GroupKind::RotoTranslation2:
      if (!is_planar(g.kind)) mismatch("act_on_pose", g.kind, p.kind);
      return group_product(promote_to_se2(g), p);
  }
  return p;
}

std::vector<double> bi_invariant(BiInvariantKind kind, const Vec2& x, const Pose& p) {
  if (p.kind != pose_kind(kind)) mismatch("bi_invariant", p.kind, pose_kind(kind));
  switch (kind) {
    case BiInvariantKind::Translation: return {x[0] - p.t[0], x[1] - p.t[1]};
    case BiInvariantKind::RotoTranslation: {
      const Vec2 local = rotate(-p.theta, {x[0] - p.t[0], x[1] - p.t[1]});
      return {local[0], local[1]};
    }
    case BiInvariantKind::None: return {p.t[0], p.t[1], x[0], x[1]};
  }
  return {};
}

}  // namespace enf
