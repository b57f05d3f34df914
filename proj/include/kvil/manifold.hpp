#pragma once

#include "pme.hpp"

#include <optional>

namespace kvil {

//! Frame-local target manifold of one keypoint: a point, line or plane, or a
//! fitted principal curve or surface.
struct ConstraintManifold
{
  ConstraintKind kind = ConstraintKind::p2p;
  Vec3 anchor = Vec3::Zero();
  std::vector<Vec3> basis;                // linear kinds, orthonormal
  std::optional<PrincipalManifold> curve; // nonlinear kinds

  static ConstraintManifold from_linear(const LinearConstraint& c)
  {
    return { c.kind, c.anchor, c.basis, std::nullopt };
  }

  static ConstraintManifold from_pme(ConstraintKind kind, PrincipalManifold pm)
  {
    ConstraintManifold m;
    m.kind = kind;
    m.curve = std::move(pm);
    m.anchor = m.curve->center;
    return m;
  }

  int dim() const { return manifold_dim(kind); }

  //! Chart coordinates of the nearest manifold point (meters).
  Chart project(const Vec3& x) const
  {
    if (curve) {
      return curve->project(x);
    }
    Chart u(dim());
    for (int a = 0; a < dim(); ++a) {
      u(a) = (x - anchor).dot(basis[static_cast<std::size_t>(a)]);
    }
    return u;
  }

  Vec3 evaluate(const Chart& u) const
  {
    if (curve) {
      return curve->evaluate(u);
    }
    Vec3 p = anchor;
    for (int a = 0; a < dim(); ++a) {
      p += u(a) * basis[static_cast<std::size_t>(a)];
    }
    return p;
  }

  Vec3 foot(const Vec3& x) const { return evaluate(project(x)); }

  //! 3 x d differential of the chart map.
  Eigen::MatrixXd jacobian(const Chart& u) const
  {
    if (curve) {
      return curve->jacobian(u);
    }
    Eigen::MatrixXd j(3, dim());
    for (int a = 0; a < dim(); ++a) {
      j.col(a) = basis[static_cast<std::size_t>(a)];
    }
    return j;
  }

  //! Unit normal of a 2D manifold at u.
  Vec3 normal(const Chart& u) const
  {
    if (curve) {
      return curve->normal(u);
    }
    return basis[0].cross(basis[1]).normalized();
  }

  //! Distance to the manifold; signed along the normal for planes.
  double orthogonal_distance(const Vec3& x) const
  {
    if (kind == ConstraintKind::p2P) {
      return (x - anchor).dot(normal(Chart()));
    }
    return (x - foot(x)).norm();
  }
};

//! Orthogonal distance of every sample of a frame-local path.
inline std::vector<double>
project_orthogonal(const ConstraintManifold& m, std::span<const Vec3> path)
{
  std::vector<double> out;
  out.reserve(path.size());
  for (const auto& x : path) {
    out.push_back(m.orthogonal_distance(x));
  }
  return out;
}

} // namespace kvil
