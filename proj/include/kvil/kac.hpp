#pragma once

#include "manifold.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

namespace kvil {

//! Gains of the keypoint springs, the density force, the virtual admittance
//! and the tracking layer. The task-space bias force is always zero here.
struct ControllerGains
{
  Vec3 stiffness = Vec3::Constant(400.0); // per-keypoint spring, diagonal
  Vec3 damping = Vec3::Constant(40.0);
  std::vector<Vec3> keypoint_stiffness; // optional per-keypoint overrides
  std::vector<Vec3> keypoint_damping;
  double g1 = 5.0; // density gradient force scale
  double g2 = 5.0; // minimal driving force scale
  double virtual_stiffness = 100.0;
  double virtual_damping = 20.0;
  double virtual_inertia = 1.0; // maps the wrench to virtual acceleration
  double tracking_stiffness = 900.0;
  double tracking_damping = 60.0;

  const Vec3& stiffness_of(std::size_t l) const
  {
    return l < keypoint_stiffness.size() ? keypoint_stiffness[l] : stiffness;
  }
  const Vec3& damping_of(std::size_t l) const
  {
    return l < keypoint_damping.size() ? keypoint_damping[l] : damping;
  }

  void check() const
  {
    auto bad = [](const Vec3& v) { return !v.allFinite() || (v.array() < 0.0).any(); };
    bool fail = bad(stiffness) || bad(damping);
    for (const auto& v : keypoint_stiffness) {
      fail = fail || bad(v);
    }
    for (const auto& v : keypoint_damping) {
      fail = fail || bad(v);
    }
    for (double s : { g1, g2, virtual_stiffness, virtual_damping, virtual_inertia,
                      tracking_stiffness, tracking_damping }) {
      fail = fail || !(s >= 0.0) || !std::isfinite(s);
    }
    if (fail) {
      throw NumericalBlowup("controller gains must be finite and non-negative");
    }
  }

  //! Stiffness ratio 10:2:1 over keypoints (first = stiffest) with critical
  //! damping 2 sqrt(K) for each.
  static ControllerGains one_shot(std::size_t keypoints, double base = 400.0)
  {
    ControllerGains g;
    const double ratio[] = { 1.0, 0.2, 0.1 };
    for (std::size_t l = 0; l < keypoints; ++l) {
      const double k = base * ratio[std::min<std::size_t>(l, 2)];
      g.keypoint_stiffness.push_back(Vec3::Constant(k));
      g.keypoint_damping.push_back(Vec3::Constant(2.0 * std::sqrt(k)));
    }
    return g;
  }
};

//! Spring-damper pull of a keypoint towards its attractor.
inline Vec3
attraction_force(const Vec3& k,
                 const Vec3& k_dot,
                 const Vec3& target,
                 const Vec3& target_dot,
                 const Vec3& stiffness,
                 const Vec3& damping)
{
  return stiffness.cwiseProduct(target - k) + damping.cwiseProduct(target_dot - k_dot);
}

//! Squared-exponential kernel density over chart coordinates of the
//! demonstrated targets. The density is the kernel average, so it peaks at 1.
struct DensityModel
{
  Eigen::MatrixXd samples; // N x d
  double bandwidth = 0.0;
  Chart mean;

  int dim() const { return static_cast<int>(samples.cols()); }

  double density(const Chart& u) const
  {
    double acc = 0.0;
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
      acc += std::exp(-(samples.row(i).transpose() - u).squaredNorm() * inv);
    }
    return acc / static_cast<double>(samples.rows());
  }

  Chart gradient(const Chart& u) const
  {
    Chart g = Chart::Zero(u.size());
    const double h2 = bandwidth * bandwidth;
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
      const Chart d = samples.row(i).transpose() - u;
      g += std::exp(-d.squaredNorm() / (2.0 * h2)) * d / h2;
    }
    return g / static_cast<double>(samples.rows());
  }
};

//! Silverman's rule with the average per-coordinate standard deviation. A
//! degenerate sample set falls back to a 1 mm bandwidth.
inline DensityModel
fit_density(const Eigen::MatrixXd& targets)
{
  const Eigen::Index n = targets.rows();
  const Eigen::Index d = targets.cols();
  if (n < 2) {
    throw InsufficientTargets("density needs at least 2 targets, got " + std::to_string(n));
  }
  if (d < 1 || d > 2) {
    throw InsufficientTargets("density charts are 1D or 2D");
  }
  if (!targets.allFinite()) {
    throw InsufficientTargets("non-finite targets");
  }
  DensityModel m;
  m.samples = targets;
  m.mean = targets.colwise().mean().transpose();
  double sd = 0.0;
  for (Eigen::Index c = 0; c < d; ++c) {
    sd += std::sqrt((targets.col(c).array() - m.mean(c)).square().sum() /
                    static_cast<double>(n - 1));
  }
  sd /= static_cast<double>(d);
  const double dd = static_cast<double>(d);
  m.bandwidth = sd * std::pow(4.0 / ((dd + 2.0) * static_cast<double>(n)), 1.0 / (dd + 4.0));
  if (!(m.bandwidth > 1e-9)) {
    m.bandwidth = 1e-3;
  }
  return m;
}

//! Both density-force candidates live in the chart and reach the ambient
//! space through the differential of the reconstruction at the foot point.
//! The larger one wins; the mean-seeking candidate switches off within
//! 1e-3 bandwidths of the mean.
inline Vec3
density_force(const DensityModel& model,
              const ConstraintManifold& manifold,
              const Vec3& k,
              double g1,
              double g2)
{
  const Chart u = manifold.project(k);
  const Eigen::MatrixXd j = manifold.jacobian(u);
  const Vec3 f1 = g1 * (j * model.gradient(u));
  const Chart to_mean = model.mean - u;
  const double dist = to_mean.norm();
  const Vec3 f2 = dist > 1e-3 * model.bandwidth ? Vec3(g2 * (j * (to_mean / dist)))
                                                : Vec3::Zero();
  return f2.norm() > f1.norm() ? f2 : f1;
}

//! Shields the higher-priority keypoint k1 from the density force acting on
//! k2: the result lies in the tangent space of the sphere about k1 through
//! k2 and in the local tangent space of the constraint (3 x d, columns
//! spanning it). For planes and surfaces that is the line along
//! n_sphere x n_plane. A line generically meets the sphere tangent plane
//! only at the origin, so the force vanishes unless the line is itself
//! tangent to the sphere.
inline Vec3
priority_project(const Vec3& f,
                 const Vec3& k1,
                 const Vec3& k2,
                 ConstraintKind kind,
                 const Eigen::MatrixXd& tangent)
{
  const Vec3 radial = k2 - k1;
  const double r = radial.norm();
  if (r < 1e-9) {
    throw DegenerateRadius("keypoints coincide");
  }
  const Vec3 n = radial / r;
  auto tangential = [&](const Vec3& v) { return Vec3(v - n * n.dot(v)); };
  const int d = manifold_dim(kind);
  if (d == 0) {
    return tangential(f);
  }
  if (tangent.rows() != 3 || tangent.cols() != d) {
    throw DegenerateGeometry("tangent basis does not match the constraint dimension");
  }
  if (d == 2) {
    const Vec3 normal = Vec3(tangent.col(0)).cross(Vec3(tangent.col(1)));
    const Vec3 line = n.cross(normal);
    const double s = line.norm();
    if (s > 1e-9 * normal.norm()) {
      const Vec3 dir = line / s;
      return dir * dir.dot(f);
    }
    return tangential(f);
  }
  const Vec3 t = Vec3(tangent.col(0)).normalized();
  if (std::abs(t.dot(n)) > 1e-9) {
    return Vec3::Zero();
  }
  return tangential(t * t.dot(f));
}

struct Wrench
{
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
  Vec3 center = Vec3::Zero(); // virtual TCP
};

//! Total force and torque about the keypoint mean.
inline Wrench
aggregate_wrench(std::span<const Vec3> keypoints, std::span<const Vec3> forces)
{
  if (keypoints.empty() || keypoints.size() != forces.size()) {
    throw InsufficientData("one force per keypoint is required");
  }
  Wrench w;
  for (const auto& k : keypoints) {
    w.center += k;
  }
  w.center /= static_cast<double>(keypoints.size());
  for (std::size_t l = 0; l < keypoints.size(); ++l) {
    w.force += forces[l];
    w.torque += (keypoints[l] - w.center).cross(forces[l]);
  }
  return w;
}

//! Pose and world-frame twist of a free-floating body.
struct BodyState
{
  Vec3 position = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  Vec3 velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();

  RigidTransform pose() const { return { rotation, position }; }
};

//! Virtual admittance pose, its rest pose x0 and the tracked body.
struct AdmittanceState
{
  BodyState virt;
  BodyState body;
  Vec3 rest_position = Vec3::Zero();
  Mat3 rest_rotation = Mat3::Identity();
  double lever = 1.0; // torque / lever^2 gives angular acceleration
};

namespace detail {

inline void
integrate(BodyState& s, const Vec3& acc, const Vec3& ang_acc, double dt)
{
  s.velocity += dt * acc;
  s.position += dt * s.velocity;
  s.angular_velocity += dt * ang_acc;
  s.rotation = so3_exp(dt * s.angular_velocity) * s.rotation;
  // Re-orthonormalize against drift.
  const Eigen::JacobiSVD<Mat3> svd(s.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  s.rotation = svd.matrixU() * svd.matrixV().transpose();
}

inline bool
blown_up(const BodyState& s)
{
  const double lim = 1e6;
  return !(s.position.norm() < lim) || !(s.velocity.norm() < lim) ||
         !(s.angular_velocity.norm() < lim) || !s.rotation.allFinite();
}

} // namespace detail

//! One semi-implicit Euler step of the virtual admittance
//!   a_v = Kp~ (x0 - x_v) - Kd~ v_v + Km~ f_v
//! followed by the tracking law a = Kp (x_v - x) + Kd (v_v - v) on a unit
//! mass body. Orientations advance by exponential-map increments.
inline AdmittanceState
admittance_step(AdmittanceState s, const Wrench& w, const ControllerGains& g, double dt)
{
  if (!(dt > 0.0)) {
    throw NumericalBlowup("time step must be positive");
  }
  const double inv_lever2 = 1.0 / (s.lever * s.lever);
  const Vec3 acc_v = g.virtual_stiffness * (s.rest_position - s.virt.position) -
                     g.virtual_damping * s.virt.velocity + g.virtual_inertia * w.force;
  const Vec3 ang_v = g.virtual_stiffness * so3_log(s.rest_rotation * s.virt.rotation.transpose()) -
                     g.virtual_damping * s.virt.angular_velocity +
                     g.virtual_inertia * inv_lever2 * w.torque;
  detail::integrate(s.virt, acc_v, ang_v, dt);

  const Vec3 acc = g.tracking_stiffness * (s.virt.position - s.body.position) +
                   g.tracking_damping * (s.virt.velocity - s.body.velocity);
  const Vec3 ang = g.tracking_stiffness * so3_log(s.virt.rotation * s.body.rotation.transpose()) +
                   g.tracking_damping * (s.virt.angular_velocity - s.body.angular_velocity);
  detail::integrate(s.body, acc, ang, dt);

  if (detail::blown_up(s.virt) || detail::blown_up(s.body)) {
    throw NumericalBlowup("admittance state exceeded 1e6");
  }
  return s;
}

} // namespace kvil
