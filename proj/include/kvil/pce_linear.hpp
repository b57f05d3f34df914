#pragma once

#include "constraint.hpp"
#include "demo.hpp"

#include <limits>
#include <optional>

namespace kvil {

//! Detected master frames indexed [demo][time][frame].
class FrameSeries
{
public:
  FrameSeries() = default;
  FrameSeries(std::size_t demos, std::size_t steps, std::size_t frames)
    : n_(demos)
    , t_(steps)
    , j_(frames)
    , data_(demos * steps * frames)
  {}

  std::size_t demos() const { return n_; }
  std::size_t steps() const { return t_; }
  std::size_t frames() const { return j_; }

  RigidTransform& at(std::size_t n, std::size_t t, std::size_t j)
  {
    return data_[(n * t_ + t) * j_ + j];
  }
  const RigidTransform& at(std::size_t n, std::size_t t, std::size_t j) const
  {
    return data_[(n * t_ + t) * j_ + j];
  }

private:
  std::size_t n_ = 0;
  std::size_t t_ = 0;
  std::size_t j_ = 0;
  std::vector<RigidTransform> data_;
};

//! Frames of every bank entry for every demo and time step of the master.
inline FrameSeries
detect_frame_series(const ObjectRecord& master, const FrameBank& bank)
{
  const auto& tr = master.trajectory;
  FrameSeries out(tr.demos(), tr.steps(), bank.size());
  for (std::size_t n = 0; n < tr.demos(); ++n) {
    for (std::size_t t = 0; t < tr.steps(); ++t) {
      const auto obs = tr.frame(n, t);
      for (std::size_t j = 0; j < bank.size(); ++j) {
        out.at(n, t, j) = detect_frame(bank.frames[j], obs);
      }
    }
  }
  return out;
}

//! Slave candidates expressed in every master frame, evaluated on access.
//! Logical layout [frame j][candidate k][time t][demo n].
class FrameLocalTensor
{
public:
  FrameLocalTensor() = default;
  FrameLocalTensor(Trajectory slave, FrameSeries frames)
    : slave_(std::move(slave))
    , frames_(std::move(frames))
  {
    if (slave_.demos() != frames_.demos() || slave_.steps() != frames_.steps()) {
      throw SchemaError("slave trajectory and frame series disagree on N or T");
    }
  }

  std::size_t frames() const { return frames_.frames(); }
  std::size_t candidates() const { return slave_.candidates(); }
  std::size_t steps() const { return slave_.steps(); }
  std::size_t demos() const { return slave_.demos(); }

  Vec3 at(std::size_t j, std::size_t k, std::size_t t, std::size_t n) const
  {
    return frames_.at(n, t, j).apply_inverse(slave_.at(n, t, k));
  }

  //! The N demo positions of candidate k in frame j at time t.
  PointSet points(std::size_t j, std::size_t k, std::size_t t) const
  {
    PointSet out(demos());
    for (std::size_t n = 0; n < demos(); ++n) {
      out[n] = at(j, k, t, n);
    }
    return out;
  }

  //! Frame-local trajectory of candidate k for demo n over times [0, last].
  PointSet path(std::size_t j, std::size_t k, std::size_t n, std::size_t last) const
  {
    PointSet out(last + 1);
    for (std::size_t t = 0; t <= last; ++t) {
      out[t] = at(j, k, t, n);
    }
    return out;
  }

  const Trajectory& slave() const { return slave_; }
  const FrameSeries& frame_series() const { return frames_; }

private:
  Trajectory slave_;
  FrameSeries frames_;
};

inline FrameLocalTensor
express_in_frames(const Trajectory& slave, const FrameSeries& frames)
{
  return { slave, frames };
}

struct LinearConstraint
{
  ConstraintKind kind = ConstraintKind::p2p;
  Vec3 anchor = Vec3::Zero();
  std::vector<Vec3> basis;
  std::size_t frame = 0;
  std::size_t time = 0;
  std::size_t keypoint = 0;
};

struct OneShotResult
{
  std::size_t frame = 0;
  std::size_t time = 0;
  std::vector<std::size_t> keypoints; // k1, k2[, k3]
  std::vector<LinearConstraint> constraints;
};

//! Distance criteria for a single demonstration. The frame is chosen at the
//! final time step; distances are measured in frame-local coordinates, where
//! the anchor sits at its canonical position.
inline OneShotResult
one_shot_extract(const FrameLocalTensor& tensor, const FrameBank& bank, int spatial_dim = 3)
{
  if (tensor.demos() != 1) {
    throw NotOneShot("expected 1 demonstration, got " +
                     std::to_string(tensor.demos()));
  }
  const std::size_t kc = tensor.candidates();
  const std::size_t need = spatial_dim == 2 ? 2 : 3;
  if (kc < need) {
    throw InsufficientCandidates("slave needs at least " + std::to_string(need) +
                                 " candidates");
  }
  OneShotResult res;
  res.time = tensor.steps() - 1;

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < tensor.frames(); ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < kc; ++k) {
      acc += (tensor.at(j, k, res.time, 0) - bank.frames[j].origin).norm();
    }
    acc /= static_cast<double>(kc);
    if (acc < best - 1e-12 * std::max(1.0, acc)) {
      best = acc;
      res.frame = j;
    }
  }

  PointSet local(kc);
  for (std::size_t k = 0; k < kc; ++k) {
    local[k] = tensor.at(res.frame, k, res.time, 0);
  }
  const Vec3& origin = bank.frames[res.frame].origin;
  // Distances within a relative 1e-12 count as ties and go to the lower index.
  auto dist = [&](std::size_t k) { return (local[k] - origin).norm(); };
  auto tie_eps = [](double d) { return 1e-12 * std::max(1.0, d); };
  std::size_t k1 = 0;
  for (std::size_t k = 1; k < kc; ++k) {
    if (dist(k) < dist(k1) - tie_eps(dist(k1))) {
      k1 = k;
    }
  }
  std::size_t k2 = k1 == 0 ? 1 : 0;
  for (std::size_t k = k2 + 1; k < kc; ++k) {
    if (k != k1 && dist(k) > dist(k2) + tie_eps(dist(k2))) {
      k2 = k;
    }
  }
  res.keypoints = { k1, k2 };
  if (spatial_dim == 3) {
    std::size_t k3 = 0;
    double far = -1.0;
    for (std::size_t k = 0; k < kc; ++k) {
      if (k == k1 || k == k2) {
        continue;
      }
      const double d =
        std::min((local[k] - local[k1]).norm(), (local[k] - local[k2]).norm());
      if (d > far + 1e-12 * std::max(1.0, far)) {
        far = d;
        k3 = k;
      }
    }
    res.keypoints.push_back(k3);
  }
  for (auto k : res.keypoints) {
    res.constraints.push_back(
      { ConstraintKind::p2p, local[k], {}, res.frame, res.time, k });
  }
  return res;
}

struct SpatialVariability
{
  Vec3 eta = Vec3::Zero(); // descending
  Vec3 mean = Vec3::Zero();
  Mat3 axes = Mat3::Identity(); // column e pairs with eta(e)
};

//! Principal spreads of N positions divided by the object scale. The
//! covariance uses the unbiased (N - 1) normalization.
inline SpatialVariability
pca_variability(std::span<const Vec3> points, double scale)
{
  if (points.size() < 2) {
    throw InsufficientData("spatial variability needs at least 2 points");
  }
  if (!(scale > 0.0)) {
    throw DegenerateObject("scale must be positive");
  }
  SpatialVariability out;
  out.mean = centroid(points);
  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - out.mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(points.size() - 1);
  const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  for (int e = 0; e < 3; ++e) {
    out.eta(e) = std::sqrt(std::max(es.eigenvalues()(2 - e), 0.0)) / scale;
    out.axes.col(e) = es.eigenvectors().col(2 - e);
  }
  return out;
}

//! Linear variance criteria. In 2D tasks the plane kind is never emitted
//! since the plane would be the whole task space.
inline std::optional<ConstraintKind>
classify_linear(const SpatialVariability& v,
                const Thresholds& th,
                std::size_t n,
                int spatial_dim = 3)
{
  const Vec3& e = v.eta;
  if (e(0) < th.xi1) {
    return ConstraintKind::p2p;
  }
  if (n > 2 && e(1) < th.xi1 && e(0) > th.xi2) {
    return ConstraintKind::p2l;
  }
  if (spatial_dim == 3 && n > 3 && e(2) < th.xi1 && e(1) > th.xi2) {
    return ConstraintKind::p2P;
  }
  return std::nullopt;
}

inline LinearConstraint
make_linear_constraint(ConstraintKind kind,
                       const SpatialVariability& v,
                       std::size_t frame,
                       std::size_t time,
                       std::size_t keypoint)
{
  LinearConstraint c{ kind, v.mean, {}, frame, time, keypoint };
  for (int e = 0; e < manifold_dim(kind); ++e) {
    c.basis.push_back(v.axes.col(e));
  }
  return c;
}

} // namespace kvil
