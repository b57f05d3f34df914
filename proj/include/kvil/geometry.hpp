#pragma once

#include "errors.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace kvil {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using PointSet = std::vector<Vec3>;

//! Skew-symmetric cross-product matrix of `v`.
inline Mat3
skew(const Vec3& v)
{
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

//! Rotation matrix of the rotation vector `w` (axis times angle).
inline Mat3
so3_exp(const Vec3& w)
{
  const double theta = w.norm();
  const Mat3 k = skew(w);
  if (theta < 1e-8) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

//! Rotation vector of the rotation matrix `r`, angle in [0, pi].
inline Vec3
so3_log(const Mat3& r)
{
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

//! Proper rigid transform x -> R x + t.
struct RigidTransform
{
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_inverse(const Vec3& p) const
  {
    return rotation.transpose() * (p - translation);
  }

  RigidTransform inverse() const
  {
    return { rotation.transpose(), -(rotation.transpose() * translation) };
  }

  //! Composition: (a * b).apply(p) == a.apply(b.apply(p)).
  friend RigidTransform operator*(const RigidTransform& a,
                                  const RigidTransform& b)
  {
    return { a.rotation * b.rotation, a.rotation * b.translation + a.translation };
  }

  PointSet apply(std::span<const Vec3> points) const
  {
    PointSet out;
    out.reserve(points.size());
    for (const auto& p : points) {
      out.push_back(apply(p));
    }
    return out;
  }

  bool is_proper(double tol = 1e-9) const
  {
    return (rotation.transpose() * rotation - Mat3::Identity())
               .cwiseAbs()
               .maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

//! Candidate trajectories indexed [demo][time][candidate].
class Trajectory
{
public:
  Trajectory() = default;
  Trajectory(std::size_t demos, std::size_t steps, std::size_t candidates)
    : n_(demos)
    , t_(steps)
    , h_(candidates)
    , data_(demos * steps * candidates, Vec3::Zero())
  {}

  std::size_t demos() const { return n_; }
  std::size_t steps() const { return t_; }
  std::size_t candidates() const { return h_; }
  bool empty() const { return data_.empty(); }

  Vec3& at(std::size_t n, std::size_t t, std::size_t h)
  {
    return data_[index(n, t, h)];
  }
  const Vec3& at(std::size_t n, std::size_t t, std::size_t h) const
  {
    return data_[index(n, t, h)];
  }

  //! All candidates of demo `n` at time `t`.
  std::span<const Vec3> frame(std::size_t n, std::size_t t) const
  {
    return { data_.data() + index(n, t, 0), h_ };
  }
  std::span<Vec3> frame(std::size_t n, std::size_t t)
  {
    return { data_.data() + index(n, t, 0), h_ };
  }

  bool all_finite() const
  {
    return std::all_of(data_.begin(), data_.end(), [](const Vec3& v) {
      return v.allFinite();
    });
  }

  //! Applies `g` to every sample.
  Trajectory transformed(const RigidTransform& g) const
  {
    Trajectory out = *this;
    for (auto& v : out.data_) {
      v = g.apply(v);
    }
    return out;
  }

  const std::vector<Vec3>& raw() const { return data_; }

private:
  std::size_t index(std::size_t n, std::size_t t, std::size_t h) const
  {
    return (n * t_ + t) * h_ + h;
  }

  std::size_t n_ = 0;
  std::size_t t_ = 0;
  std::size_t h_ = 0;
  std::vector<Vec3> data_;
};

inline Vec3
centroid(std::span<const Vec3> points)
{
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) {
    c += p;
  }
  return c / static_cast<double>(points.size());
}

//! Least-squares rigid transform mapping `source` onto `target` (Kabsch with
//! reflection correction, no scale).
inline RigidTransform
align_rigid(std::span<const Vec3> source, std::span<const Vec3> target)
{
  if (source.size() != target.size()) {
    throw DegenerateGeometry("source and target sizes differ");
  }
  if (source.size() < 3) {
    throw DegenerateGeometry("at least 3 correspondences are required");
  }
  const Vec3 cs = centroid(source);
  const Vec3 ct = centroid(target);

  Mat3 cov = Mat3::Zero();
  Mat3 spread = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 a = source[i] - cs;
    cov += (target[i] - ct) * a.transpose();
    spread += a * a.transpose();
  }

  // A collinear or coincident source leaves the rotation about the common
  // axis undetermined.
  const Eigen::SelfAdjointEigenSolver<Mat3> es(spread);
  const Vec3 ev = es.eigenvalues(); // ascending
  if (ev(2) <= 1e-24 || ev(1) <= 1e-12 * ev(2)) {
    throw DegenerateGeometry("source points are collinear or coincident");
  }

  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
  }
  RigidTransform out;
  out.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  out.translation = ct - out.rotation * cs;
  return out;
}

//! Root-mean-square residual of `g` mapping `source` onto `target`.
inline double
alignment_rms(const RigidTransform& g,
              std::span<const Vec3> source,
              std::span<const Vec3> target)
{
  double acc = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    acc += (target[i] - g.apply(source[i])).squaredNorm();
  }
  return std::sqrt(acc / static_cast<double>(source.size()));
}

//! One demo before resampling: [raw time][candidate].
using RawSequence = std::vector<PointSet>;

//! Linearly reinterpolates every demo onto `steps` uniformly spaced phases in
//! [0, 1]. First and last samples are copied exactly.
inline Trajectory
resample_normalize(std::span<const RawSequence> raw, std::size_t steps)
{
  if (raw.empty()) {
    throw EmptySequence("no demonstrations");
  }
  if (steps < 2) {
    throw EmptySequence("at least 2 time steps are required");
  }
  const std::size_t h = raw.front().empty() ? 0 : raw.front().front().size();
  Trajectory out(raw.size(), steps, h);
  for (std::size_t n = 0; n < raw.size(); ++n) {
    const auto& seq = raw[n];
    if (seq.size() < 2) {
      throw EmptySequence("demo " + std::to_string(n) +
                          " has fewer than 2 samples");
    }
    for (const auto& f : seq) {
      if (f.size() != h) {
        throw EmptySequence("demo " + std::to_string(n) +
                            " has a ragged candidate count");
      }
    }
    const double last = static_cast<double>(seq.size() - 1);
    for (std::size_t t = 0; t < steps; ++t) {
      std::span<Vec3> dst = out.frame(n, t);
      if (t == 0 || t + 1 == steps) {
        const auto& src = t == 0 ? seq.front() : seq.back();
        std::copy(src.begin(), src.end(), dst.begin());
        continue;
      }
      const double s = last * static_cast<double>(t) /
                       static_cast<double>(steps - 1);
      const auto i0 = std::min(static_cast<std::size_t>(s), seq.size() - 2);
      const double a = s - static_cast<double>(i0);
      for (std::size_t c = 0; c < h; ++c) {
        dst[c] = (1.0 - a) * seq[i0][c] + a * seq[i0 + 1][c];
      }
    }
  }
  return out;
}

//! Centered moving average along time. Out-of-range samples are point
//! reflections through the boundary sample (2 x_0 - x_i), which keeps
//! endpoints and linear motion unchanged.
inline Trajectory
smooth(const Trajectory& traj, std::size_t window)
{
  if (window % 2 == 0 || window == 0) {
    throw Error("smoothing window must be odd and positive");
  }
  if (window == 1 || traj.steps() < 2) {
    return traj;
  }
  const auto steps = static_cast<std::ptrdiff_t>(traj.steps());
  const auto half =
    std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(window / 2), steps - 1);
  const double norm = 1.0 / static_cast<double>(2 * half + 1);

  Trajectory out(traj.demos(), traj.steps(), traj.candidates());
  for (std::size_t n = 0; n < traj.demos(); ++n) {
    for (std::size_t h = 0; h < traj.candidates(); ++h) {
      const Vec3& first = traj.at(n, 0, h);
      const Vec3& last = traj.at(n, traj.steps() - 1, h);
      for (std::ptrdiff_t t = 0; t < steps; ++t) {
        Vec3 acc = Vec3::Zero();
        for (std::ptrdiff_t k = t - half; k <= t + half; ++k) {
          if (k < 0) {
            acc += 2.0 * first - traj.at(n, static_cast<std::size_t>(-k), h);
          } else if (k >= steps) {
            acc += 2.0 * last -
                   traj.at(n, static_cast<std::size_t>(2 * (steps - 1) - k), h);
          } else {
            acc += traj.at(n, static_cast<std::size_t>(k), h);
          }
        }
        out.at(n, static_cast<std::size_t>(t), h) = acc * norm;
      }
    }
  }
  return out;
}

//! Maximum pairwise distance of a point set.
inline double
max_pairwise_distance(std::span<const Vec3> points)
{
  double best = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      best = std::max(best, (points[i] - points[j]).squaredNorm());
    }
  }
  return std::sqrt(best);
}

} // namespace kvil
