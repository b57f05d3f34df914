#pragma once

#include "geometry.hpp"

#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace kvil {

using DescriptorId = std::int64_t;

struct ObjectRecord
{
  std::string name;
  Trajectory trajectory; // N x T x P
  std::vector<DescriptorId> descriptor_ids;

  std::size_t candidate_count() const { return descriptor_ids.size(); }
};

struct DemonstrationSet
{
  std::vector<ObjectRecord> objects;

  std::size_t demo_count() const
  {
    return objects.empty() ? 0 : objects.front().trajectory.demos();
  }
  std::size_t time_steps() const
  {
    return objects.empty() ? 0 : objects.front().trajectory.steps();
  }

  //! Task-space dimension: 2 when every sample has z == 0, else 3.
  int spatial_dim() const
  {
    for (const auto& o : objects) {
      for (const auto& v : o.trajectory.raw()) {
        if (v.z() != 0.0) {
          return 3;
        }
      }
    }
    return 2;
  }
};

//! Checks the structural invariants and throws SchemaError/UnitError.
inline void
validate(const DemonstrationSet& demos)
{
  if (demos.objects.empty()) {
    throw SchemaError("no objects");
  }
  const std::size_t n = demos.demo_count();
  const std::size_t t = demos.time_steps();
  if (n < 1) {
    throw SchemaError("at least one demonstration is required");
  }
  for (const auto& o : demos.objects) {
    if (o.trajectory.demos() != n || o.trajectory.steps() != t) {
      throw SchemaError("object '" + o.name +
                        "' does not share demo count and time steps");
    }
    if (o.trajectory.candidates() != o.descriptor_ids.size()) {
      throw SchemaError("object '" + o.name +
                        "' candidate count differs from descriptor count");
    }
    std::unordered_set<DescriptorId> seen;
    for (auto id : o.descriptor_ids) {
      if (!seen.insert(id).second) {
        throw SchemaError("object '" + o.name + "' has duplicate descriptor " +
                          std::to_string(id));
      }
    }
    if (!o.trajectory.all_finite()) {
      throw UnitError("object '" + o.name + "' contains non-finite values");
    }
  }
}

struct CanonicalShape
{
  PointSet positions;
  double scale = 0.0; // max pairwise distance, meters
};

//! Candidate positions at the first time step of the first demo.
inline CanonicalShape
compute_canonical_shape(const ObjectRecord& obj)
{
  if (obj.trajectory.candidates() < 2) {
    throw DegenerateObject("object '" + obj.name +
                           "' needs at least two candidates");
  }
  const auto first = obj.trajectory.frame(0, 0);
  CanonicalShape shape{ PointSet(first.begin(), first.end()), 0.0 };
  shape.scale = max_pairwise_distance(shape.positions);
  if (!(shape.scale > 0.0)) {
    throw DegenerateObject("object '" + obj.name +
                           "' has all candidates coincident");
  }
  return shape;
}

enum class Role
{
  master,
  slave
};

//! Mean temporal variance of the candidate trajectories: per-coordinate
//! variances over time are summed, then averaged over candidates and demos.
inline double
motion_variance(const ObjectRecord& obj)
{
  const auto& tr = obj.trajectory;
  if (tr.steps() == 0 || tr.candidates() == 0) {
    return 0.0;
  }
  const double steps = static_cast<double>(tr.steps());
  double total = 0.0;
  for (std::size_t n = 0; n < tr.demos(); ++n) {
    for (std::size_t h = 0; h < tr.candidates(); ++h) {
      Vec3 mean = Vec3::Zero();
      for (std::size_t t = 0; t < tr.steps(); ++t) {
        mean += tr.at(n, t, h);
      }
      mean /= steps;
      double var = 0.0;
      for (std::size_t t = 0; t < tr.steps(); ++t) {
        var += (tr.at(n, t, h) - mean).squaredNorm();
      }
      total += var / steps;
    }
  }
  return total / static_cast<double>(tr.demos() * tr.candidates());
}

//! The least-moving object is the master; ties go to the lowest index.
inline std::vector<Role>
assign_roles(const DemonstrationSet& demos)
{
  if (demos.objects.size() < 2) {
    throw SchemaError("role assignment needs at least two objects");
  }
  std::size_t master = 0;
  double best = motion_variance(demos.objects[0]);
  for (std::size_t i = 1; i < demos.objects.size(); ++i) {
    const double v = motion_variance(demos.objects[i]);
    if (v < best) {
      best = v;
      master = i;
    }
  }
  std::vector<Role> roles(demos.objects.size(), Role::slave);
  roles[master] = Role::master;
  return roles;
}

inline std::size_t
master_index(const std::vector<Role>& roles)
{
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == Role::master) {
      return i;
    }
  }
  throw SchemaError("no master object");
}

//! Parameters of one canonical local frame anchored at master candidate j.
//! References are canonical-shape positions, i.e. the canonical frame is the
//! identity.
struct LocalFrameSpec
{
  std::size_t anchor = 0; // candidate index j on the master
  Vec3 origin = Vec3::Zero(); // canonical position of the anchor
  std::vector<std::size_t> neighbors; // candidate indices, nearest first
  std::vector<DescriptorId> neighbor_ids;
  PointSet references;
};

struct FrameBank
{
  std::vector<LocalFrameSpec> frames;

  std::size_t size() const { return frames.size(); }
};

//! Indices of the `k` nearest points to `points[i]` (including i), ordered by
//! distance with ties to the lower index.
inline std::vector<std::size_t>
nearest_indices(std::span<const Vec3> points, std::size_t i, std::size_t k)
{
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> d(points.size());
  for (std::size_t q = 0; q < points.size(); ++q) {
    d[q] = (points[q] - points[i]).squaredNorm();
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return d[a] < d[b];
  });
  order.resize(k);
  return order;
}

inline FrameBank
build_frame_bank(const ObjectRecord& master,
                 const CanonicalShape& canonical,
                 std::size_t q)
{
  const std::size_t p = canonical.positions.size();
  if (q < 3 || q > p) {
    throw InsufficientCandidates("Q = " + std::to_string(q) +
                                 " with P = " + std::to_string(p));
  }
  FrameBank bank;
  bank.frames.reserve(p);
  for (std::size_t j = 0; j < p; ++j) {
    LocalFrameSpec f;
    f.anchor = j;
    f.origin = canonical.positions[j];
    f.neighbors = nearest_indices(canonical.positions, j, q);
    for (auto idx : f.neighbors) {
      f.neighbor_ids.push_back(master.descriptor_ids[idx]);
      f.references.push_back(canonical.positions[idx]);
    }
    bank.frames.push_back(std::move(f));
  }
  return bank;
}

using Observation = std::unordered_map<DescriptorId, Vec3>;

inline RigidTransform
detect_frame(const LocalFrameSpec& frame, const Observation& observed)
{
  PointSet obs;
  obs.reserve(frame.neighbor_ids.size());
  for (auto id : frame.neighbor_ids) {
    auto it = observed.find(id);
    if (it == observed.end()) {
      throw MissingCorrespondence("descriptor " + std::to_string(id) +
                                  " not observed");
    }
    obs.push_back(it->second);
  }
  return align_rigid(frame.references, obs);
}

//! Frame j maps its canonical references onto the observation.
inline std::vector<RigidTransform>
detect_frames(const FrameBank& bank, const Observation& observed)
{
  std::vector<RigidTransform> out;
  out.reserve(bank.size());
  for (const auto& f : bank.frames) {
    out.push_back(detect_frame(f, observed));
  }
  return out;
}

//! Frame detection directly from an index-aligned observation of the master.
inline RigidTransform
detect_frame(const LocalFrameSpec& frame, std::span<const Vec3> observed)
{
  PointSet obs;
  obs.reserve(frame.neighbors.size());
  for (auto idx : frame.neighbors) {
    obs.push_back(observed[idx]);
  }
  return align_rigid(frame.references, obs);
}

inline Observation
make_observation(const std::vector<DescriptorId>& ids, std::span<const Vec3> pts)
{
  Observation obs;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    obs.emplace(ids[i], pts[i]);
  }
  return obs;
}

} // namespace kvil
