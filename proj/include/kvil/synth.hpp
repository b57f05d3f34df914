#pragma once

#include "constraint.hpp"
#include "demo_io.hpp"

#include <random>

namespace kvil {

enum class SynthKind
{
  p2p,
  p2l,
  p2P,
  p2c,
  p2S,
  oneshot,
  insert
};

inline std::string_view
to_string(SynthKind k)
{
  switch (k) {
    case SynthKind::p2p:
      return "p2p";
    case SynthKind::p2l:
      return "p2l";
    case SynthKind::p2P:
      return "p2P";
    case SynthKind::p2c:
      return "p2c";
    case SynthKind::p2S:
      return "p2S";
    case SynthKind::oneshot:
      return "oneshot";
    case SynthKind::insert:
      return "insert";
  }
  return "?";
}

inline SynthKind
parse_synth_kind(std::string_view s)
{
  for (auto k : { SynthKind::p2p,
                  SynthKind::p2l,
                  SynthKind::p2P,
                  SynthKind::p2c,
                  SynthKind::p2S,
                  SynthKind::oneshot,
                  SynthKind::insert }) {
    if (to_string(k) == s) {
      return k;
    }
  }
  throw SpecIncompatible("unknown synthetic kind '" + std::string(s) + "'");
}

//! Smallest demo count for which the kind can be extracted.
inline std::size_t
min_demos(SynthKind k)
{
  switch (k) {
    case SynthKind::p2p:
      return 2;
    case SynthKind::p2l:
    case SynthKind::insert:
      return 3;
    case SynthKind::p2P:
      return 4;
    case SynthKind::p2c:
    case SynthKind::p2S:
      return 11;
    case SynthKind::oneshot:
      return 1;
  }
  return 1;
}

struct SyntheticTaskSpec
{
  SynthKind kind = SynthKind::p2p;
  std::size_t demos = 0; // 0: the kind's minimum
  double pose_variation = 0.4;  // tilt half-range about the keypoint, rad
  double shape_variation = 0.2; // half-range of the per-demo stick scaling
  double noise = 0.005;         // std, fraction of the stick length
  std::size_t master_points = 24;
  std::size_t slave_points = 16;
  std::size_t time_steps = 20;
  double stick_length = 0.3; // meters
};

//! Known answer of a synthetic task. Geometry is expressed in the master's
//! canonical frame (demo 0 world coordinates).
struct GroundTruth
{
  std::vector<ConstraintKind> kinds;
  std::vector<std::size_t> keypoints; // slave candidate indices
  RigidTransform canonical_from_body;  // master body -> canonical frame
  Vec3 target = Vec3::Zero();          // keypoint target in master body coords
  double slave_scale = 0.0;
};

struct SyntheticDemos
{
  RawDemonstrations raw;
  DemonstrationSet demos;
  GroundTruth truth;
};

namespace detail {

inline Mat3
random_rotation(std::mt19937_64& rng)
{
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  return q.toRotationMatrix();
}

//! Rotation by an angle in [-max, max] about a random horizontal axis.
inline Mat3
random_tilt(std::mt19937_64& rng, double max)
{
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> phi(0.0, 2.0 * M_PI);
  const double a = phi(rng);
  return so3_exp(max * u(rng) * Vec3(std::cos(a), std::sin(a), 0.0));
}

inline double
min_jerk(double s)
{
  s = std::clamp(s, 0.0, 1.0);
  return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
}

//! Stick candidates in body coordinates: index 0 is the tip at the origin,
//! the rest spread along +z with a small radial jitter.
inline PointSet
stick_shape(std::size_t p, double length, std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointSet out(p, Vec3::Zero());
  for (std::size_t i = 1; i < p; ++i) {
    const double r = 0.01 * length;
    out[i] = Vec3(r * u(rng), r * u(rng), length * static_cast<double>(i) / static_cast<double>(p - 1));
  }
  return out;
}

inline PointSet
box_cloud(std::size_t p, std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> ux(-0.2, 0.2);
  std::uniform_real_distribution<double> uy(-0.15, 0.15);
  std::uniform_real_distribution<double> uz(-0.1, 0.1);
  PointSet out(p);
  for (auto& v : out) {
    v = Vec3(ux(rng), uy(rng), uz(rng));
  }
  return out;
}

} // namespace detail

//! Demonstrations of a static box (master) and a stick (slave) whose tip
//! ends on the manifold of the requested kind.
inline SyntheticDemos
generate_synthetic(const SyntheticTaskSpec& spec, std::uint64_t seed)
{
  const std::size_t n = spec.demos ? spec.demos : min_demos(spec.kind);
  if (spec.kind == SynthKind::oneshot ? n != 1 : n < min_demos(spec.kind)) {
    throw SpecIncompatible(std::string(to_string(spec.kind)) + " needs " +
                           (spec.kind == SynthKind::oneshot ? "exactly 1" : "at least " + std::to_string(min_demos(spec.kind))) +
                           " demos, got " + std::to_string(n));
  }
  if (spec.master_points < 4 || spec.slave_points < 3 || spec.time_steps < 2) {
    throw SpecIncompatible("too few points or time steps");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double len = spec.stick_length;
  const double sigma = spec.noise * len;
  const PointSet box = detail::box_cloud(spec.master_points, rng);
  const PointSet stick = detail::stick_shape(spec.slave_points, len, rng);
  const Vec3 hole(0.0, 0.0, 0.1);

  // Per-demo keypoint target (master body coords), orientation and scaling.
  std::vector<Vec3> targets(n, hole);
  std::vector<Mat3> finals(n, Mat3::Identity());
  std::vector<double> scales(n, 1.0);
  const bool fixed_axis = spec.kind == SynthKind::insert || spec.kind == SynthKind::oneshot;
  const std::size_t side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const double phase0 = 2.0 * M_PI * uni(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const double strat = (static_cast<double>(i) + 0.25 + 0.5 * uni(rng)) / static_cast<double>(n);
    switch (spec.kind) {
      case SynthKind::p2l: {
        targets[i] = hole + 0.6 * len * (2.0 * strat - 1.0) * Vec3::UnitX();
        break;
      }
      case SynthKind::p2P: {
        const std::size_t cell = i % (side * side);
        const double a = (static_cast<double>(cell % side) + 0.25 + 0.5 * uni(rng)) / static_cast<double>(side);
        const double b = (static_cast<double>(cell / side) + 0.25 + 0.5 * uni(rng)) / static_cast<double>(side);
        targets[i] = hole + 0.6 * len * Vec3(2.0 * a - 1.0, 2.0 * b - 1.0, 0.0);
        break;
      }
      case SynthKind::p2c: {
        // Three quarters of a helix turn: far enough from any plane that
        // the linear criteria reject it.
        const double th = 1.5 * M_PI * strat;
        const double r = 0.5 * len;
        targets[i] = hole + Vec3(r * std::cos(th) - r, r * std::sin(th), 0.6 * len * strat);
        break;
      }
      case SynthKind::p2S: {
        const double rs = 0.8 * len;
        const double rho = n > 1 ? 0.6 * len * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
        const double ang = phase0 + 2.399963229728653 * static_cast<double>(i);
        targets[i] = hole + Vec3(rho * std::cos(ang), rho * std::sin(ang),
                                 std::sqrt(rs * rs - rho * rho) - rs);
        break;
      }
      default:
        break;
    }
    if (spec.kind == SynthKind::insert) {
      scales[i] = n > 1 ? 0.8 + 0.4 * strat : 1.0;
    } else if (!fixed_axis) {
      scales[i] = 1.0 + spec.shape_variation * (2.0 * uni(rng) - 1.0);
    }
    finals[i] = fixed_axis ? Mat3::Identity() : detail::random_tilt(rng, spec.pose_variation);
  }

  SyntheticDemos out;
  out.raw.time_steps = spec.time_steps;
  RawObject master{ "box", {}, {} };
  RawObject slave{ "stick", {}, {} };
  for (std::size_t i = 0; i < spec.master_points; ++i) {
    master.descriptor_ids.push_back(static_cast<DescriptorId>(1000 + i));
  }
  for (std::size_t i = 0; i < spec.slave_points; ++i) {
    slave.descriptor_ids.push_back(static_cast<DescriptorId>(2000 + i));
  }

  std::uniform_int_distribution<std::size_t> raw_len(spec.time_steps, spec.time_steps + spec.time_steps / 2);
  std::uniform_real_distribution<double> pos(-0.3, 0.3);
  for (std::size_t i = 0; i < n; ++i) {
    RigidTransform m{ detail::random_rotation(rng), Vec3(pos(rng), pos(rng), pos(rng)) };
    if (i == 0) {
      out.truth.canonical_from_body = m;
    }
    // Start: displaced and tilted away from the final pose. Approach
    // azimuths are spread evenly over the demos so that mid-motion
    // positions do not line up by chance.
    const double az = phase0 + 2.0 * M_PI * (static_cast<double>(i) + 0.3 * (uni(rng) - 0.5)) /
                                 static_cast<double>(n);
    const double el = 0.3 + 0.4 * uni(rng);
    const Vec3 dir(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    const Vec3 start = targets[i] + (0.6 + 0.3 * uni(rng)) * len * dir + Vec3(0, 0, 0.5 * len);
    const Vec3 axis(-std::sin(az), std::cos(az), 0.0);
    const Mat3 r0 = so3_exp((0.4 + 0.4 * uni(rng)) * axis) * finals[i];
    const Vec3 w = so3_log(finals[i] * r0.transpose());

    PointSet body = stick;
    for (auto& p : body) {
      p.z() *= scales[i];
    }
    const std::size_t steps = raw_len(rng);
    const double settle = 0.8 * static_cast<double>(steps - 1);
    RawSequence ms;
    RawSequence ss;
    for (std::size_t t = 0; t < steps; ++t) {
      const double s = detail::min_jerk(static_cast<double>(t) / settle);
      const Mat3 rot = so3_exp(s * w) * r0;
      const Vec3 tip = start + s * (targets[i] - start);
      PointSet mf(box.size());
      for (std::size_t p = 0; p < box.size(); ++p) {
        mf[p] = m.apply(box[p]) + sigma * Vec3(gauss(rng), gauss(rng), gauss(rng));
      }
      PointSet sf(body.size());
      for (std::size_t p = 0; p < body.size(); ++p) {
        sf[p] = m.apply(tip + rot * body[p]) + sigma * Vec3(gauss(rng), gauss(rng), gauss(rng));
      }
      ms.push_back(std::move(mf));
      ss.push_back(std::move(sf));
    }
    master.demos.push_back(std::move(ms));
    slave.demos.push_back(std::move(ss));
  }
  out.raw.objects = { std::move(master), std::move(slave) };
  out.demos = condition(out.raw);

  auto& gt = out.truth;
  gt.target = hole;
  gt.slave_scale = compute_canonical_shape(out.demos.objects[1]).scale;
  switch (spec.kind) {
    case SynthKind::p2p:
      gt.kinds = { ConstraintKind::p2p };
      break;
    case SynthKind::p2l:
      gt.kinds = { ConstraintKind::p2l };
      break;
    case SynthKind::p2P:
      gt.kinds = { ConstraintKind::p2P };
      break;
    case SynthKind::p2c:
      gt.kinds = { ConstraintKind::p2c };
      break;
    case SynthKind::p2S:
      gt.kinds = { ConstraintKind::p2S };
      break;
    case SynthKind::oneshot:
      gt.kinds = { ConstraintKind::p2p, ConstraintKind::p2p, ConstraintKind::p2p };
      break;
    case SynthKind::insert:
      gt.kinds = { ConstraintKind::p2p, ConstraintKind::p2l };
      break;
  }
  gt.keypoints = { 0 };
  if (spec.kind == SynthKind::insert) {
    gt.keypoints.push_back(spec.slave_points - 1);
  }
  return out;
}

} // namespace kvil
