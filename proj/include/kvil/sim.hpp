#pragma once

// Simulation log: NDJSON. Line 1 is a header ("format": "kvil-simlog/1"),
// then one line per logged step, then a status line.

#include "demo_io.hpp"
#include "kac.hpp"
#include "parallel.hpp"
#include "task.hpp"

#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <sstream>

namespace kvil {

inline constexpr const char* kSimLogFormat = "kvil-simlog/1";

//! Static master observation and the initial slave point cloud.
struct SceneInstance
{
  Observation master;
  std::vector<DescriptorId> slave_ids;
  PointSet slave_points;
};

struct SceneOptions
{
  double slave_scale = 1.0;     // stretch of the slave along its principal axis
  double max_rotation = 0.5;    // rad, initial slave perturbation
  double max_translation = 0.3; // fraction of the slave scale
};

namespace detail {

inline std::size_t
sim_object(const TaskRepresentation& task)
{
  if (task.keypoints.empty()) {
    throw SpecIncompatible("task has no keypoints");
  }
  const std::size_t s = task.keypoints.front().object;
  for (const auto& k : task.keypoints) {
    if (k.object != s) {
      throw SpecIncompatible("reproduction handles a single slave object");
    }
  }
  return s;
}

} // namespace detail

//! Stretches the slave along its principal axis about its centroid, then
//! applies a random rotation (up to max_rotation) about the centroid and a
//! random translation (up to max_translation * scale).
inline void
perturb_slave(SceneInstance& scene, double scale, std::uint64_t seed, const SceneOptions& opt)
{
  if (scene.slave_points.empty()) {
    throw SchemaError("scene has no slave points");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto direction = [&] {
    const Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    return Vec3(v.normalized());
  };
  auto& pts = scene.slave_points;
  const Vec3 c = centroid(pts);
  if (opt.slave_scale != 1.0) {
    Mat3 cov = Mat3::Zero();
    for (const auto& p : pts) {
      cov += (p - c) * (p - c).transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    const Vec3 axis = es.eigenvectors().col(2);
    for (auto& p : pts) {
      p += (opt.slave_scale - 1.0) * axis.dot(p - c) * axis;
    }
  }
  const Mat3 dr = so3_exp(opt.max_rotation * uni(rng) * direction());
  const Vec3 dt = opt.max_translation * scale * uni(rng) * direction();
  for (auto& p : pts) {
    p = c + dt + dr * (p - c);
  }
}

//! Demo-0 start configuration under a random global pose, with the slave
//! perturbed as in perturb_slave.
inline SceneInstance
make_synthetic_scene(const TaskRepresentation& task, std::uint64_t seed, const SceneOptions& opt = {})
{
  const std::size_t si = detail::sim_object(task);
  const auto& master = task.objects[task.master()];
  const auto& slave = task.objects[si];
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Vec3 axis = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
  const RigidTransform world{ so3_exp(M_PI * uni(rng) * axis), Vec3(uni(rng), uni(rng), uni(rng)) };

  SceneInstance scene;
  PointSet mpts;
  for (const auto& p : master.canonical.positions) {
    mpts.push_back(world.apply(p));
  }
  scene.master = make_observation(master.descriptor_ids, mpts);
  scene.slave_ids = slave.descriptor_ids;
  for (const auto& p : slave.canonical.positions) {
    scene.slave_points.push_back(world.apply(p));
  }
  perturb_slave(scene, slave.canonical.scale, rng(), opt);
  return scene;
}

//! Scene from a one-step demonstration file; objects are matched by name.
inline SceneInstance
scene_from_raw(const RawDemonstrations& raw, const TaskRepresentation& task)
{
  const std::size_t si = detail::sim_object(task);
  auto find = [&](const std::string& name) -> const RawObject& {
    for (const auto& o : raw.objects) {
      if (o.name == name) {
        return o;
      }
    }
    throw SchemaError("scene has no object named '" + name + "'");
  };
  const auto& m = find(task.objects[task.master()].name);
  const auto& s = find(task.objects[si].name);
  if (s.demos.empty() || s.demos.front().empty()) {
    throw SchemaError("scene object '" + s.name + "' is empty");
  }
  SceneInstance scene;
  scene.master = scene_observation(m);
  scene.slave_ids = s.descriptor_ids;
  scene.slave_points = s.demos.front().front();
  return scene;
}

struct SimOptions
{
  ControllerGains gains;
  double dt = 1e-3;
  double motion_duration = 2.0; // seconds for a keypoint selected at the last time step
  double end_window = 2.0;      // seconds of regulation after the motion
  std::size_t log_stride = 10;
  bool priority = true;
};

struct SimRecord
{
  double time = 0.0;
  std::vector<Vec3> keypoints;
  std::vector<Vec3> targets;
  std::vector<Vec3> goals;
  RigidTransform pose; // body frame (origin at the keypoint mean)
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
};

struct SimLog
{
  std::uint64_t seed = 0;
  double dt = 0.0;           // spacing of the records
  double window_start = 0.0; // regulation window begins here
  double phi = 0.0;          // slave scale
  bool priority = true;
  std::vector<DescriptorId> descriptor_ids;
  std::vector<ConstraintKind> kinds;
  std::vector<SimRecord> records;
  std::string status = "ok"; // or "blowup"
  std::string message;
};

namespace detail {

struct KeypointRuntime
{
  RigidTransform frame;
  Vec3 attachment;
  double duration = 0.0;
  std::optional<VmpPlan> plan;
  std::optional<DensityModel> density;
};

} // namespace detail

//! Drives the slave with keypoint attractors, density forces and the
//! admittance controller until the end of the regulation window.
inline SimLog
simulate_reproduction(const TaskRepresentation& task,
                      const SceneInstance& scene,
                      const SimOptions& opt = {},
                      std::uint64_t seed = 0)
{
  opt.gains.check();
  if (!(opt.dt > 0.0) || opt.log_stride == 0 || !(opt.motion_duration >= 0.0) ||
      !(opt.end_window >= 0.0)) {
    throw SpecIncompatible("invalid simulation options");
  }
  const std::size_t si = detail::sim_object(task);
  const auto& kps = task.keypoints;
  const std::size_t nk = kps.size();
  const auto slave_obs = make_observation(scene.slave_ids, scene.slave_points);

  SimLog log;
  log.seed = seed;
  log.dt = opt.dt * static_cast<double>(opt.log_stride);
  log.window_start = opt.motion_duration;
  log.phi = task.objects[si].canonical.scale;
  log.priority = opt.priority;

  std::vector<Vec3> k0(nk);
  for (std::size_t l = 0; l < nk; ++l) {
    const auto it = slave_obs.find(kps[l].descriptor_id);
    if (it == slave_obs.end()) {
      throw SchemaError("scene lacks slave descriptor " + std::to_string(kps[l].descriptor_id));
    }
    k0[l] = it->second;
    log.descriptor_ids.push_back(kps[l].descriptor_id);
    log.kinds.push_back(kps[l].kind());
  }
  const Vec3 center = centroid(k0);

  std::optional<std::size_t> lead; // highest-priority point constraint
  std::vector<detail::KeypointRuntime> rt(nk);
  double lever2 = 0.0;
  const double last = task.time_steps > 1 ? static_cast<double>(task.time_steps - 1) : 1.0;
  for (std::size_t l = 0; l < nk; ++l) {
    const auto& kp = kps[l];
    auto& r = rt[l];
    r.frame = detect_frame(kp.frame_spec, scene.master);
    r.attachment = k0[l] - center;
    lever2 += r.attachment.squaredNorm();
    r.duration = opt.motion_duration * static_cast<double>(kp.time) / last;
    const Vec3 local = r.frame.apply_inverse(k0[l]);
    if (kp.kind() == ConstraintKind::p2p) {
      r.plan.emplace(kp.vmp, Eigen::VectorXd(local), Eigen::VectorXd(kp.constraint.anchor));
      if (!lead) {
        lead = l;
      }
    } else {
      r.plan.emplace(kp.vmp,
                     Eigen::VectorXd::Constant(1, kp.constraint.orthogonal_distance(local)),
                     Eigen::VectorXd::Zero(1));
      if (kp.targets.rows() >= 2) {
        r.density = fit_density(kp.targets);
      }
    }
  }
  lever2 /= static_cast<double>(nk);

  AdmittanceState st;
  st.body.position = center;
  st.virt = st.body;
  st.lever = lever2 > 1e-12 ? std::sqrt(lever2) : 1.0;

  const auto steps =
    static_cast<std::size_t>(std::llround((opt.motion_duration + opt.end_window) / opt.dt));
  std::vector<Vec3> k(nk), kdot(nk), target(nk), prev_target(nk), goal(nk), force(nk);
  for (std::size_t n = 0; n <= steps; ++n) {
    const double time = static_cast<double>(n) * opt.dt;
    for (std::size_t l = 0; l < nk; ++l) {
      const Vec3 arm = st.body.rotation * rt[l].attachment;
      k[l] = st.body.position + arm;
      kdot[l] = st.body.velocity + st.body.angular_velocity.cross(arm);
    }
    for (std::size_t l = 0; l < nk; ++l) {
      const auto& kp = kps[l];
      const auto& r = rt[l];
      const double x = r.duration > 0.0 ? CanonicalClock{ r.duration, opt.dt }.phase(time) : 0.0;
      const Eigen::VectorXd y = (*r.plan)(x);
      if (kp.kind() == ConstraintKind::p2p) {
        target[l] = r.frame.apply(Vec3(y));
        goal[l] = r.frame.apply(kp.constraint.anchor);
      } else {
        const Vec3 local = r.frame.apply_inverse(k[l]);
        const Chart u = kp.constraint.project(local);
        const Vec3 foot = kp.constraint.evaluate(u);
        Vec3 dir = kp.kind() == ConstraintKind::p2P ? kp.constraint.normal(u) : Vec3(local - foot);
        const double len = dir.norm();
        dir = len > 1e-12 ? Vec3(dir / len) : Vec3::Zero();
        target[l] = r.frame.apply(foot + y(0) * dir);
        goal[l] = r.frame.apply(foot);
      }
      if (n == 0) {
        prev_target[l] = target[l];
      }
      const Vec3 tdot = (target[l] - prev_target[l]) / opt.dt;
      prev_target[l] = target[l];
      force[l] = attraction_force(
        k[l], kdot[l], target[l], tdot, opt.gains.stiffness_of(l), opt.gains.damping_of(l));

      if (r.density) {
        const Vec3 local = r.frame.apply_inverse(k[l]);
        Vec3 fs = r.frame.rotation *
                  density_force(*r.density, kp.constraint, local, opt.gains.g1, opt.gains.g2);
        if (opt.priority && lead) {
          const Eigen::MatrixXd tangent =
            r.frame.rotation * kp.constraint.jacobian(kp.constraint.project(local));
          fs = priority_project(fs, k[*lead], k[l], kp.kind(), tangent);
        }
        force[l] += fs;
      }
    }
    const Wrench w = aggregate_wrench(k, force);
    if (n % opt.log_stride == 0) {
      log.records.push_back({ time, k, target, goal, st.body.pose(), w.force, w.torque });
    }
    if (n == steps) {
      break;
    }
    // The rest pose follows the virtual pose, so only the wrench and the
    // virtual damping shape the motion.
    st.rest_position = st.virt.position;
    st.rest_rotation = st.virt.rotation;
    try {
      st = admittance_step(st, w, opt.gains, opt.dt);
    } catch (const NumericalBlowup& e) {
      log.status = "blowup";
      log.message = e.what();
      break;
    }
  }
  return log;
}

//! Independent trials; scene_for(i) builds the scene of trial i, which is
//! simulated with seed + i. Results come back in trial order.
template<class SceneFn>
std::vector<SimLog>
run_trials(const TaskRepresentation& task,
           std::size_t trials,
           std::uint64_t seed,
           SceneFn scene_for,
           const SimOptions& sim_opt,
           unsigned threads = 0)
{
  return parallel_map(
    trials,
    [&](std::size_t i) { return simulate_reproduction(task, scene_for(i), sim_opt, seed + i); },
    threads);
}

//! Trials on perturbed synthetic scenes, trial i using seed + i.
inline std::vector<SimLog>
run_synthetic_trials(const TaskRepresentation& task,
                     std::size_t trials,
                     std::uint64_t seed,
                     const SceneOptions& scene_opt,
                     const SimOptions& sim_opt,
                     unsigned threads = 0)
{
  return run_trials(
    task, trials, seed,
    [&](std::size_t i) { return make_synthetic_scene(task, seed + i, scene_opt); },
    sim_opt, threads);
}

struct KeypointMetrics
{
  DescriptorId descriptor_id = 0;
  ConstraintKind kind = ConstraintKind::p2p;
  double accuracy = 0.0;  // mean distance to the goal over the window
  double precision = 0.0; // RMS deviation from the per-trial window mean
};

struct Metrics
{
  std::vector<KeypointMetrics> keypoints;
  std::size_t trials = 0;
  std::size_t successes = 0;
  double success_rate() const
  {
    return trials ? static_cast<double>(successes) / static_cast<double>(trials) : 0.0;
  }
};

//! Final distance of keypoint l to its goal, or +inf for a failed run.
inline double
final_error(const SimLog& log, std::size_t l)
{
  if (log.status != "ok" || log.records.empty()) {
    return std::numeric_limits<double>::infinity();
  }
  const auto& r = log.records.back();
  return (r.goals[l] - r.keypoints[l]).norm();
}

//! Per-trial window accuracy of keypoint l (+inf for a failed run).
inline double
window_accuracy(const SimLog& log, std::size_t l)
{
  if (log.status != "ok") {
    return std::numeric_limits<double>::infinity();
  }
  double acc = 0.0;
  std::size_t cnt = 0;
  for (const auto& r : log.records) {
    if (r.time >= log.window_start - 1e-9) {
      acc += (r.goals[l] - r.keypoints[l]).norm();
      ++cnt;
    }
  }
  return cnt ? acc / static_cast<double>(cnt) : std::numeric_limits<double>::infinity();
}

//! A trial succeeds when every keypoint ends within tolerance * phi of its
//! goal. Accuracy and precision average the successful-or-not runs that
//! completed without blowing up.
inline Metrics
evaluate(std::span<const SimLog> logs, double tolerance)
{
  Metrics m;
  m.trials = logs.size();
  if (logs.empty()) {
    return m;
  }
  const std::size_t nk = logs.front().descriptor_ids.size();
  for (const auto& log : logs) {
    if (log.descriptor_ids != logs.front().descriptor_ids) {
      throw SchemaError("logs describe different keypoints");
    }
  }
  for (std::size_t l = 0; l < nk; ++l) {
    KeypointMetrics km;
    km.descriptor_id = logs.front().descriptor_ids[l];
    km.kind = logs.front().kinds[l];
    double acc = 0.0;
    double sq = 0.0;
    std::size_t runs = 0;
    std::size_t samples = 0;
    for (const auto& log : logs) {
      if (log.status != "ok") {
        continue;
      }
      std::vector<Vec3> window;
      for (const auto& r : log.records) {
        if (r.time >= log.window_start - 1e-9) {
          window.push_back(r.keypoints[l]);
        }
      }
      if (window.empty()) {
        continue;
      }
      acc += window_accuracy(log, l);
      ++runs;
      const Vec3 mean = centroid(window);
      for (const auto& p : window) {
        sq += (p - mean).squaredNorm();
      }
      samples += window.size();
    }
    km.accuracy = runs ? acc / static_cast<double>(runs) : std::numeric_limits<double>::infinity();
    km.precision = samples ? std::sqrt(sq / static_cast<double>(samples))
                           : std::numeric_limits<double>::infinity();
    m.keypoints.push_back(km);
  }
  for (const auto& log : logs) {
    bool ok = log.status == "ok";
    for (std::size_t l = 0; ok && l < nk; ++l) {
      ok = final_error(log, l) <= tolerance * log.phi;
    }
    m.successes += ok ? 1 : 0;
  }
  return m;
}

inline Json
metrics_to_json(const Metrics& m, double tolerance)
{
  Json kps = Json::array();
  for (const auto& k : m.keypoints) {
    kps.push_back({ { "descriptor_id", k.descriptor_id },
                    { "kind", std::string(to_string(k.kind)) },
                    { "accuracy", k.accuracy },
                    { "precision", k.precision } });
  }
  return Json{ { "trials", m.trials },
               { "successes", m.successes },
               { "success_rate", m.success_rate() },
               { "tolerance", tolerance },
               { "keypoints", std::move(kps) } };
}

inline std::string
simlog_to_ndjson(const SimLog& log)
{
  Json kps = Json::array();
  for (std::size_t l = 0; l < log.descriptor_ids.size(); ++l) {
    kps.push_back({ { "descriptor_id", log.descriptor_ids[l] },
                    { "kind", std::string(to_string(log.kinds[l])) } });
  }
  Json head{ { "format", kSimLogFormat },
             { "seed", log.seed },
             { "dt", log.dt },
             { "window_start", log.window_start },
             { "phi", log.phi },
             { "priority", log.priority },
             { "keypoints", std::move(kps) } };
  std::string out = head.dump() + "\n";
  for (const auto& r : log.records) {
    Json j{ { "t", r.time },
            { "k", detail::from_points(r.keypoints) },
            { "target", detail::from_points(r.targets) },
            { "goal", detail::from_points(r.goals) },
            { "pose", detail::from_transform(r.pose) },
            { "force", detail::from_vec3(r.force) },
            { "torque", detail::from_vec3(r.torque) } };
    out += j.dump() + "\n";
  }
  out += Json{ { "status", log.status }, { "message", log.message } }.dump() + "\n";
  return out;
}

inline SimLog
simlog_from_ndjson(const std::string& text)
{
  std::istringstream in(text);
  std::string line;
  std::vector<Json> lines;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      lines.push_back(detail::parse_json(line, "simulation log"));
    }
  }
  try {
    if (lines.size() < 2 || !lines.front().is_object() || !lines.front().contains("format") ||
        lines.front()["format"] != kSimLogFormat) {
      throw SchemaError("not a kvil-simlog/1 document");
    }
    const Json& h = lines.front();
    SimLog log;
    log.seed = h.at("seed").get<std::uint64_t>();
    log.dt = detail::to_real(h.at("dt"), "dt");
    log.window_start = detail::to_real(h.at("window_start"), "window_start");
    log.phi = detail::to_real(h.at("phi"), "phi");
    log.priority = h.at("priority").get<bool>();
    for (const auto& k : h.at("keypoints")) {
      log.descriptor_ids.push_back(k.at("descriptor_id").get<DescriptorId>());
      log.kinds.push_back(parse_constraint_kind(k.at("kind").get<std::string>()));
    }
    const std::size_t nk = log.descriptor_ids.size();
    for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
      const Json& j = lines[i];
      SimRecord r;
      r.time = detail::to_real(j.at("t"), "t");
      r.keypoints = detail::to_points(j.at("k"));
      r.targets = detail::to_points(j.at("target"));
      r.goals = detail::to_points(j.at("goal"));
      if (r.keypoints.size() != nk || r.targets.size() != nk || r.goals.size() != nk) {
        throw SchemaError("record keypoint count mismatch");
      }
      r.pose = detail::to_transform(j.at("pose"));
      r.force = detail::to_vec3(j.at("force"));
      r.torque = detail::to_vec3(j.at("torque"));
      log.records.push_back(std::move(r));
    }
    const Json& tail = lines.back();
    log.status = tail.at("status").get<std::string>();
    log.message = tail.at("message").get<std::string>();
    if (log.status != "ok" && log.status != "blowup") {
      throw SchemaError("unknown status '" + log.status + "'");
    }
    return log;
  } catch (const Json::exception& e) {
    throw SchemaError(e.what());
  }
}

inline void
write_simlog(const std::filesystem::path& path, const SimLog& log)
{
  detail::write_text(path, simlog_to_ndjson(log));
}

inline SimLog
read_simlog(const std::filesystem::path& path)
{
  return simlog_from_ndjson(detail::read_text(path));
}

} // namespace kvil
