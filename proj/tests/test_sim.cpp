#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

using namespace kvil;

namespace {

PointSet
box_points()
{
  return { Vec3(0, 0, 0),     Vec3(0.2, 0, 0),    Vec3(0, 0.15, 0),    Vec3(0, 0, 0.1),
           Vec3(0.2, 0.15, 0), Vec3(0.2, 0, 0.1), Vec3(0.05, 0.1, 0.08) };
}

PointSet
stick_points()
{
  PointSet out;
  for (int i = 0; i < 6; ++i) {
    out.emplace_back(0.1 + 0.004 * (i % 2), 0.05, 0.12 + 0.05 * i);
  }
  return out;
}

std::vector<DescriptorId>
ids(DescriptorId base, std::size_t n)
{
  std::vector<DescriptorId> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(base + static_cast<DescriptorId>(i));
  }
  return out;
}

// A task whose keypoints already sit on their goals when the slave is at
// its canonical pose: a p2p tip and a p2l end point with symmetric targets.
TaskRepresentation
resting_task()
{
  TaskRepresentation task;
  task.demo_count = 3;
  task.time_steps = 20;
  const auto box = box_points();
  const auto stick = stick_points();
  task.objects.push_back({ "box", Role::master, ids(1000, box.size()),
                           { box, max_pairwise_distance(box) } });
  task.objects.push_back({ "stick", Role::slave, ids(2000, stick.size()),
                           { stick, max_pairwise_distance(stick) } });

  LocalFrameSpec frame;
  frame.anchor = 0;
  frame.origin = box[0];
  for (std::size_t i = 0; i < box.size(); ++i) {
    frame.neighbors.push_back(i);
    frame.neighbor_ids.push_back(task.objects[0].descriptor_ids[i]);
    frame.references.push_back(box[i]);
  }

  Keypoint tip;
  tip.object = 1;
  tip.candidate = 0;
  tip.descriptor_id = 2000;
  tip.time = task.time_steps - 1;
  tip.constraint = ConstraintManifold::from_linear(
    { ConstraintKind::p2p, stick[0], {}, 0, tip.time, 0 });
  tip.frame_spec = frame;
  tip.vmp = make_vmp(20, 3);
  tip.body_position = stick[0];

  Keypoint end;
  end.object = 1;
  end.candidate = stick.size() - 1;
  end.descriptor_id = 2000 + static_cast<DescriptorId>(end.candidate);
  end.time = task.time_steps - 1;
  const Vec3 dir = Vec3(1, 1, 0).normalized();
  end.constraint = ConstraintManifold::from_linear(
    { ConstraintKind::p2l, stick.back(), { dir }, 0, end.time, end.candidate });
  end.frame_spec = frame;
  end.vmp = make_vmp(20, 1);
  end.targets = Eigen::MatrixXd(4, 1);
  end.targets << -0.02, -0.01, 0.01, 0.02;
  end.body_position = stick.back();

  task.keypoints = { tip, end };
  return task;
}

SceneInstance
resting_scene(const TaskRepresentation& task)
{
  SceneInstance s;
  s.master = make_observation(task.objects[0].descriptor_ids, task.objects[0].canonical.positions);
  s.slave_ids = task.objects[1].descriptor_ids;
  s.slave_points = task.objects[1].canonical.positions;
  return s;
}

const TaskRepresentation&
insert_task()
{
  static const TaskRepresentation task = [] {
    SyntheticTaskSpec spec;
    spec.kind = SynthKind::insert;
    return extract_task(generate_synthetic(spec, 7).demos, test::fast_extract());
  }();
  return task;
}

const TaskRepresentation&
oneshot_task()
{
  static const TaskRepresentation task = [] {
    SyntheticTaskSpec spec;
    spec.kind = SynthKind::oneshot;
    return extract_task(generate_synthetic(spec, 7).demos, test::fast_extract());
  }();
  return task;
}

SimLog
synthetic_log(std::size_t keypoints, std::size_t records, double window_start)
{
  SimLog log;
  log.dt = 0.01;
  log.window_start = window_start;
  log.phi = 0.3;
  for (std::size_t l = 0; l < keypoints; ++l) {
    log.descriptor_ids.push_back(static_cast<DescriptorId>(l));
    log.kinds.push_back(ConstraintKind::p2p);
  }
  for (std::size_t i = 0; i < records; ++i) {
    SimRecord r;
    r.time = log.dt * static_cast<double>(i);
    for (std::size_t l = 0; l < keypoints; ++l) {
      r.goals.push_back(Vec3(0.1 * static_cast<double>(l), 0.2, -0.3));
    }
    r.keypoints = r.goals;
    r.targets = r.goals;
    log.records.push_back(std::move(r));
  }
  return log;
}

} // namespace

TEST(Simulate, EquilibriumStartStaysPut)
{
  const auto task = resting_task();
  const auto log = simulate_reproduction(task, resting_scene(task));
  ASSERT_EQ(log.status, "ok");
  const double phi = task.objects[1].canonical.scale;
  EXPECT_EQ(log.phi, phi);
  for (const auto& r : log.records) {
    for (std::size_t l = 0; l < 2; ++l) {
      EXPECT_LE((r.keypoints[l] - r.goals[l]).norm(), 1e-9 * phi);
    }
  }
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_LE(final_error(log, l), 1e-9 * phi);
    EXPECT_LE(window_accuracy(log, l), 1e-9 * phi);
  }
}

TEST(Simulate, LogLayout)
{
  const auto task = resting_task();
  SimOptions opt;
  opt.motion_duration = 0.5;
  opt.end_window = 0.25;
  opt.log_stride = 5;
  const auto log = simulate_reproduction(task, resting_scene(task), opt, 3);
  EXPECT_EQ(log.seed, 3u);
  EXPECT_DOUBLE_EQ(log.dt, 5e-3);
  EXPECT_DOUBLE_EQ(log.window_start, 0.5);
  ASSERT_EQ(log.records.size(), 151u);
  EXPECT_NEAR(log.records.back().time, 0.75, 1e-12);
  EXPECT_EQ(log.descriptor_ids, (std::vector<DescriptorId>{ 2000, 2005 }));
  EXPECT_EQ(log.kinds, (std::vector<ConstraintKind>{ ConstraintKind::p2p, ConstraintKind::p2l }));
}

TEST(Simulate, Errors)
{
  auto task = resting_task();
  auto scene = resting_scene(task);
  scene.slave_ids[0] = 99;
  EXPECT_THROW(simulate_reproduction(task, scene), SchemaError);

  auto two = resting_task();
  two.keypoints[1].object = 0;
  EXPECT_THROW(simulate_reproduction(two, resting_scene(two)), SpecIncompatible);

  SimOptions bad;
  bad.dt = 0.0;
  EXPECT_THROW(simulate_reproduction(task, resting_scene(task), bad), SpecIncompatible);
}

TEST(Simulate, BlowupIsLogged)
{
  const auto& task = insert_task();
  SimOptions opt;
  opt.gains.virtual_inertia = 1e9;
  const auto log = simulate_reproduction(task, make_synthetic_scene(task, 1), opt);
  EXPECT_EQ(log.status, "blowup");
  EXPECT_FALSE(log.message.empty());
  EXPECT_TRUE(std::isinf(final_error(log, 0)));
  const std::vector<SimLog> logs{ log };
  EXPECT_EQ(evaluate(logs, 2e-3).successes, 0u);
}

TEST(Simulate, Deterministic)
{
  const auto& task = insert_task();
  SceneOptions so;
  so.slave_scale = 1.5;
  const auto scene = make_synthetic_scene(task, 11, so);
  const auto a = simulate_reproduction(task, scene, {}, 11);
  const auto b = simulate_reproduction(task, scene, {}, 11);
  EXPECT_EQ(simlog_to_ndjson(a), simlog_to_ndjson(b));

  const auto serial = run_synthetic_trials(task, 4, 20, so, {}, 1);
  const auto threaded = run_synthetic_trials(task, 4, 20, so, {}, 2);
  ASSERT_EQ(serial.size(), 4u);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].seed, 20 + i);
    EXPECT_EQ(simlog_to_ndjson(serial[i]), simlog_to_ndjson(threaded[i]));
  }
}

TEST(Simulate, InsertionWithLongerStick)
{
  const auto& task = insert_task();
  ASSERT_EQ(task.keypoints.size(), 2u);
  SceneOptions so;
  so.slave_scale = 1.5;
  const auto logs = run_synthetic_trials(task, 5, 100, so, {}, 1);
  const auto m = evaluate(logs, 2e-3);
  EXPECT_EQ(m.successes, 5u);
  for (const auto& log : logs) {
    const auto& r = log.records.back();
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& kp = task.keypoints[l];
      const RigidTransform frame = detect_frame(kp.frame_spec, make_synthetic_scene(task, log.seed, so).master);
      // Distance of the final keypoint to its frame-local manifold.
      EXPECT_LE(std::abs(kp.constraint.orthogonal_distance(frame.apply_inverse(r.keypoints[l]))),
                2e-3 * log.phi);
    }
  }

  SimOptions off;
  off.priority = false;
  const auto m_off = evaluate(run_synthetic_trials(task, 5, 100, so, off, 1), 2e-3);
  EXPECT_GT(m_off.keypoints[0].accuracy, m.keypoints[0].accuracy);
}

TEST(Simulate, OneShotPriorityGains)
{
  const auto& task = oneshot_task();
  ASSERT_EQ(task.keypoints.size(), 3u);
  SceneOptions so;
  so.slave_scale = 0.8;
  SimOptions opt;
  opt.gains = ControllerGains::one_shot(3);
  const auto m = evaluate(run_synthetic_trials(task, 10, 100, so, opt, 1), 2e-3);
  EXPECT_LT(m.keypoints[0].accuracy, m.keypoints[1].accuracy);
  EXPECT_LT(m.keypoints[0].accuracy, m.keypoints[2].accuracy);
}

TEST(Simulate, RigidSceneMotionIsEquivariant)
{
  const auto& task = insert_task();
  SceneOptions so;
  so.slave_scale = 1.5;
  const auto scene = make_synthetic_scene(task, 5, so);
  std::mt19937_64 rng(9);
  const auto g = test::random_transform(rng, 0.5);
  SceneInstance moved = scene;
  for (auto& [id, p] : moved.master) {
    p = g.apply(p);
  }
  for (auto& p : moved.slave_points) {
    p = g.apply(p);
  }
  const auto a = simulate_reproduction(task, scene);
  const auto b = simulate_reproduction(task, moved);
  ASSERT_EQ(a.records.size(), b.records.size());
  const auto& ra = a.records.back();
  const auto& rb = b.records.back();
  for (std::size_t l = 0; l < ra.keypoints.size(); ++l) {
    EXPECT_LE((g.apply(ra.keypoints[l]) - rb.keypoints[l]).norm(), 1e-6);
  }
  EXPECT_LE((g.apply(ra.pose.translation) - rb.pose.translation).norm(), 1e-6);
  // The body frame starts axis-aligned, so its rotation is conjugated.
  EXPECT_LE((g.rotation * ra.pose.rotation * g.rotation.transpose() - rb.pose.rotation).norm(),
            1e-6);
}

TEST(Scene, PerturbationStretchesAlongAxis)
{
  const auto& task = insert_task();
  const double phi = task.objects[1].canonical.scale;
  SceneOptions so;
  so.slave_scale = 1.5;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto scene = make_synthetic_scene(task, seed, so);
    EXPECT_NEAR(max_pairwise_distance(scene.slave_points), 1.5 * phi, 0.02 * phi);
    SceneOptions plain;
    const auto rigid = make_synthetic_scene(task, seed, plain);
    EXPECT_NEAR(max_pairwise_distance(rigid.slave_points), phi, 1e-12);
  }
  SceneInstance empty;
  EXPECT_THROW(perturb_slave(empty, 1.0, 0, so), SchemaError);
}

TEST(Metrics, PerfectTracking)
{
  const std::vector<SimLog> logs{ synthetic_log(2, 50, 0.2), synthetic_log(2, 50, 0.2) };
  const auto m = evaluate(logs, 2e-3);
  EXPECT_EQ(m.trials, 2u);
  EXPECT_EQ(m.successes, 2u);
  EXPECT_DOUBLE_EQ(m.success_rate(), 1.0);
  for (const auto& k : m.keypoints) {
    EXPECT_EQ(k.accuracy, 0.0);
    EXPECT_LE(k.precision, 1e-15); // centroid rounding only
  }
}

TEST(Metrics, ConstantBias)
{
  const Vec3 bias(3e-3, -4e-3, 0.0);
  auto log = synthetic_log(1, 60, 0.3);
  for (auto& r : log.records) {
    r.keypoints[0] += bias;
  }
  const std::vector<SimLog> logs{ log };
  const auto m = evaluate(logs, 2e-3);
  EXPECT_NEAR(m.keypoints[0].accuracy, bias.norm(), 1e-15);
  EXPECT_NEAR(m.keypoints[0].precision, 0.0, 1e-15);
  // 5 mm against a tolerance of 0.6 mm.
  EXPECT_EQ(m.successes, 0u);
  EXPECT_EQ(evaluate(logs, 0.02).successes, 1u);
}

TEST(Metrics, WindowOnlyCountsRegulation)
{
  auto log = synthetic_log(1, 100, 0.5);
  for (auto& r : log.records) {
    if (r.time < 0.5 - 1e-9) {
      r.keypoints[0] += Vec3(1.0, 0.0, 0.0);
    } else {
      r.keypoints[0] += Vec3(0.0, (r.time < 0.75 ? 1.0 : -1.0) * 1e-3, 0.0);
    }
  }
  const std::vector<SimLog> logs{ log };
  const auto m = evaluate(logs, 2e-3);
  EXPECT_NEAR(m.keypoints[0].accuracy, 1e-3, 1e-15);
  EXPECT_NEAR(m.keypoints[0].precision, 1e-3, 1e-15);
}

TEST(Metrics, Errors)
{
  EXPECT_EQ(evaluate(std::vector<SimLog>{}, 2e-3).trials, 0u);
  auto other = synthetic_log(1, 10, 0.0);
  other.descriptor_ids[0] = 42;
  const std::vector<SimLog> logs{ synthetic_log(1, 10, 0.0), other };
  EXPECT_THROW(evaluate(logs, 2e-3), SchemaError);
}

TEST(SimLogIo, RoundTripIsByteStable)
{
  const auto& task = insert_task();
  const auto log = simulate_reproduction(task, make_synthetic_scene(task, 2));
  const std::string a = simlog_to_ndjson(log);
  const auto back = simlog_from_ndjson(a);
  EXPECT_EQ(simlog_to_ndjson(back), a);
  ASSERT_EQ(back.records.size(), log.records.size());
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    for (std::size_t l = 0; l < 2; ++l) {
      EXPECT_LE((back.records[i].keypoints[l] - log.records[i].keypoints[l]).norm(), 1e-12);
    }
  }

  const auto dir = std::filesystem::temp_directory_path() / "kvil_test_simlog";
  std::filesystem::create_directories(dir);
  write_simlog(dir / "a.ndjson", log);
  write_simlog(dir / "b.ndjson", read_simlog(dir / "a.ndjson"));
  EXPECT_EQ(detail::read_text(dir / "a.ndjson"), detail::read_text(dir / "b.ndjson"));
  std::filesystem::remove_all(dir);
}

TEST(SimLogIo, RejectsMalformed)
{
  EXPECT_THROW(simlog_from_ndjson(""), SchemaError);
  EXPECT_THROW(simlog_from_ndjson("{\"format\":\"other\"}\n{}\n"), SchemaError);
  EXPECT_THROW(simlog_from_ndjson("{not json\n"), ParseError);
  const std::string good = simlog_to_ndjson(synthetic_log(1, 3, 0.0));
  std::string bad_status = good;
  bad_status.replace(bad_status.find("\"ok\""), 4, "\"odd\"");
  EXPECT_THROW(simlog_from_ndjson(bad_status), SchemaError);
  EXPECT_THROW(read_simlog("/nonexistent/kvil.ndjson"), ParseError);
}
