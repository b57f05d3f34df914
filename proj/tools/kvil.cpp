#include <kvil/kvil.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

std::vector<double>
parse_lambda_grid(const std::string& text)
{
  if (text == "auto") {
    return kvil::default_lambda_grid();
  }
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size() || !(v > 0.0)) {
      throw kvil::Error("invalid --lambda-grid entry '" + item + "'");
    }
    grid.push_back(v);
  }
  if (grid.empty()) {
    throw kvil::Error("empty --lambda-grid");
  }
  return grid;
}

void
print_task_table(const kvil::TaskRepresentation& task)
{
  std::printf("%-3s %-10s %9s %13s %-4s %5s %4s %10s\n",
              "#", "object", "candidate", "descriptor", "kind", "frame", "time", "score");
  for (std::size_t i = 0; i < task.keypoints.size(); ++i) {
    const auto& k = task.keypoints[i];
    std::printf("%-3zu %-10s %9zu %13lld %-4s %5zu %4zu %10.4g\n",
                i,
                task.objects[k.object].name.c_str(),
                k.candidate,
                static_cast<long long>(k.descriptor_id),
                std::string(kvil::to_string(k.kind())).c_str(),
                k.frame,
                k.time,
                k.score);
  }
}

void
print_metrics_table(const kvil::Metrics& m)
{
  std::printf("%-3s %13s %-4s %14s %14s\n", "#", "descriptor", "kind", "Acc [mm]", "Prec [mm]");
  for (std::size_t l = 0; l < m.keypoints.size(); ++l) {
    const auto& k = m.keypoints[l];
    std::printf("%-3zu %13lld %-4s %14.4f %14.4f\n",
                l,
                static_cast<long long>(k.descriptor_id),
                std::string(kvil::to_string(k.kind)).c_str(),
                1e3 * k.accuracy,
                1e3 * k.precision);
  }
  std::printf("R: %.1f %% (%zu/%zu)\n", 100.0 * m.success_rate(), m.successes, m.trials);
}

std::string
trial_name(std::size_t i)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "trial_%03zu.ndjson", i);
  return buf;
}

} // namespace

int
main(int argc, char** argv)
{
  CLI::App app{ "Keypoint constraint extraction and reproduction" };
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic demonstrations");
  std::string kind = "p2p";
  std::size_t n_demos = 0;
  double noise = 0.005;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  kvil::SyntheticTaskSpec spec;
  synth->add_option("--kind", kind, "p2p|p2l|p2P|p2c|p2S|oneshot|insert")->required();
  synth->add_option("--n-demos", n_demos, "Number of demos (0: the kind's minimum)");
  synth->add_option("--noise", noise, "Observation noise std, fraction of the slave length");
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--time-steps", spec.time_steps, "Resampled time steps");
  synth->add_option("--slave-points", spec.slave_points, "Candidates on the slave");
  synth->add_option("--master-points", spec.master_points, "Candidates on the master");
  synth->add_option("--out", synth_out, "Output demonstration file")->required();

  // extract
  auto* extract = app.add_subcommand("extract", "Extract a task representation");
  std::string demos_path;
  std::string task_out;
  std::string lambda_grid = "auto";
  kvil::ExtractOptions eo;
  kvil::LoadOptions lo;
  extract->add_option("--demos", demos_path, "Demonstration file")->required();
  extract->add_option("--xi1", eo.thresholds.xi1, "Lower variability threshold");
  extract->add_option("--xi2", eo.thresholds.xi2, "Upper variability threshold");
  extract->add_option("--lambda-grid", lambda_grid, "auto or comma-separated smoothing values");
  extract->add_option("--q", eo.q, "Neighbours per local frame");
  extract->add_option("--stride", eo.time_stride, "Initial time stride of the sweep");
  extract->add_option("--nonlinear-frames", eo.nonlinear_frames,
                      "Frames per candidate tried with principal manifolds (0: all)");
  extract->add_option("--smoothing", lo.smoothing_window, "Moving-average window");
  extract->add_option("--out", task_out, "Output task file")->required();

  // reproduce
  auto* reproduce = app.add_subcommand("reproduce", "Simulate reproductions of a task");
  std::string task_path;
  std::string scene_path;
  bool synth_scene = false;
  std::size_t trials = 20;
  std::uint64_t repro_seed = 0;
  bool no_priority = false;
  std::string logs_out;
  kvil::SceneOptions so;
  kvil::SimOptions sim;
  reproduce->add_option("--task", task_path, "Task file")->required();
  auto* scene_opt = reproduce->add_option("--scene", scene_path, "Scene file (one time step)");
  auto* synth_opt = reproduce->add_flag("--synth-scene", synth_scene, "Perturbed synthetic scenes");
  scene_opt->excludes(synth_opt);
  reproduce->add_option("--trials", trials, "Number of trials");
  reproduce->add_option("--seed", repro_seed, "Perturbation seed; trial i uses seed + i");
  reproduce->add_flag("--no-priority", no_priority, "Disable priority projection");
  reproduce->add_option("--slave-scale", so.slave_scale, "Stretch of the slave along its axis");
  reproduce->add_option("--max-rotation", so.max_rotation, "Initial rotation perturbation [rad]");
  reproduce->add_option("--max-translation", so.max_translation,
                        "Initial translation perturbation, fraction of the slave scale");
  reproduce->add_option("--duration", sim.motion_duration, "Motion duration [s]");
  reproduce->add_option("--end-window", sim.end_window, "Regulation window [s]");
  reproduce->add_option("--dt", sim.dt, "Integration step [s]");
  reproduce->add_option("--log-stride", sim.log_stride, "Steps between log records");
  double repro_tol = 2e-3;
  reproduce->add_option("--success-tolerance", repro_tol, "Success tolerance, fraction of phi");
  reproduce->add_option("--out", logs_out, "Output log directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Recompute metrics from simulation logs");
  std::string logs_in;
  double tolerance = 2e-3;
  std::string metrics_out;
  eval->add_option("--logs", logs_in, "Log directory")->required();
  eval->add_option("--tolerance", tolerance, "Success tolerance, fraction of phi");
  eval->add_option("--json", metrics_out, "Also write the metrics as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      spec.kind = kvil::parse_synth_kind(kind);
      spec.demos = n_demos;
      spec.noise = noise;
      const auto out = kvil::generate_synthetic(spec, synth_seed);
      kvil::write_raw_demonstrations(synth_out, out.raw);
      std::printf("wrote %zu demos (%s) to %s; ground truth:",
                  out.demos.demo_count(),
                  std::string(kvil::to_string(spec.kind)).c_str(),
                  synth_out.c_str());
      for (std::size_t i = 0; i < out.truth.kinds.size() && i < out.truth.keypoints.size(); ++i) {
        std::printf(" %s@candidate %zu",
                    std::string(kvil::to_string(out.truth.kinds[i])).c_str(),
                    out.truth.keypoints[i]);
      }
      std::printf("\n");
      return 0;
    }

    if (*extract) {
      eo.pme.lambda_grid = parse_lambda_grid(lambda_grid);
      const auto demos = kvil::load_demonstration_set(demos_path, lo);
      const auto task = kvil::extract_task(demos, eo);
      kvil::write_task(task_out, task);
      print_task_table(task);
      return 0;
    }

    if (*reproduce) {
      if (scene_path.empty() && !synth_scene) {
        throw kvil::Error("one of --scene or --synth-scene is required");
      }
      const auto task = kvil::read_task(task_path);
      sim.priority = !no_priority;
      if (task.demo_count == 1) {
        sim.gains = kvil::ControllerGains::one_shot(task.keypoints.size());
      }
      std::vector<kvil::SimLog> logs;
      if (synth_scene) {
        logs = kvil::run_synthetic_trials(task, trials, repro_seed, so, sim);
      } else {
        const auto base = kvil::scene_from_raw(kvil::read_raw_demonstrations(scene_path), task);
        const double scale = task.objects[task.keypoints.front().object].canonical.scale;
        // Trial 0 is the scene as given; later trials perturb the slave.
        logs = kvil::run_trials(
          task, trials, repro_seed,
          [&](std::size_t i) {
            auto s = base;
            if (i > 0) {
              kvil::perturb_slave(s, scale, repro_seed + i, so);
            }
            return s;
          },
          sim);
      }
      fs::create_directories(logs_out);
      bool blown = false;
      for (std::size_t i = 0; i < logs.size(); ++i) {
        kvil::write_simlog(fs::path(logs_out) / trial_name(i), logs[i]);
        if (logs[i].status != "ok") {
          std::fprintf(stderr, "trial %zu: %s\n", i, logs[i].message.c_str());
          blown = true;
        }
      }
      const auto m = kvil::evaluate(logs, repro_tol);
      kvil::detail::write_text(fs::path(logs_out) / "metrics.json",
                               kvil::metrics_to_json(m, repro_tol).dump(1) + "\n");
      print_metrics_table(m);
      return blown ? 3 : 0;
    }

    if (*eval) {
      if (!fs::is_directory(logs_in)) {
        throw kvil::Error("log directory " + logs_in + " does not exist");
      }
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(logs_in)) {
        if (e.is_regular_file() && e.path().extension() == ".ndjson") {
          files.push_back(e.path());
        }
      }
      if (files.empty()) {
        throw kvil::Error("no .ndjson logs in " + logs_in);
      }
      std::sort(files.begin(), files.end());
      std::vector<kvil::SimLog> logs;
      for (const auto& f : files) {
        logs.push_back(kvil::read_simlog(f));
      }
      const auto m = kvil::evaluate(logs, tolerance);
      print_metrics_table(m);
      if (!metrics_out.empty()) {
        kvil::detail::write_text(metrics_out, kvil::metrics_to_json(m, tolerance).dump(1) + "\n");
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
