#pragma once

#include "clustering.hpp"
#include "parallel.hpp"
#include "task.hpp"

#include <map>
#include <tuple>
#include <memory>
#include <set>

namespace kvil {

//! One (candidate, frame, time) triple that satisfies a constraint.
struct Selection
{
  std::size_t object = 0; // slave object index in the demonstration set
  std::size_t candidate = 0;
  std::size_t frame = 0;
  std::size_t time = 0;
  ConstraintKind kind = ConstraintKind::p2p;
  double score = 0.0; // spread across the constrained directions: eta_{d+1} or eta_perp
  std::optional<LinearConstraint> linear;
  std::shared_ptr<const PrincipalManifold> manifold;
};

//! Single-linkage clusters of selection times, ordered by mean time.
inline std::vector<std::vector<std::size_t>>
cluster_time(const std::vector<Selection>& sel, double cutoff)
{
  std::vector<std::size_t> times;
  for (const auto& s : sel) {
    times.push_back(s.time);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  const auto groups = single_linkage(
    times,
    [](std::size_t a, std::size_t b) {
      return std::abs(static_cast<double>(a) - static_cast<double>(b));
    },
    cutoff);
  std::map<std::size_t, std::size_t> slot;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (auto i : groups[g]) {
      slot[times[i]] = g;
    }
  }
  std::vector<std::vector<std::size_t>> out(groups.size());
  std::vector<double> mean(groups.size(), 0.0);
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const auto g = slot[sel[i].time];
    out[g].push_back(i);
    mean[g] += static_cast<double>(sel[i].time);
  }
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    mean[g] /= static_cast<double>(out[g].size());
  }
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return mean[a] < mean[b]; });
  std::vector<std::vector<std::size_t>> sorted;
  for (auto g : order) {
    sorted.push_back(std::move(out[g]));
  }
  return sorted;
}

//! Within each constraint kind, single-linkage clusters of the members'
//! canonical positions. Returned clusters hold indices into `sel`.
inline std::vector<std::vector<std::size_t>>
cluster_position(const std::vector<Selection>& sel,
                 const std::vector<std::size_t>& members,
                 const CanonicalShape& canonical,
                 double cutoff)
{
  std::map<std::pair<ConstraintKind, std::size_t>, std::vector<std::size_t>> by_kind;
  for (auto i : members) {
    by_kind[{ sel[i].kind, sel[i].object }].push_back(i);
  }
  std::vector<std::vector<std::size_t>> out;
  for (const auto& [key, idx] : by_kind) {
    std::vector<std::size_t> cands;
    for (auto i : idx) {
      cands.push_back(sel[i].candidate);
    }
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    const auto groups = single_linkage(
      cands,
      [&](std::size_t a, std::size_t b) {
        return (canonical.positions[a] - canonical.positions[b]).norm();
      },
      cutoff);
    std::map<std::size_t, std::size_t> slot;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (auto c : groups[g]) {
        slot[cands[c]] = g;
      }
    }
    std::vector<std::vector<std::size_t>> local(groups.size());
    for (auto i : idx) {
      local[slot[sel[i].candidate]].push_back(i);
    }
    for (auto& l : local) {
      out.push_back(std::move(l));
    }
  }
  return out;
}

//! Lowest score per cluster; ties go to the lowest candidate, then frame,
//! then time.
inline std::vector<std::size_t>
select_representatives(const std::vector<Selection>& sel,
                       const std::vector<std::vector<std::size_t>>& clusters)
{
  std::vector<std::size_t> out;
  for (const auto& c : clusters) {
    if (c.empty()) {
      continue;
    }
    auto key = [&](std::size_t i) {
      const auto& s = sel[i];
      return std::make_tuple(s.score, s.candidate, s.frame, s.time);
    };
    out.push_back(*std::min_element(c.begin(), c.end(), [&](auto a, auto b) {
      return key(a) < key(b);
    }));
  }
  return out;
}

//! Mean over demos of the distance from frame j's origin to candidate k at t.
inline double
frame_distance(const FrameLocalTensor& tensor,
               const FrameBank& bank,
               std::size_t j,
               std::size_t k,
               std::size_t t)
{
  double acc = 0.0;
  for (std::size_t n = 0; n < tensor.demos(); ++n) {
    acc += (tensor.at(j, k, t, n) - bank.frames[j].origin).norm();
  }
  return acc / static_cast<double>(tensor.demos());
}

//! The frame closest to the keypoint among `frames`; ties to the lowest id.
inline std::size_t
resolve_frames(const FrameLocalTensor& tensor,
               const FrameBank& bank,
               std::size_t k,
               std::size_t t,
               std::span<const std::size_t> frames)
{
  std::size_t best = frames.front();
  double bd = std::numeric_limits<double>::infinity();
  for (auto j : frames) {
    const double d = frame_distance(tensor, bank, j, k, t);
    if (d < bd || (d == bd && j < best)) {
      bd = d;
      best = j;
    }
  }
  return best;
}

struct ExtractOptions
{
  Thresholds thresholds;
  std::size_t q = 50;
  std::size_t time_stride = 1;
  std::size_t nonlinear_frames = 0; // 0: every frame
  std::size_t min_nonlinear_demos = 11;
  PmeOptions pme;
  double time_cutoff = 0.05;     // fraction of T
  double position_cutoff = 0.1;  // fraction of the slave scale
  int vmp_kernels = 20;
  unsigned threads = 0; // 0: KVIL_THREADS or hardware concurrency
};

//! All selections of one slave at time t.
inline std::vector<Selection>
sweep_time(const FrameLocalTensor& tensor,
           const FrameBank& bank,
           double scale,
           std::size_t object,
           std::size_t t,
           int spatial_dim,
           const ExtractOptions& opt)
{
  std::vector<Selection> out;
  const std::size_t n = tensor.demos();
  const bool nonlinear = n >= opt.min_nonlinear_demos;
  for (std::size_t k = 0; k < tensor.candidates(); ++k) {
    // Only candidates without any linear constraint at this time step are
    // fitted with principal manifolds.
    std::vector<std::size_t> open;
    bool linear = false;
    for (std::size_t j = 0; j < tensor.frames(); ++j) {
      const auto pts = tensor.points(j, k, t);
      const auto var = pca_variability(pts, scale);
      if (auto kind = classify_linear(var, opt.thresholds, n, spatial_dim)) {
        Selection s;
        s.object = object;
        s.candidate = k;
        s.frame = j;
        s.time = t;
        s.kind = *kind;
        s.score = var.eta(manifold_dim(*kind));
        s.linear = make_linear_constraint(*kind, var, j, t, k);
        out.push_back(std::move(s));
        linear = true;
      } else if (nonlinear) {
        open.push_back(j);
      }
    }
    if (linear || open.empty()) {
      continue;
    }
    if (opt.nonlinear_frames > 0 && open.size() > opt.nonlinear_frames) {
      std::vector<double> d(tensor.frames());
      for (auto j : open) {
        d[j] = frame_distance(tensor, bank, j, k, t);
      }
      std::stable_sort(open.begin(), open.end(), [&](auto a, auto b) { return d[a] < d[b]; });
      open.resize(opt.nonlinear_frames);
      std::sort(open.begin(), open.end());
    }
    for (auto j : open) {
      const auto pts = tensor.points(j, k, t);
      if (auto res = fit_and_classify_nonlinear(pts, scale, opt.thresholds, opt.pme)) {
        Selection s;
        s.object = object;
        s.candidate = k;
        s.frame = j;
        s.time = t;
        s.kind = res->kind;
        s.score = res->variability.eta_perp;
        s.manifold = std::make_shared<const PrincipalManifold>(std::move(res->manifold));
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

//! Full (candidate, frame, time) sweep. With a stride > 1 the sweep first
//! visits every stride-th step and then densely revisits the neighbourhood
//! of every time cluster found; at stride 1 it is exhaustive.
inline std::vector<Selection>
sweep(const FrameLocalTensor& tensor,
      const FrameBank& bank,
      double scale,
      std::size_t object,
      int spatial_dim,
      const ExtractOptions& opt)
{
  const std::size_t steps = tensor.steps();
  const std::size_t stride = std::max<std::size_t>(1, opt.time_stride);
  std::set<std::size_t> visited;
  std::vector<std::size_t> times;
  for (std::size_t t = 0; t < steps; t += stride) {
    times.push_back(t);
  }
  if (times.back() != steps - 1) {
    times.push_back(steps - 1);
  }
  std::vector<Selection> all;
  auto run = [&](const std::vector<std::size_t>& ts) {
    auto parts = parallel_map(
      ts.size(),
      [&](std::size_t i) {
        return sweep_time(tensor, bank, scale, object, ts[i], spatial_dim, opt);
      },
      opt.threads);
    for (auto& p : parts) {
      for (auto& s : p) {
        all.push_back(std::move(s));
      }
    }
    visited.insert(ts.begin(), ts.end());
  };
  run(times);
  if (stride > 1 && !all.empty()) {
    std::vector<std::size_t> extra;
    for (const auto& c : cluster_time(all, opt.time_cutoff * static_cast<double>(steps))) {
      std::size_t lo = steps;
      std::size_t hi = 0;
      for (auto i : c) {
        lo = std::min(lo, all[i].time);
        hi = std::max(hi, all[i].time);
      }
      lo = lo >= stride - 1 ? lo - (stride - 1) : 0;
      hi = std::min(steps - 1, hi + stride - 1);
      for (std::size_t t = lo; t <= hi; ++t) {
        if (!visited.count(t)) {
          extra.push_back(t);
          visited.insert(t);
        }
      }
    }
    std::sort(extra.begin(), extra.end());
    extra.erase(std::unique(extra.begin(), extra.end()), extra.end());
    run(extra);
  }
  std::stable_sort(all.begin(), all.end(), [](const Selection& a, const Selection& b) {
    return std::tie(a.time, a.candidate, a.frame) < std::tie(b.time, b.candidate, b.frame);
  });
  return all;
}

//! HAC redundancy resolution: time clusters, then per-kind position
//! clusters, a lowest-variability representative per cluster, and the
//! closest equivalent frame for it. Results are ordered by time cluster,
//! then kind, then candidate.
inline std::vector<Selection>
resolve_redundancy(const std::vector<Selection>& sel,
                   const FrameLocalTensor& tensor,
                   const FrameBank& bank,
                   const CanonicalShape& slave_canonical,
                   const ExtractOptions& opt)
{
  std::vector<Selection> out;
  const double tcut = opt.time_cutoff * static_cast<double>(tensor.steps());
  const double pcut = opt.position_cutoff * slave_canonical.scale;
  for (const auto& tc : cluster_time(sel, tcut)) {
    std::vector<Selection> chosen;
    const auto pcs = cluster_position(sel, tc, slave_canonical, pcut);
    for (auto r : select_representatives(sel, pcs)) {
      const auto& rep = sel[r];
      std::vector<std::size_t> frames;
      std::map<std::size_t, std::size_t> by_frame;
      for (auto i : tc) {
        const auto& s = sel[i];
        if (s.candidate == rep.candidate && s.time == rep.time && s.kind == rep.kind) {
          frames.push_back(s.frame);
          by_frame.emplace(s.frame, i);
        }
      }
      const auto j = resolve_frames(tensor, bank, rep.candidate, rep.time, frames);
      chosen.push_back(sel[by_frame.at(j)]);
    }
    std::stable_sort(chosen.begin(), chosen.end(), [](const Selection& a, const Selection& b) {
      return std::make_tuple(a.kind, a.candidate, a.time) <
             std::make_tuple(b.kind, b.candidate, b.time);
    });
    for (auto& c : chosen) {
      out.push_back(std::move(c));
    }
  }
  return out;
}

//! Frame-local constraint, motion primitive and density targets of one
//! selected keypoint.
inline Keypoint
assemble_keypoint(const Selection& s,
                  const FrameLocalTensor& tensor,
                  const FrameBank& bank,
                  const ObjectRecord& slave,
                  std::size_t task_object,
                  const CanonicalShape& slave_canonical,
                  int vmp_kernels)
{
  Keypoint kp;
  kp.object = task_object;
  kp.candidate = s.candidate;
  kp.descriptor_id = slave.descriptor_ids[s.candidate];
  kp.frame = s.frame;
  kp.time = s.time;
  kp.score = s.score;
  kp.constraint = s.linear ? ConstraintManifold::from_linear(*s.linear)
                           : ConstraintManifold::from_pme(s.kind, *s.manifold);
  kp.frame_spec = bank.frames[s.frame];
  kp.body_position = slave_canonical.positions[s.candidate];

  const std::size_t samples = std::max<std::size_t>(s.time + 1, 2);
  const bool full = s.kind == ConstraintKind::p2p;
  std::vector<Eigen::MatrixXd> demos;
  for (std::size_t n = 0; n < tensor.demos(); ++n) {
    auto path = tensor.path(s.frame, s.candidate, n, s.time);
    while (path.size() < samples) {
      path.push_back(path.back());
    }
    Eigen::MatrixXd y(static_cast<Eigen::Index>(samples), full ? 3 : 1);
    if (full) {
      for (std::size_t t = 0; t < samples; ++t) {
        y.row(static_cast<Eigen::Index>(t)) = path[t].transpose();
      }
    } else {
      const auto d = project_orthogonal(kp.constraint, path);
      for (std::size_t t = 0; t < samples; ++t) {
        y(static_cast<Eigen::Index>(t), 0) = d[t];
      }
    }
    demos.push_back(std::move(y));
  }
  kp.vmp = fit_vmp(demos, std::min<int>(vmp_kernels, static_cast<int>(samples)));

  const int d = kp.constraint.dim();
  kp.targets.resize(static_cast<Eigen::Index>(tensor.demos()), d);
  for (std::size_t n = 0; n < tensor.demos(); ++n) {
    if (d > 0) {
      kp.targets.row(static_cast<Eigen::Index>(n)) =
        kp.constraint.project(tensor.at(s.frame, s.candidate, s.time, n)).transpose();
    }
  }
  return kp;
}

//! Preprocessing, constraint estimation, redundancy resolution and motion
//! primitive training for every slave object.
inline TaskRepresentation
extract_task(const DemonstrationSet& demos, const ExtractOptions& opt = {})
{
  validate(demos);
  opt.thresholds.check();
  const auto roles = assign_roles(demos);
  const std::size_t mi = master_index(roles);
  const auto& master = demos.objects[mi];

  TaskRepresentation task;
  task.demo_count = demos.demo_count();
  task.time_steps = demos.time_steps();
  task.thresholds = opt.thresholds;
  for (std::size_t i = 0; i < demos.objects.size(); ++i) {
    const auto& o = demos.objects[i];
    task.objects.push_back({ o.name, roles[i], o.descriptor_ids, compute_canonical_shape(o) });
  }

  const auto& master_canonical = task.objects[mi].canonical;
  const std::size_t q = std::min(opt.q, master.candidate_count());
  const auto bank = build_frame_bank(master, master_canonical, q);
  const auto frames = detect_frame_series(master, bank);
  const int spatial_dim = demos.spatial_dim();

  for (std::size_t si = 0; si < demos.objects.size(); ++si) {
    if (roles[si] != Role::slave) {
      continue;
    }
    const auto& slave = demos.objects[si];
    const auto& canonical = task.objects[si].canonical;
    const auto tensor = express_in_frames(slave.trajectory, frames);

    std::vector<Selection> chosen;
    if (tensor.demos() == 1) {
      const auto one = one_shot_extract(tensor, bank, spatial_dim);
      for (const auto& c : one.constraints) {
        Selection s;
        s.object = si;
        s.candidate = c.keypoint;
        s.frame = c.frame;
        s.time = c.time;
        s.kind = c.kind;
        s.linear = c;
        chosen.push_back(std::move(s));
      }
    } else {
      const auto all = sweep(tensor, bank, canonical.scale, si, spatial_dim, opt);
      chosen = resolve_redundancy(all, tensor, bank, canonical, opt);
    }
    for (const auto& s : chosen) {
      task.keypoints.push_back(
        assemble_keypoint(s, tensor, bank, slave, si, canonical, opt.vmp_kernels));
    }
  }
  if (task.keypoints.empty()) {
    throw InsufficientData("no constraint satisfied the variance criteria");
  }
  return task;
}

} // namespace kvil
