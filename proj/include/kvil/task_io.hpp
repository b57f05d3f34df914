#pragma once

// Task file: JSON with "format": "kvil-task/1". Frame-local geometry is in
// meters in the canonical frame of the anchoring master candidate.

#include "json_util.hpp"
#include "task.hpp"

namespace kvil {

inline constexpr const char* kTaskFormat = "kvil-task/1";

namespace detail {

inline Json
to_json(const PrincipalManifold& pm)
{
  Json j{ { "dim", pm.dim },
          { "center", from_vec3(pm.center) },
          { "scale", pm.scale },
          { "lambda", pm.lambda },
          { "residual_rms", pm.residual_rms },
          { "curvature_energy", pm.curvature_energy },
          { "lo", Json::array({ pm.lo[0], pm.lo[1] }) },
          { "hi", Json::array({ pm.hi[0], pm.hi[1] }) } };
  if (pm.dim == 1) {
    j["knots"] = from_vector(pm.curve.knots);
    j["values"] = from_matrix(pm.curve.values);
    j["second"] = from_matrix(pm.curve.second);
  } else {
    j["centers"] = from_matrix(pm.surface.centers);
    j["coef"] = from_matrix(pm.surface.coef);
    j["affine"] = from_matrix(pm.surface.affine);
  }
  return j;
}

inline PrincipalManifold
manifold_from_json(const Json& j)
{
  PrincipalManifold pm;
  pm.dim = j.at("dim").get<int>();
  if (pm.dim != 1 && pm.dim != 2) {
    throw SchemaError("manifold dimension must be 1 or 2");
  }
  pm.center = to_vec3(j.at("center"));
  pm.scale = to_real(j.at("scale"), "scale");
  pm.lambda = to_real(j.at("lambda"), "lambda");
  pm.residual_rms = to_real(j.at("residual_rms"), "residual_rms");
  pm.curvature_energy = to_real(j.at("curvature_energy"), "curvature_energy");
  for (int a = 0; a < 2; ++a) {
    pm.lo[a] = to_real(j.at("lo").at(static_cast<std::size_t>(a)), "lo");
    pm.hi[a] = to_real(j.at("hi").at(static_cast<std::size_t>(a)), "hi");
  }
  if (pm.dim == 1) {
    pm.curve.knots = to_vector(j.at("knots"), "knots");
    pm.curve.values = to_matrix(j.at("values"), 3, "values");
    pm.curve.second = to_matrix(j.at("second"), 3, "second");
    if (pm.curve.knots.size() < 3 || pm.curve.values.rows() != pm.curve.knots.size() ||
        pm.curve.second.rows() != pm.curve.knots.size()) {
      throw SchemaError("inconsistent curve arrays");
    }
  } else {
    pm.surface.centers = to_matrix(j.at("centers"), 2, "centers");
    pm.surface.coef = to_matrix(j.at("coef"), 3, "coef");
    pm.surface.affine = to_matrix(j.at("affine"), 3, "affine");
    if (pm.surface.coef.rows() != pm.surface.centers.rows() ||
        pm.surface.affine.rows() != 3) {
      throw SchemaError("inconsistent surface arrays");
    }
  }
  pm.prepare();
  return pm;
}

inline Json
to_json(const VMPModel& m)
{
  Json cov = Json::array();
  for (const auto& c : m.cov) {
    cov.push_back(from_matrix(c));
  }
  return Json{ { "kernels", m.kernels },
               { "dim", m.dim },
               { "width", m.width },
               { "centers", from_vector(m.centers) },
               { "mean", from_matrix(m.mean) },
               { "cov", std::move(cov) } };
}

inline VMPModel
vmp_from_json(const Json& j)
{
  VMPModel m;
  m.kernels = j.at("kernels").get<int>();
  m.dim = j.at("dim").get<int>();
  m.width = to_real(j.at("width"), "width");
  m.centers = to_vector(j.at("centers"), "centers");
  m.mean = to_matrix(j.at("mean"), m.dim, "mean");
  for (const auto& c : j.at("cov")) {
    m.cov.push_back(to_matrix(c, m.kernels, "cov"));
  }
  if (m.centers.size() != m.kernels || m.mean.rows() != m.kernels ||
      m.cov.size() != static_cast<std::size_t>(m.dim)) {
    throw SchemaError("inconsistent VMP arrays");
  }
  return m;
}

inline Json
to_json(const LocalFrameSpec& f)
{
  return Json{ { "anchor", f.anchor },
               { "origin", from_vec3(f.origin) },
               { "neighbors", f.neighbors },
               { "neighbor_ids", f.neighbor_ids },
               { "references", from_points(f.references) } };
}

inline LocalFrameSpec
frame_from_json(const Json& j)
{
  LocalFrameSpec f;
  f.anchor = j.at("anchor").get<std::size_t>();
  f.origin = to_vec3(j.at("origin"));
  f.neighbors = j.at("neighbors").get<std::vector<std::size_t>>();
  f.neighbor_ids = j.at("neighbor_ids").get<std::vector<DescriptorId>>();
  f.references = to_points(j.at("references"));
  if (f.neighbors.size() != f.neighbor_ids.size() ||
      f.references.size() != f.neighbor_ids.size() || f.references.size() < 3) {
    throw SchemaError("inconsistent frame parameters");
  }
  return f;
}

inline Json
to_json(const ConstraintManifold& c)
{
  Json j{ { "kind", std::string(to_string(c.kind)) } };
  if (c.curve) {
    j["manifold"] = to_json(*c.curve);
  } else {
    j["anchor"] = from_vec3(c.anchor);
    j["basis"] = from_points(c.basis);
  }
  return j;
}

inline ConstraintManifold
constraint_from_json(const Json& j)
{
  const auto kind = parse_constraint_kind(j.at("kind").get<std::string>());
  if (is_linear(kind)) {
    ConstraintManifold c;
    c.kind = kind;
    c.anchor = to_vec3(j.at("anchor"));
    c.basis = to_points(j.at("basis"));
    if (static_cast<int>(c.basis.size()) != manifold_dim(kind)) {
      throw SchemaError("basis size does not match the constraint kind");
    }
    return c;
  }
  auto pm = manifold_from_json(j.at("manifold"));
  if (pm.dim != manifold_dim(kind)) {
    throw SchemaError("manifold dimension does not match the constraint kind");
  }
  return ConstraintManifold::from_pme(kind, std::move(pm));
}

} // namespace detail

inline Json
to_json(const TaskRepresentation& task)
{
  Json objects = Json::array();
  for (const auto& o : task.objects) {
    objects.push_back(Json{ { "name", o.name },
                            { "role", o.role == Role::master ? "master" : "slave" },
                            { "descriptor_ids", o.descriptor_ids },
                            { "canonical", detail::from_points(o.canonical.positions) },
                            { "scale", o.canonical.scale } });
  }
  Json keypoints = Json::array();
  for (const auto& k : task.keypoints) {
    keypoints.push_back(Json{ { "object", k.object },
                              { "candidate", k.candidate },
                              { "descriptor_id", k.descriptor_id },
                              { "frame", k.frame },
                              { "time", k.time },
                              { "score", k.score },
                              { "constraint", detail::to_json(k.constraint) },
                              { "frame_spec", detail::to_json(k.frame_spec) },
                              { "vmp", detail::to_json(k.vmp) },
                              { "targets", detail::from_matrix(k.targets) },
                              { "body_position", detail::from_vec3(k.body_position) } });
  }
  return Json{ { "format", kTaskFormat },
               { "demo_count", task.demo_count },
               { "time_steps", task.time_steps },
               { "thresholds", { { "xi1", task.thresholds.xi1 }, { "xi2", task.thresholds.xi2 } } },
               { "objects", std::move(objects) },
               { "keypoints", std::move(keypoints) } };
}

inline TaskRepresentation
task_from_json(const Json& j)
{
  try {
    if (!j.is_object() || !j.contains("format") || j["format"] != kTaskFormat) {
      throw SchemaError("not a kvil-task/1 document");
    }
    TaskRepresentation task;
    task.demo_count = j.at("demo_count").get<std::size_t>();
    task.time_steps = j.at("time_steps").get<std::size_t>();
    task.thresholds.xi1 = detail::to_real(j.at("thresholds").at("xi1"), "xi1");
    task.thresholds.xi2 = detail::to_real(j.at("thresholds").at("xi2"), "xi2");
    for (const auto& jo : j.at("objects")) {
      TaskObject o;
      o.name = jo.at("name").get<std::string>();
      const auto role = jo.at("role").get<std::string>();
      if (role != "master" && role != "slave") {
        throw SchemaError("unknown role '" + role + "'");
      }
      o.role = role == "master" ? Role::master : Role::slave;
      o.descriptor_ids = jo.at("descriptor_ids").get<std::vector<DescriptorId>>();
      o.canonical.positions = detail::to_points(jo.at("canonical"));
      o.canonical.scale = detail::to_real(jo.at("scale"), "scale");
      task.objects.push_back(std::move(o));
    }
    for (const auto& jk : j.at("keypoints")) {
      Keypoint k;
      k.object = jk.at("object").get<std::size_t>();
      k.candidate = jk.at("candidate").get<std::size_t>();
      k.descriptor_id = jk.at("descriptor_id").get<DescriptorId>();
      k.frame = jk.at("frame").get<std::size_t>();
      k.time = jk.at("time").get<std::size_t>();
      k.score = detail::to_real(jk.at("score"), "score");
      k.constraint = detail::constraint_from_json(jk.at("constraint"));
      k.frame_spec = detail::frame_from_json(jk.at("frame_spec"));
      k.vmp = detail::vmp_from_json(jk.at("vmp"));
      k.targets = detail::to_matrix(jk.at("targets"), k.constraint.dim(), "targets");
      k.body_position = detail::to_vec3(jk.at("body_position"));
      if (k.object >= task.objects.size()) {
        throw SchemaError("keypoint refers to an unknown object");
      }
      task.keypoints.push_back(std::move(k));
    }
    task.master();
    return task;
  } catch (const Json::exception& e) {
    throw SchemaError(e.what());
  }
}

inline void
write_task(const std::filesystem::path& path, const TaskRepresentation& task)
{
  detail::write_text(path, to_json(task).dump(1) + "\n");
}

inline TaskRepresentation
read_task(const std::filesystem::path& path)
{
  return task_from_json(detail::parse_json(detail::read_text(path), path.string()));
}

} // namespace kvil
