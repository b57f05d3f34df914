#pragma once

// Demonstration file format (UTF-8 JSON, meters):
//
//   { "version": 1, "time_steps": T,
//     "objects": [ { "name": str, "descriptor_ids": [int; P],
//                    "demos": [ [ [ [x,y,z]; P ]; T_raw ]; N ] } ] }
//
// T_raw may differ between demos; loading resamples to T and smooths.
// A scene file uses the same layout with one demo of one time step.

#include "demo.hpp"
#include "json_util.hpp"

namespace kvil {

struct RawObject
{
  std::string name;
  std::vector<DescriptorId> descriptor_ids;
  std::vector<RawSequence> demos;
};

struct RawDemonstrations
{
  std::size_t time_steps = 100;
  std::vector<RawObject> objects;
};

struct LoadOptions
{
  std::size_t smoothing_window = 5;
  std::size_t time_steps = 0; // 0: use the value stored in the file
};

inline Json
to_json(const RawDemonstrations& raw)
{
  Json objects = Json::array();
  for (const auto& o : raw.objects) {
    Json demos = Json::array();
    for (const auto& seq : o.demos) {
      Json frames = Json::array();
      for (const auto& f : seq) {
        frames.push_back(detail::from_points(f));
      }
      demos.push_back(std::move(frames));
    }
    objects.push_back(Json{ { "name", o.name },
                            { "descriptor_ids", o.descriptor_ids },
                            { "demos", std::move(demos) } });
  }
  return Json{ { "version", 1 },
               { "time_steps", raw.time_steps },
               { "objects", std::move(objects) } };
}

inline RawDemonstrations
raw_demonstrations_from_json(const Json& j)
{
  if (!j.is_object()) {
    throw SchemaError("top level must be an object");
  }
  if (!j.contains("version") || j["version"] != 1) {
    throw SchemaError("unsupported or missing version");
  }
  RawDemonstrations raw;
  if (!j.contains("time_steps") || !j["time_steps"].is_number_integer() ||
      j["time_steps"].get<long long>() < 2) {
    throw SchemaError("time_steps must be an integer >= 2");
  }
  raw.time_steps = j["time_steps"].get<std::size_t>();
  if (!j.contains("objects") || !j["objects"].is_array() || j["objects"].empty()) {
    throw SchemaError("objects must be a non-empty array");
  }
  std::size_t demo_count = 0;
  for (const auto& jo : j["objects"]) {
    RawObject o;
    if (!jo.contains("name") || !jo["name"].is_string()) {
      throw SchemaError("object name missing");
    }
    o.name = jo["name"].get<std::string>();
    if (!jo.contains("descriptor_ids") || !jo["descriptor_ids"].is_array()) {
      throw SchemaError("object '" + o.name + "' lacks descriptor_ids");
    }
    for (const auto& id : jo["descriptor_ids"]) {
      if (!id.is_number_integer()) {
        throw SchemaError("descriptor ids must be integers");
      }
      o.descriptor_ids.push_back(id.get<DescriptorId>());
    }
    const std::size_t p = o.descriptor_ids.size();
    if (!jo.contains("demos") || !jo["demos"].is_array() || jo["demos"].empty()) {
      throw SchemaError("object '" + o.name + "' has no demos");
    }
    for (const auto& jd : jo["demos"]) {
      if (!jd.is_array() || jd.empty()) {
        throw SchemaError("object '" + o.name + "' has an empty demo");
      }
      RawSequence seq;
      seq.reserve(jd.size());
      for (const auto& jf : jd) {
        PointSet frame = detail::to_points(jf, "candidate position");
        if (frame.size() != p) {
          throw SchemaError("object '" + o.name +
                            "' frame size differs from descriptor count");
        }
        seq.push_back(std::move(frame));
      }
      o.demos.push_back(std::move(seq));
    }
    if (demo_count == 0) {
      demo_count = o.demos.size();
    } else if (o.demos.size() != demo_count) {
      throw SchemaError("objects disagree on the number of demos");
    }
    raw.objects.push_back(std::move(o));
  }
  // Objects observed in the same demo share its raw time base.
  for (std::size_t n = 0; n < demo_count; ++n) {
    const std::size_t len = raw.objects.front().demos[n].size();
    for (const auto& o : raw.objects) {
      if (o.demos[n].size() != len) {
        throw SchemaError("objects disagree on the length of demo " +
                          std::to_string(n));
      }
    }
  }
  return raw;
}

inline RawDemonstrations
read_raw_demonstrations(const std::filesystem::path& path)
{
  return raw_demonstrations_from_json(
    detail::parse_json(detail::read_text(path), path.string()));
}

inline void
write_raw_demonstrations(const std::filesystem::path& path,
                         const RawDemonstrations& raw)
{
  detail::write_text(path, to_json(raw).dump() + "\n");
}

//! Resamples every demo to the configured length and smooths it.
inline DemonstrationSet
condition(const RawDemonstrations& raw, const LoadOptions& opt = {})
{
  const std::size_t steps = opt.time_steps ? opt.time_steps : raw.time_steps;
  DemonstrationSet set;
  for (const auto& o : raw.objects) {
    ObjectRecord rec;
    rec.name = o.name;
    rec.descriptor_ids = o.descriptor_ids;
    for (const auto& seq : o.demos) {
      for (const auto& f : seq) {
        for (const auto& v : f) {
          if (!v.allFinite()) {
            throw UnitError("object '" + o.name + "' has non-finite values");
          }
        }
      }
    }
    rec.trajectory = smooth(resample_normalize(o.demos, steps),
                            opt.smoothing_window);
    set.objects.push_back(std::move(rec));
  }
  validate(set);
  return set;
}

inline DemonstrationSet
load_demonstration_set(const std::filesystem::path& path,
                       const LoadOptions& opt = {})
{
  return condition(read_raw_demonstrations(path), opt);
}

//! Single-time-step view of one object in a scene file.
inline Observation
scene_observation(const RawObject& obj)
{
  if (obj.demos.empty() || obj.demos.front().empty()) {
    throw SchemaError("scene object '" + obj.name + "' is empty");
  }
  return make_observation(obj.descriptor_ids, obj.demos.front().front());
}

} // namespace kvil
