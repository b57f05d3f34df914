#pragma once

#include "errors.hpp"
#include "geometry.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace kvil {

using Json = nlohmann::ordered_json;

namespace detail {

inline std::string
read_text(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void
write_text(const std::filesystem::path& path, const std::string& text)
{
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out << text;
}

inline Json
parse_json(const std::string& text, const std::string& what)
{
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(what + ": " + e.what());
  }
}

inline double
to_real(const Json& j, const char* what)
{
  if (!j.is_number()) {
    if (j.is_null()) {
      throw UnitError(std::string(what) + " is not a finite number");
    }
    throw SchemaError(std::string(what) + " must be a number");
  }
  const double v = j.get<double>();
  if (!std::isfinite(v)) {
    throw UnitError(std::string(what) + " is not a finite number");
  }
  return v;
}

inline Vec3
to_vec3(const Json& j, const char* what = "point")
{
  if (!j.is_array() || j.size() != 3) {
    throw SchemaError(std::string(what) + " must be an array of 3 numbers");
  }
  return { to_real(j[0], what), to_real(j[1], what), to_real(j[2], what) };
}

inline Json
from_vec3(const Vec3& v)
{
  return Json::array({ v.x(), v.y(), v.z() });
}

inline Json
from_points(std::span<const Vec3> pts)
{
  Json a = Json::array();
  for (const auto& p : pts) {
    a.push_back(from_vec3(p));
  }
  return a;
}

inline PointSet
to_points(const Json& j, const char* what = "points")
{
  if (!j.is_array()) {
    throw SchemaError(std::string(what) + " must be an array");
  }
  PointSet out;
  out.reserve(j.size());
  for (const auto& e : j) {
    out.push_back(to_vec3(e, what));
  }
  return out;
}

inline Json
from_transform(const RigidTransform& g)
{
  Json r = Json::array();
  for (int i = 0; i < 3; ++i) {
    r.push_back(Json::array({ g.rotation(i, 0), g.rotation(i, 1), g.rotation(i, 2) }));
  }
  return Json{ { "rotation", r }, { "translation", from_vec3(g.translation) } };
}

inline RigidTransform
to_transform(const Json& j)
{
  RigidTransform g;
  const auto& r = j.at("rotation");
  for (int i = 0; i < 3; ++i) {
    g.rotation.row(i) = to_vec3(r.at(static_cast<std::size_t>(i)), "rotation").transpose();
  }
  g.translation = to_vec3(j.at("translation"), "translation");
  return g;
}

inline Json
from_vector(const Eigen::VectorXd& v)
{
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    a.push_back(v(i));
  }
  return a;
}

inline Eigen::VectorXd
to_vector(const Json& j, const char* what = "vector")
{
  if (!j.is_array()) {
    throw SchemaError(std::string(what) + " must be an array");
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = to_real(j[i], what);
  }
  return v;
}

inline Json
from_matrix(const Eigen::MatrixXd& m)
{
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    a.push_back(from_vector(m.row(r).transpose()));
  }
  return a;
}

inline Eigen::MatrixXd
to_matrix(const Json& j, Eigen::Index cols, const char* what = "matrix")
{
  if (!j.is_array()) {
    throw SchemaError(std::string(what) + " must be an array");
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Eigen::VectorXd row = to_vector(j[r], what);
    if (row.size() != cols) {
      throw SchemaError(std::string(what) + " has a ragged row");
    }
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

} // namespace detail
} // namespace kvil
