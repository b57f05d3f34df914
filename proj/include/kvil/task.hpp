#pragma once

#include "demo.hpp"
#include "manifold.hpp"
#include "vmp.hpp"

namespace kvil {

struct Keypoint
{
  std::size_t object = 0;    // index of the slave object in the task
  std::size_t candidate = 0; // index on that object
  DescriptorId descriptor_id = 0;
  std::size_t frame = 0; // master candidate anchoring the local frame
  std::size_t time = 0;
  double score = 0.0;
  ConstraintManifold constraint; // frame-local
  LocalFrameSpec frame_spec;
  VMPModel vmp; // 3D for p2p, orthogonal distance otherwise
  Eigen::MatrixXd targets; // N x d chart coordinates of demonstrated targets
  Vec3 body_position = Vec3::Zero(); // canonical position on the slave

  ConstraintKind kind() const { return constraint.kind; }
};

struct TaskObject
{
  std::string name;
  Role role = Role::slave;
  std::vector<DescriptorId> descriptor_ids;
  CanonicalShape canonical;
};

struct TaskRepresentation
{
  std::size_t demo_count = 0;
  std::size_t time_steps = 0;
  Thresholds thresholds;
  std::vector<TaskObject> objects;
  std::vector<Keypoint> keypoints;

  std::size_t master() const
  {
    for (std::size_t i = 0; i < objects.size(); ++i) {
      if (objects[i].role == Role::master) {
        return i;
      }
    }
    throw SchemaError("task has no master object");
  }
};

} // namespace kvil
