#pragma once

#include <string>
#include <vector>

namespace pbact {

enum class Label { kSuccess, kFailure };

std::string to_string(Label l);
Label label_from_string(const std::string& s);

enum class FailureMode { kNone, kMiss, kEarlyRelease, kWander };

std::string to_string(FailureMode m);
FailureMode failure_mode_from_string(const std::string& s);

/// Low-dimensional environment observation:
/// (agent_x, agent_y, gripper_aperture, object_x, object_y, object_height).
struct Observation {
  std::vector<double> state;
};

}  // namespace pbact
