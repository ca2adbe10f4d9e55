#pragma once

#include <array>
#include <vector>

#include "pbact/types.hpp"

namespace pbact {

class Rng;

// 2-D lift task geometry and dynamics constants.
inline constexpr double kArenaXMin = -0.1;
inline constexpr double kArenaXMax = 0.1;
inline constexpr double kArenaYMin = -0.2;
inline constexpr double kArenaYMax = 0.2;
inline constexpr double kMaxStep = 0.05;        // per-axis motion clip [m/step]
inline constexpr double kAttachRadius = 0.02;   // closing within this grasps
inline constexpr double kLiftThreshold = 0.04;  // success: height above this
inline constexpr double kLiftRate = 0.01;       // height gained per held step
inline constexpr double kHeightCap = 0.2;
inline constexpr double kApertureRate = 0.5;    // gripper open/close per step
inline constexpr int kObsDim = 6;
inline constexpr int kActionDim = 3;

/// Planar agent + object with a separate lift axis. While attached the
/// object tracks the agent and gains height as long as the grip is held.
struct WorldState {
  double agent_x = 0.0;
  double agent_y = 0.0;
  double aperture = 1.0;  // 1 = open, 0 = closed
  double object_x = 0.0;
  double object_y = 0.0;
  double object_height = 0.0;
  bool attached = false;
  int step_index = 0;
};

/// (dx, dy, grip). Motion is clipped to +-kMaxStep per axis; grip >= 0.5
/// commands close, otherwise open.
struct EnvAction {
  double dx = 0.0;
  double dy = 0.0;
  double grip = 0.0;

  std::vector<double> to_vector() const { return {dx, dy, grip}; }
  static EnvAction from_vector(const std::vector<double>& v);
};

/// Deterministic kinematic update. Movement applies first, then the grip:
/// a close command within kAttachRadius of the object attaches it; an open
/// command drops an attached object (height resets to zero); holding the
/// grip on an attached object raises it by kLiftRate per step.
WorldState step(const WorldState& state, const EnvAction& action);

Observation observe(const WorldState& state);

/// Fresh episode start: agent at the origin, gripper open, object at (ox, oy).
WorldState make_initial_state(double object_x, double object_y);

/// Uniform object placement inside the sampling box.
WorldState sample_initial_state(Rng& rng);

bool is_lifted(const WorldState& state);

/// Normalization between environment actions and the model's regression
/// targets: motion axes map to [-1, 1], grip passes through.
std::vector<double> action_to_model(const EnvAction& a);
EnvAction model_to_action(const std::vector<double>& v);

}  // namespace pbact
