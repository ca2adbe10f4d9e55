#include "pbact/env.hpp"

#include <algorithm>
#include <cmath>

#include "pbact/errors.hpp"
#include "pbact/rng.hpp"

namespace pbact {

EnvAction EnvAction::from_vector(const std::vector<double>& v) {
  if (v.size() != kActionDim)
    throw DimensionError("EnvAction: expected 3 components, got " +
                         std::to_string(v.size()));
  return {v[0], v[1], v[2]};
}

namespace {

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

WorldState step(const WorldState& state, const EnvAction& action) {
  WorldState next = state;

  const double dx = clamp(action.dx, -kMaxStep, kMaxStep);
  const double dy = clamp(action.dy, -kMaxStep, kMaxStep);
  next.agent_x = clamp(state.agent_x + dx, kArenaXMin, kArenaXMax);
  next.agent_y = clamp(state.agent_y + dy, kArenaYMin, kArenaYMax);

  const bool close_cmd = action.grip >= 0.5;
  next.aperture = clamp(state.aperture + (close_cmd ? -kApertureRate : kApertureRate),
                        0.0, 1.0);

  if (close_cmd) {
    if (!state.attached) {
      const double ddx = next.agent_x - state.object_x;
      const double ddy = next.agent_y - state.object_y;
      if (std::hypot(ddx, ddy) <= kAttachRadius) next.attached = true;
    }
  } else if (state.attached) {
    next.attached = false;
    next.object_height = 0.0;  // dropped
  }

  if (next.attached) {
    next.object_x = next.agent_x;
    next.object_y = next.agent_y;
    if (close_cmd)
      next.object_height = std::min(state.object_height + kLiftRate, kHeightCap);
  }

  next.step_index = state.step_index + 1;
  return next;
}

Observation observe(const WorldState& s) {
  return Observation{{s.agent_x, s.agent_y, s.aperture, s.object_x, s.object_y,
                      s.object_height}};
}

WorldState make_initial_state(double object_x, double object_y) {
  if (object_x < kArenaXMin || object_x > kArenaXMax || object_y < kArenaYMin ||
      object_y > kArenaYMax)
    throw ConfigError("initial object position outside the arena");
  WorldState s;
  s.object_x = object_x;
  s.object_y = object_y;
  return s;
}

WorldState sample_initial_state(Rng& rng) {
  return make_initial_state(rng.uniform(kArenaXMin, kArenaXMax),
                            rng.uniform(kArenaYMin, kArenaYMax));
}

bool is_lifted(const WorldState& s) { return s.object_height > kLiftThreshold; }

std::vector<double> action_to_model(const EnvAction& a) {
  return {a.dx / kMaxStep, a.dy / kMaxStep, a.grip};
}

EnvAction model_to_action(const std::vector<double>& v) {
  if (v.size() != kActionDim)
    throw DimensionError("model_to_action: expected 3 components");
  return {v[0] * kMaxStep, v[1] * kMaxStep, v[2]};
}

}  // namespace pbact
