#include "pbact/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pbact/errors.hpp"
#include "pbact/io.hpp"
#include "pbact/rng.hpp"

namespace pbact {

using nlohmann::json;

std::vector<std::string> DatasetManifest::all_ids() const {
  std::vector<std::string> out = success_ids;
  out.insert(out.end(), failure_ids.begin(), failure_ids.end());
  return out;
}

std::string DatasetManifest::to_json() const {
  json j;
  j["success_ids"] = success_ids;
  j["failure_ids"] = failure_ids;
  j["strategy"] = strategy;
  j["scores_hash"] = scores_hash;
  j["selection_seed"] = selection_seed;
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  json j = json::parse(text);
  DatasetManifest m;
  m.success_ids = j.at("success_ids").get<std::vector<std::string>>();
  m.failure_ids = j.at("failure_ids").get<std::vector<std::string>>();
  m.strategy = j.at("strategy").get<std::string>();
  m.scores_hash = j.at("scores_hash").get<std::string>();
  m.selection_seed = j.at("selection_seed").get<uint64_t>();
  return m;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  write_text_file(path, to_json());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  return from_json(read_text_file(path));
}

// --------------------------------------------------------------------------
// Scripted demonstrator
// --------------------------------------------------------------------------

namespace {

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

double dist(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

// Post-move agent position for a clipped move toward (tx, ty).
void plan_move(const WorldState& s, double tx, double ty, double& dx, double& dy,
               double& px, double& py) {
  dx = clamp(tx - s.agent_x, -kMaxStep, kMaxStep);
  dy = clamp(ty - s.agent_y, -kMaxStep, kMaxStep);
  px = clamp(s.agent_x + dx, kArenaXMin, kArenaXMax);
  py = clamp(s.agent_y + dy, kArenaYMin, kArenaYMax);
}

// Reach -> grasp -> hold. Closes when the post-move position lands within
// half the attach radius of the object, so the grasp always binds.
EnvAction success_script(const WorldState& s) {
  if (s.attached) return {0.0, 0.0, 1.0};
  double dx, dy, px, py;
  plan_move(s, s.object_x, s.object_y, dx, dy, px, py);
  const double grip =
      dist(px, py, s.object_x, s.object_y) <= 0.5 * kAttachRadius ? 1.0 : 0.0;
  return {dx, dy, grip};
}

struct MissParams {
  double target_x = 0.0;
  double target_y = 0.0;
};

// Same reach/grasp structure as the success script, but aimed at an offset
// point; the grasp closes on air.
EnvAction miss_script(const WorldState& s, const MissParams& p) {
  double dx, dy, px, py;
  plan_move(s, p.target_x, p.target_y, dx, dy, px, py);
  if (dist(s.agent_x, s.agent_y, p.target_x, p.target_y) <= 1e-9)
    return {0.0, 0.0, 1.0};  // hold the failed grasp
  const double grip = dist(px, py, p.target_x, p.target_y) <= 1e-9 ? 1.0 : 0.0;
  return {dx, dy, grip};
}

struct WanderParams {
  std::vector<double> headings;  // one per segment
  int segment_len = 8;
};

// Drifting random walk that never points at the object.
EnvAction wander_script(const WanderParams& p, int t) {
  const double theta =
      p.headings[std::min<size_t>(t / p.segment_len, p.headings.size() - 1)];
  const double speed = 0.7 * kMaxStep;
  return {speed * std::cos(theta), speed * std::sin(theta), 0.0};
}

struct ScriptParams {
  MissParams miss;
  WanderParams wander;
  double release_height = 0.02;  // early-release drop point
  bool released = false;
};

EnvAction scripted_action(FailureMode mode, const WorldState& s, int t,
                          ScriptParams& params) {
  switch (mode) {
    case FailureMode::kNone:
      return success_script(s);
    case FailureMode::kMiss:
      return miss_script(s, params.miss);
    case FailureMode::kEarlyRelease:
      if (!params.released && s.attached &&
          s.object_height >= params.release_height)
        params.released = true;
      if (params.released) return {0.0, 0.0, 0.0};  // zero actions after the drop
      return success_script(s);
    case FailureMode::kWander:
      return wander_script(params.wander, t);
  }
  throw ConfigError("bad failure mode");
}

ScriptParams draw_params(FailureMode mode, const WorldState& start, Rng& rng,
                         int episode_steps) {
  ScriptParams p;
  switch (mode) {
    case FailureMode::kNone:
      break;
    case FailureMode::kMiss: {
      // Grasp offset 2.1-5 cm, re-drawn if arena clamping would pull the
      // target back inside the attach radius.
      for (int attempt = 0; attempt < 64; ++attempt) {
        const double mag = rng.uniform(0.021, 0.05);
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        const double tx = clamp(start.object_x + mag * std::cos(theta),
                                kArenaXMin, kArenaXMax);
        const double ty = clamp(start.object_y + mag * std::sin(theta),
                                kArenaYMin, kArenaYMax);
        if (dist(tx, ty, start.object_x, start.object_y) > kAttachRadius + 0.003) {
          p.miss.target_x = tx;
          p.miss.target_y = ty;
          return p;
        }
      }
      throw IntegrityError("miss perturbation: no valid offset found");
    }
    case FailureMode::kEarlyRelease:
      p.release_height = rng.uniform(0.015, 0.03);
      break;
    case FailureMode::kWander: {
      const int segments = episode_steps / p.wander.segment_len + 2;
      for (int i = 0; i < segments; ++i) {
        // Keep headings at least 60 degrees away from the object bearing.
        double theta = rng.uniform(0.0, 2.0 * M_PI);
        const double to_obj =
            std::atan2(start.object_y - start.agent_y, start.object_x - start.agent_x);
        for (int k = 0; k < 32; ++k) {
          double delta = std::fabs(std::remainder(theta - to_obj, 2.0 * M_PI));
          if (delta > M_PI / 3.0) break;
          theta = rng.uniform(0.0, 2.0 * M_PI);
        }
        p.wander.headings.push_back(theta);
      }
      break;
    }
  }
  return p;
}

Demonstration generate_one(const std::string& id, FailureMode mode, Rng& rng,
                           int episode_steps) {
  constexpr int kMaxRetries = 20;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    WorldState start = sample_initial_state(rng);
    ScriptParams params = draw_params(mode, start, rng, episode_steps);

    Demonstration demo;
    demo.demo_id = id;
    demo.failure_mode = mode;
    demo.initial_state = start;
    WorldState s = start;
    for (int t = 0; t < episode_steps; ++t) {
      demo.observations.push_back(observe(s));
      const EnvAction a = scripted_action(mode, s, t, params);
      demo.actions.push_back(a.to_vector());
      s = step(s, a);
    }
    // Ground-truth relabel; the script's intent is not trusted.
    demo.label = is_lifted(s) ? Label::kSuccess : Label::kFailure;
    const bool wanted_success = (mode == FailureMode::kNone);
    if ((demo.label == Label::kSuccess) == wanted_success) return demo;
  }
  throw IntegrityError("demo '" + id + "': scripted outcome did not match intent after " +
                       std::to_string(kMaxRetries) + " retries");
}

std::array<int, 3> mode_counts(int n_failure, const FailureMix& mix) {
  const double total = mix.miss + mix.early_release + mix.wander;
  if (std::fabs(total - 1.0) > 1e-9)
    throw ConfigError("failure_mix must sum to 1");
  const std::array<double, 3> fractions = {mix.miss, mix.early_release, mix.wander};
  std::array<int, 3> counts{};
  std::array<double, 3> remainders{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fractions[i] * n_failure;
    counts[i] = static_cast<int>(std::floor(exact));
    remainders[i] = exact - counts[i];
    assigned += counts[i];
  }
  // Largest remainder; ties resolved by mode order.
  while (assigned < n_failure) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (remainders[i] > remainders[best]) best = i;
    ++counts[best];
    remainders[best] = -1.0;
    ++assigned;
  }
  return counts;
}

std::string demo_id(char prefix, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c%03d", prefix, index);
  return std::string(buf);
}

}  // namespace

std::pair<std::vector<Demonstration>, DatasetManifest> generate_dataset(
    int n_success, int n_failure, const FailureMix& mix, uint64_t seed,
    int episode_steps) {
  if (n_success < 0 || n_failure < 0)
    throw ConfigError("generate_dataset: negative counts");
  if (episode_steps < 1) throw ConfigError("generate_dataset: episode_steps < 1");

  const auto counts = mode_counts(n_failure, mix);
  std::vector<FailureMode> failure_modes;
  failure_modes.insert(failure_modes.end(), counts[0], FailureMode::kMiss);
  failure_modes.insert(failure_modes.end(), counts[1], FailureMode::kEarlyRelease);
  failure_modes.insert(failure_modes.end(), counts[2], FailureMode::kWander);

  std::vector<Demonstration> demos;
  DatasetManifest manifest;
  uint64_t stream = 0;
  for (int i = 0; i < n_success; ++i, ++stream) {
    Rng rng = Rng::fork(seed, stream);
    demos.push_back(generate_one(demo_id('s', i), FailureMode::kNone, rng,
                                 episode_steps));
    manifest.success_ids.push_back(demos.back().demo_id);
  }
  for (int i = 0; i < n_failure; ++i, ++stream) {
    Rng rng = Rng::fork(seed, stream);
    demos.push_back(generate_one(demo_id('f', i), failure_modes[i], rng,
                                 episode_steps));
    manifest.failure_ids.push_back(demos.back().demo_id);
  }
  return {std::move(demos), std::move(manifest)};
}

std::vector<WorldState> replay(const Demonstration& demo) {
  std::vector<WorldState> states;
  states.reserve(demo.actions.size());
  WorldState s = demo.initial_state;
  for (const auto& a : demo.actions) {
    s = step(s, EnvAction::from_vector(a));
    states.push_back(s);
  }
  return states;
}

// --------------------------------------------------------------------------
// Persistence
// --------------------------------------------------------------------------

namespace {

json state_to_json(const WorldState& s) {
  json j;
  j["agent_x"] = s.agent_x;
  j["agent_y"] = s.agent_y;
  j["aperture"] = s.aperture;
  j["object_x"] = s.object_x;
  j["object_y"] = s.object_y;
  j["object_height"] = s.object_height;
  j["attached"] = s.attached;
  j["step_index"] = s.step_index;
  return j;
}

WorldState state_from_json(const json& j) {
  WorldState s;
  s.agent_x = j.at("agent_x").get<double>();
  s.agent_y = j.at("agent_y").get<double>();
  s.aperture = j.at("aperture").get<double>();
  s.object_x = j.at("object_x").get<double>();
  s.object_y = j.at("object_y").get<double>();
  s.object_height = j.at("object_height").get<double>();
  s.attached = j.at("attached").get<bool>();
  s.step_index = j.at("step_index").get<int>();
  return s;
}

}  // namespace

void save_demonstrations(const std::filesystem::path& path,
                         const std::vector<Demonstration>& demos) {
  std::ostringstream out;
  for (const auto& d : demos) {
    json j;
    j["demo_id"] = d.demo_id;
    j["label"] = to_string(d.label);
    j["failure_mode"] = to_string(d.failure_mode);
    j["initial_state"] = state_to_json(d.initial_state);
    json obs = json::array();
    for (const auto& o : d.observations) obs.push_back(o.state);
    j["observations"] = std::move(obs);
    j["actions"] = d.actions;
    out << j.dump() << "\n";
  }
  write_text_file(path, out.str());
}

std::vector<Demonstration> load_demonstrations(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::vector<Demonstration> demos;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Demonstration d;
    d.demo_id = j.at("demo_id").get<std::string>();
    d.label = label_from_string(j.at("label").get<std::string>());
    d.failure_mode = failure_mode_from_string(j.at("failure_mode").get<std::string>());
    d.initial_state = state_from_json(j.at("initial_state"));
    for (const auto& o : j.at("observations"))
      d.observations.push_back(Observation{o.get<std::vector<double>>()});
    d.actions = j.at("actions").get<std::vector<std::vector<double>>>();
    if (d.observations.size() != d.actions.size())
      throw IntegrityError("demo '" + d.demo_id +
                           "': observation/action length mismatch");
    demos.push_back(std::move(d));
  }
  return demos;
}

std::map<std::string, const Demonstration*> index_demonstrations(
    const std::vector<Demonstration>& demos) {
  std::map<std::string, const Demonstration*> index;
  for (const auto& d : demos) {
    if (!index.emplace(d.demo_id, &d).second)
      throw IntegrityError("duplicate demo id '" + d.demo_id + "'");
  }
  return index;
}

}  // namespace pbact
