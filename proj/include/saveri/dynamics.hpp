#pragma once

// Desk-scale closed-loop systems, the trajectory planner, safe sets and
// episode rollout.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "saveri/common.hpp"
#include "saveri/json_io.hpp"

namespace saveri {

/// Axis-aligned bounds on selected state components. Bounds are inclusive.
struct SafeSet {
  std::vector<int> indices;
  Vec lower;
  Vec upper;
};

bool is_safe(const Vec& state, const SafeSet& safe_set);

/// Linear interpolation from start to goal over `steps` points, both
/// endpoints included.
Sequence plan_trajectory(const Vec& start, const Vec& goal, int steps);

enum class Variant { nominal, real };
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct PointMassParams {
  double mass = 1.0;
  double kp = 20.0;
  double kd = 4.0;
  double force_limit = 25.0;
  double box = 1.0;             // safe set is [-box, box]^2 on position
  double start_extent = 0.5;    // initial position ~ U[-extent, extent]^2
  double start_speed = 0.2;     // initial velocity ~ U[-speed, speed]^2
  double goal_extent = 1.3;     // goal ~ U[-extent, extent]^2
};

struct CartPoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double gravity = 9.81;
  double force_limit = 10.0;
  // LQR weights on (x, x_dot, theta, theta_dot) and on the force.
  std::vector<double> lqr_q{1.0, 1.0, 10.0, 1.0};
  double lqr_r = 0.1;
  double track_limit = 2.4;
  double angle_limit = 0.25;
  double start_position = 0.3;
  double start_velocity = 0.2;
  double start_angle = 0.08;
  double start_rate = 0.3;
  double goal_offset = 1.5;  // goal = x0 + U[-offset, offset]
};

struct DisturbanceParams {
  double probability = 0.0;  // per-step chance of an impulse
  double magnitude = 0.0;    // impulse components ~ U[-magnitude, magnitude]
};

/// Everything needed to construct a ClosedLoopSystem. Serialized verbatim
/// into episode batches and model bundles.
struct SystemConfig {
  std::string name = "point-mass";
  Variant variant = Variant::nominal;
  double dt = 0.02;
  /// Scales every real-variant offset; 0 makes the real variant identical
  /// to the nominal one.
  double gap = 1.0;
  double mass_offset = -0.2;
  double friction = 0.5;
  double sensor_noise = 0.01;
  double initial_offset = 0.0;
  DisturbanceParams disturbance;
  PointMassParams point_mass;
  CartPoleParams cart_pole;
};

Json to_json(const SystemConfig& c);
/// Missing fields keep their defaults.
SystemConfig system_config_from_json(const Json& j);

/// Per-step exogenous input: an impulse added to the state through the
/// system's injection map, and measurement noise seen only by the controller.
struct Disturbance {
  Vec impulse;
  Vec sensor_noise;
};

struct Task {
  Vec initial_state;
  Vec goal;
};

namespace detail {
class Plant;
}

/// Immutable closed-loop system: plant, tracking controller, output map,
/// disturbance model and task sampler. Cheap to copy and safe to share
/// across threads.
class ClosedLoopSystem {
 public:
  ClosedLoopSystem(SystemConfig config, std::shared_ptr<const detail::Plant> plant);

  const std::string& name() const { return config_.name; }
  Variant variant() const { return config_.variant; }
  const SystemConfig& config() const { return config_; }
  int state_dim() const;
  int output_dim() const;
  int disturbance_dim() const;
  double dt() const { return config_.dt; }

  /// One closed-loop step. Deterministic in its arguments.
  Vec step(const Vec& state, const Vec& desired, const Disturbance& w) const;
  Vec output(const Vec& state) const;
  /// Maps an impulse to its additive effect on the next state.
  Vec inject(const Vec& impulse) const;
  const SafeSet& default_safe_set() const;

  Disturbance zero_disturbance() const;
  Disturbance sample_disturbance(Rng& rng, bool impulses) const;
  Task sample_task(Rng& rng) const;

 private:
  SystemConfig config_;
  std::shared_ptr<const detail::Plant> plant_;
};

std::vector<std::string> available_systems();

/// Builds a built-in system. Throws InputError for unknown names.
ClosedLoopSystem make_system(const SystemConfig& config);
ClosedLoopSystem make_system(const std::string& name, Variant variant,
                             SystemConfig params = {});

Vec step_closed_loop(const ClosedLoopSystem& system, const Vec& state, const Vec& desired,
                     const Vec& impulse);

struct Episode {
  int id = 0;
  std::uint64_t seed = 0;
  Vec goal;
  Sequence desired;   // length T
  Sequence states;    // s_0 .. s_{T'}
  Sequence outputs;   // g(s_0) .. g(s_{T'})
  Sequence impulses;  // impulse applied at steps 0 .. T'-1
  int termination = 0;  // T'
  bool safe = true;
  bool diverged = false;  // a non-finite state ended the episode

  int horizon() const { return static_cast<int>(desired.size()); }
  const Vec& initial_state() const { return states.front(); }
};

/// A single impulse forced at a given step, on top of the sampled ones.
struct ForcedPulse {
  int step = 0;
  Vec impulse;
};

struct RolloutOptions {
  bool disturbances = true;
  std::optional<ForcedPulse> pulse;
  std::optional<Task> task;
};

/// Samples a task from `seed`, plans a trajectory over T points and steps the
/// system until it leaves the safe set or the trajectory ends.
Episode rollout_episode(const ClosedLoopSystem& system, const SafeSet& safe_set, int horizon,
                        std::uint64_t seed, const RolloutOptions& options = {});

/// Steps the system along a given desired trajectory from a given state.
/// `disturbance_at(k)` supplies the disturbance for step k.
Episode simulate(const ClosedLoopSystem& system, const SafeSet& safe_set, const Vec& initial,
                 const Sequence& desired,
                 const std::function<Disturbance(int)>& disturbance_at);

struct EpisodeBatch {
  SystemConfig system;
  int horizon = 60;
  std::uint64_t seed = 0;
  std::vector<Episode> episodes;
};

EpisodeBatch generate_episodes(const ClosedLoopSystem& system, int count, int horizon,
                               std::uint64_t seed, bool disturbances = true);

Json to_json(const Episode& e);
Episode episode_from_json(const Json& j, const std::string& context);
Json to_json(const EpisodeBatch& b);
EpisodeBatch episode_batch_from_json(const Json& j);

}  // namespace saveri
