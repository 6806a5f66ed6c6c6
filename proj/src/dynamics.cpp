#include "saveri/dynamics.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Dense>

namespace saveri {

bool is_safe(const Vec& state, const SafeSet& safe_set) {
  for (std::size_t i = 0; i < safe_set.indices.size(); ++i) {
    const double v = state[safe_set.indices[i]];
    const auto k = static_cast<Eigen::Index>(i);
    if (!(v >= safe_set.lower[k] && v <= safe_set.upper[k])) return false;
  }
  return true;
}

Sequence plan_trajectory(const Vec& start, const Vec& goal, int steps) {
  if (steps < 1) throw std::invalid_argument("plan_trajectory: step count must be >= 1");
  if (start.size() != goal.size()) {
    throw std::invalid_argument("plan_trajectory: start and goal dimensions differ");
  }
  if (!start.allFinite() || !goal.allFinite()) {
    throw std::invalid_argument("plan_trajectory: start and goal must be finite");
  }
  Sequence points;
  points.reserve(static_cast<std::size_t>(steps));
  if (steps == 1) {
    points.push_back(goal);
    return points;
  }
  for (int k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) / (steps - 1);
    points.push_back(start + t * (goal - start));
  }
  points.back() = goal;
  return points;
}

std::string to_string(Variant v) { return v == Variant::nominal ? "nominal" : "real"; }

Variant variant_from_string(const std::string& s) {
  if (s == "nominal") return Variant::nominal;
  if (s == "real") return Variant::real;
  throw InputError("unknown variant '" + s + "' (expected nominal or real)");
}

namespace detail {

/// Physical model plus tracking controller. `measured` is the state as seen
/// by the controller.
class Plant {
 public:
  virtual ~Plant() = default;
  virtual int state_dim() const = 0;
  virtual int output_dim() const = 0;
  virtual int disturbance_dim() const = 0;
  virtual Vec advance(const Vec& state, const Vec& measured, const Vec& desired) const = 0;
  virtual Vec output(const Vec& state) const = 0;
  virtual Vec inject(const Vec& impulse) const = 0;
  virtual Task sample_task(Rng& rng) const = 0;
  const SafeSet& safe_set() const { return safe_set_; }

 protected:
  SafeSet safe_set_;
};

namespace {

double uniform(Rng& rng, double half_width) {
  if (half_width <= 0.0) return 0.0;
  return std::uniform_real_distribution<double>(-half_width, half_width)(rng);
}

struct GapScaling {
  double mass = 1.0;
  double friction = 0.0;
};

GapScaling gap_scaling(const SystemConfig& c) {
  if (c.variant == Variant::nominal) return {};
  return {1.0 + c.mass_offset * c.gap, c.friction * c.gap};
}

/// Planar point mass under a saturated PD position controller. State is
/// (px, py, vx, vy); output is the position.
class PointMass final : public Plant {
 public:
  explicit PointMass(const SystemConfig& c) : p_(c.point_mass), dt_(c.dt) {
    const auto g = gap_scaling(c);
    mass_ = p_.mass * g.mass;
    friction_ = g.friction;
    safe_set_.indices = {0, 1};
    safe_set_.lower = Vec::Constant(2, -p_.box);
    safe_set_.upper = Vec::Constant(2, p_.box);
  }
  int state_dim() const override { return 4; }
  int output_dim() const override { return 2; }
  int disturbance_dim() const override { return 2; }

  Vec advance(const Vec& s, const Vec& measured, const Vec& desired) const override {
    Vec next(4);
    for (int a = 0; a < 2; ++a) {
      double force = p_.kp * (desired[a] - measured[a]) - p_.kd * measured[2 + a];
      force = std::clamp(force, -p_.force_limit, p_.force_limit);
      const double acc = force / mass_ - friction_ * s[2 + a];
      next[2 + a] = s[2 + a] + dt_ * acc;
      next[a] = s[a] + dt_ * next[2 + a];
    }
    return next;
  }
  Vec output(const Vec& s) const override { return s.head(2); }
  Vec inject(const Vec& d) const override {
    Vec out = Vec::Zero(4);
    out.tail(2) = d;
    return out;
  }
  Task sample_task(Rng& rng) const override {
    Task t;
    t.initial_state = Vec(4);
    t.initial_state << uniform(rng, p_.start_extent), uniform(rng, p_.start_extent),
        uniform(rng, p_.start_speed), uniform(rng, p_.start_speed);
    t.goal = Vec(2);
    t.goal << uniform(rng, p_.goal_extent), uniform(rng, p_.goal_extent);
    return t;
  }

 private:
  PointMassParams p_;
  double dt_;
  double mass_;
  double friction_;
};

/// Cart-pole balanced by a saturated LQR that tracks a desired cart
/// position. State is (x, x_dot, theta, theta_dot), theta = 0 upright; output
/// is the cart position.
class CartPole final : public Plant {
 public:
  explicit CartPole(const SystemConfig& c) : p_(c.cart_pole), dt_(c.dt) {
    const auto g = gap_scaling(c);
    cart_mass_ = p_.cart_mass * g.mass;
    pole_mass_ = p_.pole_mass * g.mass;
    friction_ = g.friction;
    gain_ = lqr_gain(p_, dt_);
    safe_set_.indices = {0, 2};
    safe_set_.lower = Vec(2);
    safe_set_.upper = Vec(2);
    safe_set_.lower << -p_.track_limit, -p_.angle_limit;
    safe_set_.upper << p_.track_limit, p_.angle_limit;
  }
  int state_dim() const override { return 4; }
  int output_dim() const override { return 1; }
  int disturbance_dim() const override { return 1; }

  Vec advance(const Vec& s, const Vec& measured, const Vec& desired) const override {
    Eigen::Vector4d error;
    error << measured[0] - desired[0], measured[1], measured[2], measured[3];
    const double force = std::clamp(-gain_.dot(error), -p_.force_limit, p_.force_limit);

    const double total = cart_mass_ + pole_mass_;
    const double theta = s[2];
    const double rate = s[3];
    const double sin_t = std::sin(theta);
    const double cos_t = std::cos(theta);
    const double temp = (force + pole_mass_ * p_.half_length * rate * rate * sin_t) / total;
    double theta_acc = (p_.gravity * sin_t - cos_t * temp) /
                       (p_.half_length * (4.0 / 3.0 - pole_mass_ * cos_t * cos_t / total));
    double x_acc = temp - pole_mass_ * p_.half_length * theta_acc * cos_t / total;
    x_acc -= friction_ * s[1];
    theta_acc -= friction_ * rate;

    Vec next(4);
    next[1] = s[1] + dt_ * x_acc;
    next[0] = s[0] + dt_ * next[1];
    next[3] = rate + dt_ * theta_acc;
    next[2] = theta + dt_ * next[3];
    return next;
  }
  Vec output(const Vec& s) const override { return s.head(1); }
  Vec inject(const Vec& d) const override {
    Vec out = Vec::Zero(4);
    out[3] = d[0];
    return out;
  }
  Task sample_task(Rng& rng) const override {
    Task t;
    t.initial_state = Vec(4);
    t.initial_state << uniform(rng, p_.start_position), uniform(rng, p_.start_velocity),
        uniform(rng, p_.start_angle), uniform(rng, p_.start_rate);
    t.goal = Vec(1);
    t.goal << t.initial_state[0] + uniform(rng, p_.goal_offset);
    return t;
  }

 private:
  // Discrete-time LQR on the upright linearization of the nominal model.
  static Eigen::Vector4d lqr_gain(const CartPoleParams& p, double dt) {
    const double total = p.cart_mass + p.pole_mass;
    const double denom = p.half_length * (4.0 / 3.0 - p.pole_mass / total);
    Eigen::Matrix4d ac = Eigen::Matrix4d::Zero();
    Eigen::Vector4d bc = Eigen::Vector4d::Zero();
    ac(0, 1) = 1.0;
    ac(2, 3) = 1.0;
    ac(3, 2) = p.gravity / denom;
    ac(1, 2) = -p.pole_mass * p.half_length * ac(3, 2) / total;
    bc(3) = -1.0 / (total * denom);
    bc(1) = 1.0 / total - p.pole_mass * p.half_length * bc(3) / total;
    const Eigen::Matrix4d a = Eigen::Matrix4d::Identity() + dt * ac;
    const Eigen::Vector4d b = dt * bc;
    Eigen::Matrix4d q = Eigen::Matrix4d::Zero();
    for (int i = 0; i < 4; ++i) q(i, i) = p.lqr_q.at(static_cast<std::size_t>(i));
    Eigen::Matrix4d riccati = q;
    Eigen::Vector4d gain = Eigen::Vector4d::Zero();
    for (int it = 0; it < 20000; ++it) {
      const double s = p.lqr_r + b.dot(riccati * b);
      const Eigen::Vector4d next_gain = (b.transpose() * riccati * a).transpose() / s;
      const Eigen::Matrix4d next =
          q + a.transpose() * riccati * a - (a.transpose() * riccati * b) * next_gain.transpose();
      const double change = (next - riccati).cwiseAbs().maxCoeff();
      riccati = next;
      gain = next_gain;
      if (change < 1e-10 * (1.0 + riccati.cwiseAbs().maxCoeff())) break;
    }
    return gain;
  }

  CartPoleParams p_;
  double dt_;
  double cart_mass_;
  double pole_mass_;
  double friction_;
  Eigen::Vector4d gain_;
};

}  // namespace
}  // namespace detail

ClosedLoopSystem::ClosedLoopSystem(SystemConfig config,
                                   std::shared_ptr<const detail::Plant> plant)
    : config_(std::move(config)), plant_(std::move(plant)) {}

int ClosedLoopSystem::state_dim() const { return plant_->state_dim(); }
int ClosedLoopSystem::output_dim() const { return plant_->output_dim(); }
int ClosedLoopSystem::disturbance_dim() const { return plant_->disturbance_dim(); }
const SafeSet& ClosedLoopSystem::default_safe_set() const { return plant_->safe_set(); }
Vec ClosedLoopSystem::output(const Vec& state) const { return plant_->output(state); }
Vec ClosedLoopSystem::inject(const Vec& impulse) const { return plant_->inject(impulse); }

Vec ClosedLoopSystem::step(const Vec& state, const Vec& desired, const Disturbance& w) const {
  if (state.size() != state_dim() || desired.size() != output_dim() ||
      w.impulse.size() != disturbance_dim() || w.sensor_noise.size() != state_dim()) {
    throw std::invalid_argument("step: dimension mismatch for system " + name());
  }
  const Vec measured = state + w.sensor_noise;
  return plant_->advance(state, measured, desired) + plant_->inject(w.impulse);
}

Disturbance ClosedLoopSystem::zero_disturbance() const {
  return {Vec::Zero(disturbance_dim()), Vec::Zero(state_dim())};
}

Disturbance ClosedLoopSystem::sample_disturbance(Rng& rng, bool impulses) const {
  Disturbance w = zero_disturbance();
  // Draw counts are fixed per step so a rollout's random stream does not
  // depend on which branches fire.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double fire = unit(rng);
  Vec impulse(disturbance_dim());
  for (Eigen::Index i = 0; i < impulse.size(); ++i) {
    impulse[i] = detail::uniform(rng, config_.disturbance.magnitude);
  }
  if (impulses && fire < config_.disturbance.probability) w.impulse = impulse;
  if (config_.variant == Variant::real) {
    const double sd = config_.sensor_noise * config_.gap;
    if (sd > 0.0) {
      std::normal_distribution<double> noise(0.0, sd);
      for (Eigen::Index i = 0; i < w.sensor_noise.size(); ++i) w.sensor_noise[i] = noise(rng);
    }
  }
  return w;
}

Task ClosedLoopSystem::sample_task(Rng& rng) const {
  Task t = plant_->sample_task(rng);
  if (config_.variant == Variant::real && config_.initial_offset > 0.0) {
    for (Eigen::Index i = 0; i < t.initial_state.size(); ++i) {
      t.initial_state[i] += detail::uniform(rng, config_.initial_offset);
    }
  }
  return t;
}

std::vector<std::string> available_systems() { return {"point-mass", "cart-pole"}; }

ClosedLoopSystem make_system(const SystemConfig& config) {
  std::shared_ptr<const detail::Plant> plant;
  if (config.name == "point-mass") {
    plant = std::make_shared<detail::PointMass>(config);
  } else if (config.name == "cart-pole") {
    plant = std::make_shared<detail::CartPole>(config);
  } else {
    std::ostringstream msg;
    msg << "unknown system '" << config.name << "'; available:";
    for (const auto& n : available_systems()) msg << ' ' << n;
    throw InputError(msg.str());
  }
  if (!(config.dt > 0.0)) throw InputError("system dt must be positive");
  return ClosedLoopSystem(config, std::move(plant));
}

ClosedLoopSystem make_system(const std::string& name, Variant variant, SystemConfig params) {
  params.name = name;
  params.variant = variant;
  return make_system(params);
}

Vec step_closed_loop(const ClosedLoopSystem& system, const Vec& state, const Vec& desired,
                     const Vec& impulse) {
  Disturbance w = system.zero_disturbance();
  w.impulse = impulse;
  return system.step(state, desired, w);
}

Episode simulate(const ClosedLoopSystem& system, const SafeSet& safe_set, const Vec& initial,
                 const Sequence& desired,
                 const std::function<Disturbance(int)>& disturbance_at) {
  if (desired.empty()) throw std::invalid_argument("simulate: empty desired trajectory");
  if (initial.size() != system.state_dim()) {
    throw std::invalid_argument("simulate: initial state dimension mismatch");
  }
  Episode e;
  e.desired = desired;
  e.goal = desired.back();
  e.states.push_back(initial);
  e.outputs.push_back(system.output(initial));
  const int horizon = static_cast<int>(desired.size());
  e.termination = horizon;
  for (int k = 0; k < horizon; ++k) {
    const Disturbance w = disturbance_at(k);
    Vec next = system.step(e.states.back(), desired[static_cast<std::size_t>(k)], w);
    e.impulses.push_back(w.impulse);
    const bool finite = next.allFinite();
    e.states.push_back(next);
    e.outputs.push_back(system.output(next));
    if (!finite || !is_safe(next, safe_set)) {
      e.safe = false;
      e.diverged = !finite;
      e.termination = k + 1;
      break;
    }
  }
  return e;
}

Episode rollout_episode(const ClosedLoopSystem& system, const SafeSet& safe_set, int horizon,
                        std::uint64_t seed, const RolloutOptions& options) {
  if (horizon < 1) throw std::invalid_argument("rollout_episode: horizon must be >= 1");
  Rng rng(seed);
  const Task task = options.task ? *options.task : system.sample_task(rng);
  const Sequence desired = plan_trajectory(system.output(task.initial_state), task.goal, horizon);
  Episode e = simulate(system, safe_set, task.initial_state, desired, [&](int k) {
    Disturbance w = system.sample_disturbance(rng, options.disturbances);
    if (options.pulse && options.pulse->step == k) w.impulse += options.pulse->impulse;
    return w;
  });
  e.seed = seed;
  e.goal = task.goal;
  return e;
}

EpisodeBatch generate_episodes(const ClosedLoopSystem& system, int count, int horizon,
                               std::uint64_t seed, bool disturbances) {
  EpisodeBatch batch;
  batch.system = system.config();
  batch.horizon = horizon;
  batch.seed = seed;
  batch.episodes.resize(static_cast<std::size_t>(std::max(count, 0)));
  RolloutOptions opts;
  opts.disturbances = disturbances;
  parallel_for(batch.episodes.size(), [&](std::size_t i) {
    Episode e = rollout_episode(system, system.default_safe_set(), horizon,
                                derive_seed(seed, i), opts);
    e.id = static_cast<int>(i);
    batch.episodes[i] = std::move(e);
  });
  return batch;
}

// ---------------------------------------------------------------------------
// Serialization

Json to_json(const SystemConfig& c) {
  const auto& pm = c.point_mass;
  const auto& cp = c.cart_pole;
  return Json{
      {"name", c.name},
      {"variant", to_string(c.variant)},
      {"dt", c.dt},
      {"gap", c.gap},
      {"mass_offset", c.mass_offset},
      {"friction", c.friction},
      {"sensor_noise", c.sensor_noise},
      {"initial_offset", c.initial_offset},
      {"disturbance",
       {{"probability", c.disturbance.probability}, {"magnitude", c.disturbance.magnitude}}},
      {"point_mass",
       {{"mass", pm.mass},
        {"kp", pm.kp},
        {"kd", pm.kd},
        {"force_limit", pm.force_limit},
        {"box", pm.box},
        {"start_extent", pm.start_extent},
        {"start_speed", pm.start_speed},
        {"goal_extent", pm.goal_extent}}},
      {"cart_pole",
       {{"cart_mass", cp.cart_mass},
        {"pole_mass", cp.pole_mass},
        {"half_length", cp.half_length},
        {"gravity", cp.gravity},
        {"force_limit", cp.force_limit},
        {"lqr_q", cp.lqr_q},
        {"lqr_r", cp.lqr_r},
        {"track_limit", cp.track_limit},
        {"angle_limit", cp.angle_limit},
        {"start_position", cp.start_position},
        {"start_velocity", cp.start_velocity},
        {"start_angle", cp.start_angle},
        {"start_rate", cp.start_rate},
        {"goal_offset", cp.goal_offset}}},
  };
}

namespace {

template <typename T>
void read_opt(const Json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const Json::exception&) {
      throw InputError(std::string("system config: bad value for '") + key + "'");
    }
  }
}

}  // namespace

SystemConfig system_config_from_json(const Json& j) {
  if (!j.is_object()) throw InputError("system config: expected an object");
  SystemConfig c;
  read_opt(j, "name", c.name);
  if (auto it = j.find("variant"); it != j.end()) c.variant = variant_from_string(*it);
  read_opt(j, "dt", c.dt);
  read_opt(j, "gap", c.gap);
  read_opt(j, "mass_offset", c.mass_offset);
  read_opt(j, "friction", c.friction);
  read_opt(j, "sensor_noise", c.sensor_noise);
  read_opt(j, "initial_offset", c.initial_offset);
  if (auto it = j.find("disturbance"); it != j.end()) {
    read_opt(*it, "probability", c.disturbance.probability);
    read_opt(*it, "magnitude", c.disturbance.magnitude);
  }
  if (auto it = j.find("point_mass"); it != j.end()) {
    auto& pm = c.point_mass;
    read_opt(*it, "mass", pm.mass);
    read_opt(*it, "kp", pm.kp);
    read_opt(*it, "kd", pm.kd);
    read_opt(*it, "force_limit", pm.force_limit);
    read_opt(*it, "box", pm.box);
    read_opt(*it, "start_extent", pm.start_extent);
    read_opt(*it, "start_speed", pm.start_speed);
    read_opt(*it, "goal_extent", pm.goal_extent);
  }
  if (auto it = j.find("cart_pole"); it != j.end()) {
    auto& cp = c.cart_pole;
    read_opt(*it, "cart_mass", cp.cart_mass);
    read_opt(*it, "pole_mass", cp.pole_mass);
    read_opt(*it, "half_length", cp.half_length);
    read_opt(*it, "gravity", cp.gravity);
    read_opt(*it, "force_limit", cp.force_limit);
    read_opt(*it, "lqr_q", cp.lqr_q);
    read_opt(*it, "lqr_r", cp.lqr_r);
    read_opt(*it, "track_limit", cp.track_limit);
    read_opt(*it, "angle_limit", cp.angle_limit);
    read_opt(*it, "start_position", cp.start_position);
    read_opt(*it, "start_velocity", cp.start_velocity);
    read_opt(*it, "start_angle", cp.start_angle);
    read_opt(*it, "start_rate", cp.start_rate);
    read_opt(*it, "goal_offset", cp.goal_offset);
    if (cp.lqr_q.size() != 4) throw InputError("system config: lqr_q needs 4 entries");
  }
  return c;
}

Json to_json(const Episode& e) {
  return Json{{"id", e.id},
              {"seed", e.seed},
              {"goal", to_json(e.goal)},
              {"desired", to_json(e.desired)},
              {"states", to_json(e.states)},
              {"outputs", to_json(e.outputs)},
              {"impulses", to_json(e.impulses)},
              {"termination", e.termination},
              {"safe", e.safe},
              {"diverged", e.diverged}};
}

Episode episode_from_json(const Json& j, const std::string& context) {
  Episode e;
  try {
    e.id = require(j, "id", context).get<int>();
    e.seed = require(j, "seed", context).get<std::uint64_t>();
    e.termination = require(j, "termination", context).get<int>();
    e.safe = require(j, "safe", context).get<bool>();
    e.diverged = j.value("diverged", false);
  } catch (const Json::exception& ex) {
    throw InputError(context + ": " + ex.what());
  }
  e.goal = vec_from_json(require(j, "goal", context), context + ".goal");
  e.desired = sequence_from_json(require(j, "desired", context), context + ".desired");
  e.states = sequence_from_json(require(j, "states", context), context + ".states");
  e.outputs = sequence_from_json(require(j, "outputs", context), context + ".outputs");
  e.impulses = sequence_from_json(require(j, "impulses", context), context + ".impulses");
  if (e.desired.empty() || e.states.size() != static_cast<std::size_t>(e.termination) + 1 ||
      e.outputs.size() != e.states.size() ||
      e.impulses.size() != static_cast<std::size_t>(e.termination)) {
    throw InputError(context + ": inconsistent sequence lengths");
  }
  return e;
}

Json to_json(const EpisodeBatch& b) {
  Json episodes = Json::array();
  for (const auto& e : b.episodes) episodes.push_back(to_json(e));
  return Json{{"config",
               {{"system", to_json(b.system)},
                {"horizon", b.horizon},
                {"dt", b.system.dt},
                {"seed", b.seed}}},
              {"episodes", std::move(episodes)}};
}

EpisodeBatch episode_batch_from_json(const Json& j) {
  EpisodeBatch b;
  const Json& config = require(j, "config", "episode batch");
  b.system = system_config_from_json(require(config, "system", "config"));
  b.horizon = require(config, "horizon", "config").get<int>();
  b.seed = config.value("seed", std::uint64_t{0});
  const Json& eps = require(j, "episodes", "episode batch");
  if (!eps.is_array()) throw InputError("episode batch: 'episodes' must be an array");
  if (eps.empty()) throw InputError("episode batch: empty dataset");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    b.episodes.push_back(episode_from_json(eps[i], "episodes[" + std::to_string(i) + "]"));
  }
  return b;
}

}  // namespace saveri
