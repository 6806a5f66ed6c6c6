#include <doctest.h>

#include "saveri/dynamics.hpp"

using namespace saveri;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

SystemConfig quiet(const std::string& name) {
  SystemConfig c;
  c.name = name;
  c.disturbance = {};
  return c;
}

}  // namespace

TEST_CASE("plan_trajectory interpolates endpoints inclusive") {
  const Sequence same = plan_trajectory(v2(0, 0), v2(0, 0), 5);
  REQUIRE(same.size() == 5);
  for (const auto& p : same) CHECK(p.norm() == 0.0);

  const Sequence three = plan_trajectory(v2(0, 0), v2(1, 0), 3);
  CHECK(three[1].isApprox(v2(0.5, 0)));
  CHECK(three[2].isApprox(v2(1, 0)));

  const Sequence five = plan_trajectory(v2(2, -1), v2(4, 3), 5);
  CHECK(five[2].isApprox(v2(3, 1)));

  CHECK_THROWS_AS(plan_trajectory(v2(0, 0), v2(0, 0), 0), std::invalid_argument);
  Vec three_d = Vec::Zero(3);
  CHECK_THROWS_AS(plan_trajectory(v2(0, 0), three_d, 4), std::invalid_argument);
}

TEST_CASE("safe sets are closed") {
  const ClosedLoopSystem pm = make_system(quiet("point-mass"));
  Vec s = Vec::Zero(4);
  CHECK(is_safe(s, pm.default_safe_set()));
  s[0] = 1.0;
  CHECK(is_safe(s, pm.default_safe_set()));
  s[0] = 1.0 + 1e-12;
  CHECK_FALSE(is_safe(s, pm.default_safe_set()));

  const ClosedLoopSystem cp = make_system(quiet("cart-pole"));
  Vec c = Vec::Zero(4);
  c[2] = 0.3;
  CHECK_FALSE(is_safe(c, cp.default_safe_set()));
  c[2] = 0.25;
  CHECK(is_safe(c, cp.default_safe_set()));
}

TEST_CASE("point-mass tracking law") {
  const ClosedLoopSystem pm = make_system(quiet("point-mass"));
  const Disturbance zero = pm.zero_disturbance();

  SUBCASE("rest at the desired point is a fixed point") {
    Vec s = Vec::Zero(4);
    s.head(2) = v2(0.3, -0.2);
    const Vec next = pm.step(s, v2(0.3, -0.2), zero);
    CHECK((next - s).norm() == doctest::Approx(0.0));
  }

  SUBCASE("tracking error contracts") {
    Vec s = Vec::Zero(4);
    s.head(2) = v2(0.5, 0.5);
    const Vec target = v2(0, 0);
    const double e0 = (s.head(2) - target).norm();
    for (int k = 0; k < 50; ++k) s = pm.step(s, target, zero);
    CHECK((s.head(2) - target).norm() < e0);
  }

  SUBCASE("disturbances enter through the injection map") {
    Vec s(4);
    s << 0.1, -0.4, 0.2, 0.05;
    Disturbance w = zero;
    w.impulse = v2(0.7, -1.3);
    const Vec diff = pm.step(s, v2(0.2, 0.2), w) - pm.step(s, v2(0.2, 0.2), zero);
    CHECK((diff - pm.inject(w.impulse)).norm() < 1e-12);
  }
}

TEST_CASE("cart-pole injection is exact") {
  const ClosedLoopSystem cp = make_system(quiet("cart-pole"));
  Vec s(4);
  s << 0.2, 0.1, 0.05, -0.1;
  Disturbance w = cp.zero_disturbance();
  w.impulse = Vec::Constant(1, 2.5);
  Vec d(1);
  d << 0.0;
  const Vec desired = Vec::Constant(cp.output_dim(), 0.4);
  const Vec diff = cp.step(s, desired, w) - cp.step(s, desired, cp.zero_disturbance());
  CHECK((diff - cp.inject(w.impulse)).norm() < 1e-12);
}

TEST_CASE("episodes") {
  const ClosedLoopSystem pm = make_system(quiet("point-mass"));
  const SafeSet& box = pm.default_safe_set();

  SUBCASE("equilibrium task stays safe for the full horizon") {
    RolloutOptions o;
    o.disturbances = false;
    o.task = Task{Vec::Zero(4), v2(0, 0)};
    const Episode e = rollout_episode(pm, box, 40, 3, o);
    CHECK(e.safe);
    CHECK(e.termination == 40);
    CHECK(e.states.size() == 41);
  }

  SUBCASE("a large pulse toward the edge ends the episode early") {
    RolloutOptions o;
    o.disturbances = false;
    o.task = Task{Vec::Zero(4), v2(0, 0)};
    // Bisect the smallest pulse that leaves the box.
    double lo = 0.0, hi = 200.0;
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      o.pulse = ForcedPulse{5, v2(mid, 0)};
      (rollout_episode(pm, box, 40, 3, o).safe ? lo : hi) = mid;
    }
    o.pulse = ForcedPulse{5, v2(hi, 0)};
    const Episode e = rollout_episode(pm, box, 40, 3, o);
    CHECK_FALSE(e.safe);
    CHECK(e.termination > 5);
    CHECK(e.termination <= 40);
    o.pulse = ForcedPulse{5, v2(lo, 0)};
    CHECK(rollout_episode(pm, box, 40, 3, o).safe);
  }

  SUBCASE("same seed, same episode") {
    SystemConfig c;
    c.disturbance = {0.05, 3.0};
    const ClosedLoopSystem noisy = make_system(c);
    const Episode a = rollout_episode(noisy, noisy.default_safe_set(), 60, 42);
    const Episode b = rollout_episode(noisy, noisy.default_safe_set(), 60, 42);
    CHECK(to_json(a).dump() == to_json(b).dump());
  }
}

TEST_CASE("system construction") {
  SystemConfig c = quiet("point-mass");
  c.gap = 0.0;
  c.variant = Variant::real;
  const ClosedLoopSystem real = make_system(c);
  c.variant = Variant::nominal;
  const ClosedLoopSystem nominal = make_system(c);
  const Episode a = rollout_episode(real, real.default_safe_set(), 60, 9);
  const Episode b = rollout_episode(nominal, nominal.default_safe_set(), 60, 9);
  REQUIRE(a.states.size() == b.states.size());
  for (std::size_t k = 0; k < a.states.size(); ++k) CHECK(a.states[k] == b.states[k]);

  SystemConfig bad;
  bad.name = "walker";
  CHECK_THROWS_AS(make_system(bad), InputError);
  CHECK_THROWS_AS(variant_from_string("simulated"), InputError);
}

TEST_CASE("episode batches round-trip through JSON") {
  SystemConfig c;
  c.disturbance = {0.05, 3.0};
  const EpisodeBatch batch = generate_episodes(make_system(c), 6, 30, 5);
  const std::string text = to_json(batch).dump();
  CHECK(to_json(episode_batch_from_json(Json::parse(text))).dump() == text);
}
