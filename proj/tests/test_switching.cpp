#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "helpers.hpp"
#include "qswitch/switching.hpp"

using namespace qswitch;

namespace {

ControllerSpec make_controller(ControlFamily family = ControlFamily::Contractive) {
  ControllerSpec ctrl;
  ctrl.weight = 0.078 * Mat3::Identity();
  ctrl.gain = 1.0;
  ctrl.family = family;
  ctrl.gamma = {-1.5, 0.0};
  ctrl.theta_hat = -0.001;
  return ctrl;
}

SwitchingPolicy amplitude_shrink_policy() {
  SwitchingPolicy policy;
  policy.kind = PolicyKind::Shrink;
  policy.singular_shrink = {AffineThreshold{0.0005, 0.0018}, AffineThreshold{0.00001, 0.000021}};
  policy.invariant_shrink = {AffineThreshold{0.00008, 0.0047}, AffineThreshold{1e-6, 0.0}};
  policy.initial_mode = Mode::One;
  return policy;
}

const Vec3 kS0(0.0, -0.8, 0.6);
const Vec3 kTarget(-0.6, 0.0, -0.8);

}  // namespace

TEST_CASE("rk4 preserves the norm of a pure rotation to fifth order") {
  Mat3 rot;
  rot << 0, -10, 0, 10, 0, 0, 0, 0, 0;
  const auto rhs = [&](double, const Vec3& x) { return Vec3(rot * x); };
  Vec3 s(1.0, 0.0, 0.0);
  const double h = 1e-3;
  const Vec3 next = rk4_step(rhs, 0.0, s, h);
  // per-step defect of |s| is O((omega h)^5) and contractive
  CHECK(std::abs(next.norm() - 1.0) <= std::pow(10.0 * h, 5.0));
  CHECK(next.norm() <= 1.0);
}

TEST_CASE("open-loop amplitude decay matches the closed form") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  const auto rhs = [&](double, const Vec3& x) { return Vec3(bloch_rhs(model, x, Vec2::Zero())); };
  const auto endpoint = [&](double h) {
    Vec3 s(0.0, 0.0, 1.0);
    const int n = static_cast<int>(std::llround(1.0 / h));
    for (int k = 0; k < n; ++k) s = rk4_step(rhs, k * h, s, h);
    return s;
  };
  const double exact = 2.0 * std::exp(-0.1) - 1.0;  // s3' = -0.1 s3 - 0.1 from s3(0)=1
  const Vec3 coarse = endpoint(0.01);
  const Vec3 fine = endpoint(0.005);
  CHECK(coarse[2] == doctest::Approx(exact).epsilon(1e-8));
  CHECK(coarse.head<2>().cwiseAbs().maxCoeff() <= 1e-12);

  const double err_coarse = std::abs(coarse[2] - exact);
  const double err_fine = std::abs(fine[2] - exact);
  const double ratio = err_coarse / err_fine;
  CHECK(ratio > 10.0);  // fourth order: halving the step shrinks the error ~16x
  CHECK(ratio < 24.0);
}

TEST_CASE("switch_trigger fires singular at the target") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  const auto hit = switch_trigger({kTarget, kTarget}, model, make_controller(),
                                  amplitude_shrink_policy(), Mode::One, 0.0);
  REQUIRE(hit.has_value());
  CHECK(hit->kind == Trigger::Singular);
  CHECK(hit->value == 0.0);
}

TEST_CASE("switch_trigger is quiet away from both sets") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  const auto hit = switch_trigger({kS0, kTarget}, model, make_controller(),
                                  amplitude_shrink_policy(), Mode::One, 0.0);
  CHECK(!hit.has_value());
}

TEST_CASE("policy None never triggers") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  SwitchingPolicy policy;
  policy.kind = PolicyKind::None;
  CHECK(!switch_trigger({kTarget, kTarget}, model, make_controller(), policy, Mode::One, 0.0)
             .has_value());
}

TEST_CASE("shrink thresholds with zero intercept vanish with V") {
  SwitchingPolicy policy = amplitude_shrink_policy();
  CHECK(policy.invariant_threshold(Mode::Two, 1.0) == doctest::Approx(1e-6));
  CHECK(policy.invariant_threshold(Mode::Two, 0.0) == 0.0);
  CHECK(policy.singular_threshold(Mode::One, 0.0) == doctest::Approx(0.0018));
}

TEST_CASE("policy validation") {
  SwitchingPolicy policy;
  policy.kind = PolicyKind::Fixed;
  policy.singular_fixed = {0.0018, 0.0};
  policy.invariant_fixed = {0.0047, 0.0001};
  CHECK_THROWS_AS(policy.validate(), DomainError);

  policy = amplitude_shrink_policy();
  policy.singular_shrink[0] = {0.0, 0.0};
  CHECK_THROWS_AS(policy.validate(), DomainError);

  policy = amplitude_shrink_policy();
  policy.terminal_v = 0.0;
  CHECK_THROWS_AS(policy.validate(), DomainError);
}

TEST_CASE("dwell statistics") {
  SwitchLog log;
  DwellStats empty = dwell_stats(log, 0.0, 10.0);
  CHECK(empty.count == 0);
  CHECK(std::isinf(empty.min_gap));
  CHECK(empty.avg_dwell == doctest::Approx(10.0));

  for (int m = 1; m <= 3; ++m)
    log.events.push_back({m, static_cast<double>(m), Mode::One, Mode::Two, Trigger::Singular, 0.1});
  const DwellStats ds = dwell_stats(log, 0.0, 10.0);
  CHECK(ds.count == 3);
  CHECK(ds.min_gap == doctest::Approx(1.0));
  CHECK(ds.avg_dwell == doctest::Approx(10.0 / 3.0));

  CHECK(dwell_stats(log, 1.5, 10.0).count == 2);  // [t1, t2) window
  CHECK_THROWS_AS(dwell_stats(log, 5.0, 5.0), DomainError);
}

TEST_CASE("simulate terminates immediately when starting at the target") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  const auto res = simulate(model, kTarget, kTarget, make_controller(),
                            amplitude_shrink_policy(), 10.0, 1e-4, 1e-9);
  CHECK(res.summary.terminated_early);
  CHECK(res.summary.switches == 0);
  CHECK(res.trajectory.samples.size() == 1);
  CHECK(res.summary.final_time == 0.0);
  CHECK(res.summary.fidelity_to_target == doctest::Approx(1.0));
}

TEST_CASE("simulate honors the terminal condition mid-run") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  SwitchingPolicy policy = amplitude_shrink_policy();
  policy.terminal_v = 0.1;  // well above the achievable floor, crossed early
  const auto res = simulate(model, kS0, kTarget, make_controller(), policy, 10.0, 1e-4, 1e-9);
  CHECK(res.summary.terminated_early);
  CHECK(res.summary.final_time < 10.0);
  CHECK(res.summary.final_v <= 0.1);
  CHECK(res.trajectory.samples.back().lyapunov <= 0.1);
}

TEST_CASE("policy None matches vanishing fixed thresholds bitwise while no event fires") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  SwitchingPolicy none;
  none.kind = PolicyKind::None;
  SwitchingPolicy tiny;
  tiny.kind = PolicyKind::Fixed;
  tiny.singular_fixed = {1e-300, 1e-300};
  tiny.invariant_fixed = {1e-300, 1e-300};

  // horizon chosen below the first trigger of the shrink run
  const auto a = simulate(model, kS0, kTarget, make_controller(), none, 0.1, 1e-4, 1e-9);
  const auto b = simulate(model, kS0, kTarget, make_controller(), tiny, 0.1, 1e-4, 1e-9);
  REQUIRE(b.log.events.empty());
  REQUIRE(a.trajectory.samples.size() == b.trajectory.samples.size());
  for (std::size_t i = 0; i < a.trajectory.samples.size(); ++i) {
    CHECK(std::memcmp(a.trajectory.samples[i].s.data(), b.trajectory.samples[i].s.data(),
                      3 * sizeof(double)) == 0);
    CHECK(a.trajectory.samples[i].lyapunov == b.trajectory.samples[i].lyapunov);
  }
}

TEST_CASE("short amplitude shrink run: event bookkeeping invariants") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  const SwitchingPolicy policy = amplitude_shrink_policy();
  const ControllerSpec ctrl = make_controller();
  const auto res = simulate(model, kS0, kTarget, ctrl, policy, 1.0, 1e-4, 1e-9);

  REQUIRE(!res.log.events.empty());
  double prev_tau = -1.0;
  for (const auto& ev : res.log.events) {
    CHECK(ev.tau > prev_tau);
    prev_tau = ev.tau;
    CHECK(ev.from_mode != ev.to_mode);
    // the logged trigger satisfies its own inequality at the event sample
    const auto sample =
        std::find_if(res.trajectory.samples.begin(), res.trajectory.samples.end(),
                     [&](const TrajectorySample& p) { return p.t == ev.tau; });
    REQUIRE(sample != res.trajectory.samples.end());
    const double v = sample->lyapunov;
    if (ev.trigger == Trigger::Singular)
      CHECK(ev.trigger_value <= policy.singular_threshold(ev.from_mode, v) + 1e-12);
    else
      CHECK(ev.trigger_value <= policy.invariant_threshold(ev.from_mode, v) + 1e-12);
  }

  // strictly increasing sample times, ball invariant, mode constant between events
  std::set<double> event_times;
  for (const auto& ev : res.log.events) event_times.insert(ev.tau);
  for (std::size_t i = 1; i < res.trajectory.samples.size(); ++i) {
    CHECK(res.trajectory.samples[i].t > res.trajectory.samples[i - 1].t);
    if (!event_times.count(res.trajectory.samples[i].t))
      CHECK(res.trajectory.samples[i].mode == res.trajectory.samples[i - 1].mode);
  }
  for (const auto& p : res.trajectory.samples) CHECK(p.s.norm() <= 1.0 + 1e-6);
}

TEST_CASE("density replay of a short shrink run stays within 1e-6") {
  const OpenSystemSpec spec = qtest::amplitude_spec();
  const SystemModel model = build_system(spec);
  const auto res = simulate(model, kS0, kTarget, make_controller(), amplitude_shrink_policy(),
                            0.5, 1e-4, 1e-9);
  const double err = replay_density_max_error(spec, DensityMatrix(qtest::scenario_rho0()), res.tape,
                                              res.trajectory);
  CHECK(err <= 1e-6);
  CHECK(err <= 1e-10);  // in practice the replay is exact to round-off
}

TEST_CASE("sampling grid is uniform away from events") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  const auto res = simulate(model, kS0, kTarget, make_controller(), amplitude_shrink_policy(),
                            0.1, 1e-4, 1e-9);
  REQUIRE(res.log.events.empty());
  const auto& smp = res.trajectory.samples;
  CHECK(smp.size() == 1001);
  for (std::size_t i = 1; i < smp.size(); ++i)
    CHECK(smp[i].t - smp[i - 1].t == doctest::Approx(1e-4).epsilon(1e-9));
}

TEST_CASE("argument validation in simulate") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  const ControllerSpec ctrl = make_controller();
  const SwitchingPolicy policy = amplitude_shrink_policy();
  CHECK_THROWS_AS(simulate(model, kS0, kTarget, ctrl, policy, -1.0, 1e-4, 1e-9), DomainError);
  CHECK_THROWS_AS(simulate(model, kS0, kTarget, ctrl, policy, 1.0, 0.0, 1e-9), DomainError);
  CHECK_THROWS_AS(simulate(model, kS0, kTarget, ctrl, policy, 1.0, 1e-4, 0.0), DomainError);
  CHECK_THROWS_AS(simulate(model, Vec3(1.2, 0, 0.4), kTarget, ctrl, policy, 1.0, 1e-4, 1e-9),
                  NonPhysicalState);
}

TEST_CASE("a grossly unstable step trips the ball guard") {
  // With near-zero control the sub-step ladder never engages, so a huge dt
  // leaves the fast free rotation outside the RK4 stability region.
  OpenSystemSpec fast;
  fast.free_hamiltonian = 50.0 * sigma(3);
  fast.control_hamiltonians = {sigma(1), sigma(2)};
  const SystemModel model = build_system(fast);
  SwitchingPolicy policy;
  policy.kind = PolicyKind::None;
  policy.initial_mode = Mode::Two;
  ControllerSpec ctrl;
  ctrl.weight = Mat3::Identity();
  ctrl.gain = 1.0;
  ctrl.family = ControlFamily::Contractive;
  ctrl.gamma = {-1e-6, 0.0};
  ctrl.theta_hat = 0.0;
  // error along z: the drift term and the bang argument both vanish, so the
  // feedback is ~0 while omega * dt = 50 is far beyond RK4 stability
  const Vec3 s0(0.3, 0.0, 0.8);
  const Vec3 target(0.3, 0.0, 0.7);
  CHECK_THROWS_AS(simulate(model, s0, target, ctrl, policy, 2.0, 0.5, 1e-9), StepTooLarge);
}

TEST_CASE("identical control channels collapse both laws onto one singular set") {
  // With K1 = K2 every switch lands on the destination's own singular set,
  // so the engine must either defer forever or report the broken assumption;
  // it must never claim a clean switching run.
  OpenSystemSpec spec = qtest::amplitude_spec();
  spec.control_hamiltonians = {sigma(1), sigma(1)};
  const SystemModel model = build_system(spec);
  ControllerSpec ctrl = make_controller();
  SwitchingPolicy policy;
  policy.kind = PolicyKind::Fixed;
  policy.singular_fixed = {1e-11, 1e-11};
  policy.invariant_fixed = {1e-11, 1e-11};
  try {
    const auto res = simulate(model, kS0, kTarget, ctrl, policy, 2.0, 1e-4, 1e-9);
    CHECK(res.log.events.empty());  // a logged switch would be inconsistent
  } catch (const AssumptionViolation&) {
    CHECK(true);
  } catch (const SingularDenominator&) {
    CHECK(true);
  }
}

TEST_CASE("step advances the closed loop by one window") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  const ControllerSpec ctrl = make_controller();
  const Vec3 next = step(kS0, 0.0, 1e-4, model, ctrl, Mode::One, kTarget);
  CHECK((next - kS0).norm() > 0.0);
  CHECK((next - kS0).norm() < 0.01);
  CHECK_THROWS_AS(step(kS0, 0.0, -1e-4, model, ctrl, Mode::One, kTarget), DomainError);
}

TEST_CASE("minimum dwell suppresses re-switching") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  SwitchingPolicy policy = amplitude_shrink_policy();
  policy.min_dwell = 0.2;
  const auto res = simulate(model, kS0, kTarget, make_controller(), policy, 2.0, 1e-4, 1e-9);
  for (std::size_t i = 1; i < res.log.events.size(); ++i)
    CHECK(res.log.events[i].tau - res.log.events[i - 1].tau >= 0.2 - 1e-4);

  SwitchingPolicy free_policy = amplitude_shrink_policy();
  const auto unconstrained =
      simulate(model, kS0, kTarget, make_controller(), free_policy, 2.0, 1e-4, 1e-9);
  double min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < unconstrained.log.events.size(); ++i)
    min_gap = std::min(min_gap,
                       unconstrained.log.events[i].tau - unconstrained.log.events[i - 1].tau);
  CHECK(min_gap < 0.2);  // the guard actually changed the behavior
}
