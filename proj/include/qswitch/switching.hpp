#pragma once
// Closed-loop integration of the Bloch dynamics with event-detected mode
// switching. Triggers follow the two-test rule: a singular trigger when the
// active fractional denominator gap falls to its threshold, an invariant
// trigger when |V'| falls to its threshold; thresholds are either fixed
// constants or affine shrink functions of V. Events are localized by
// bisection on the triggering scalar over the last step.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qswitch/controller.hpp"
#include "qswitch/errors.hpp"

namespace qswitch {

enum class PolicyKind { None, Fixed, Shrink };

/// threshold(V) = intercept + slope * V
struct AffineThreshold {
  double slope = 0.0;
  double intercept = 0.0;
  double operator()(double v) const { return intercept + slope * v; }
};

struct SwitchingPolicy {
  PolicyKind kind = PolicyKind::Shrink;
  std::array<double, 2> singular_fixed = {0.0, 0.0};   // kappa_1, kappa_2
  std::array<double, 2> invariant_fixed = {0.0, 0.0};  // iota_1, iota_2
  std::array<AffineThreshold, 2> singular_shrink = {};   // vartheta_i(V)
  std::array<AffineThreshold, 2> invariant_shrink = {};  // varsigma_i(V)
  Mode initial_mode = Mode::One;
  double terminal_v = 1e-30;  // stop once e^T P e falls to this
  double min_dwell = 0.0;     // optional chatter guard, disabled by default

  void validate() const {
    if (!(terminal_v > 0.0)) throw DomainError("terminal threshold must be positive");
    if (min_dwell < 0.0) throw DomainError("minimum dwell must be nonnegative");
    if (kind == PolicyKind::Fixed) {
      for (int i = 0; i < 2; ++i)
        if (!(singular_fixed[i] > 0.0) || !(invariant_fixed[i] > 0.0))
          throw DomainError("fixed thresholds must be positive");
    } else if (kind == PolicyKind::Shrink) {
      const auto check = [](const AffineThreshold& f, const std::string& name) {
        if (f.slope < 0.0 || f.intercept < 0.0 || (f.slope == 0.0 && f.intercept == 0.0))
          throw DomainError("shrink threshold " + name +
                            " needs slope >= 0, intercept >= 0, not both zero");
      };
      for (int i = 0; i < 2; ++i) {
        check(singular_shrink[i], "vartheta_" + std::to_string(i + 1));
        check(invariant_shrink[i], "varsigma_" + std::to_string(i + 1));
      }
    }
  }

  double singular_threshold(Mode mode, double v) const {
    const int i = mode_index(mode);
    return kind == PolicyKind::Shrink ? singular_shrink[i](v) : singular_fixed[i];
  }
  double invariant_threshold(Mode mode, double v) const {
    const int i = mode_index(mode);
    return kind == PolicyKind::Shrink ? invariant_shrink[i](v) : invariant_fixed[i];
  }
};

enum class Trigger { Singular, Invariant };

inline const char* trigger_name(Trigger t) {
  return t == Trigger::Singular ? "singular" : "invariant";
}

struct TriggerHit {
  Trigger kind;
  double value;  // monitored quantity (gap or |V'|) at the hit
};

struct SwitchEvent {
  int index;  // m, 1-based
  double tau;
  Mode from_mode;
  Mode to_mode;
  Trigger trigger;
  double trigger_value;
};

struct SwitchLog {
  std::vector<SwitchEvent> events;
};

struct DwellStats {
  std::size_t count = 0;
  double min_gap = std::numeric_limits<double>::infinity();
  double avg_dwell = 0.0;
};

/// Switch count over [t1, t2), minimum consecutive gap, and (t2-t1)/max(N,1).
inline DwellStats dwell_stats(const SwitchLog& log, double t1, double t2) {
  if (!(t1 < t2)) throw DomainError("dwell_stats requires t1 < t2");
  DwellStats out;
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (const auto& ev : log.events) {
    if (ev.tau < t1 || ev.tau >= t2) continue;
    ++out.count;
    if (!std::isnan(prev)) out.min_gap = std::min(out.min_gap, ev.tau - prev);
    prev = ev.tau;
  }
  out.avg_dwell = (t2 - t1) / static_cast<double>(std::max<std::size_t>(out.count, 1));
  return out;
}

struct TrajectorySample {
  double t;
  Vec3 s;
  Vec2 u;
  double lyapunov;       // V
  double lyapunov_rate;  // V'
  Mode mode;
  double delta_active;   // monitored denominator gap of the active mode
};

struct Trajectory {
  std::vector<TrajectorySample> samples;
  double dt = 0.0;
  double t_final = 0.0;
};

/// Record of every accepted integration step and the feedback value applied
/// over it (the law is evaluated at the step start and held for the step),
/// sufficient to replay the identical control sequence through an
/// independent density-matrix integration.
struct ControlTape {
  std::vector<std::pair<double, double>> steps;  // (t0, h) of accepted steps
  std::vector<Vec2> inputs;                      // one entry per step
};

enum class StopReason { Horizon, TerminalCondition };

struct Summary {
  Vec3 final_s = Vec3::Zero();
  Matrix2c final_rho = 0.5 * Matrix2c::Identity();
  double fidelity_to_target = 0.0;
  double final_v = 0.0;
  std::size_t switches = 0;
  double min_gap = std::numeric_limits<double>::infinity();
  double final_time = 0.0;
  bool terminated_early = false;
  StopReason reason = StopReason::Horizon;
  std::size_t clamped_windows = 0;  // windows integrated with a capped fractional channel
};

struct SimulationResult {
  Trajectory trajectory;
  SwitchLog log;
  Summary summary;
  ControlTape tape;
};

/// Classical fixed-step RK4 over any vector-space state.
template <class State, class Rhs>
State rk4_step(const Rhs& rhs, double t, const State& x, double h) {
  const State k1 = rhs(t, x);
  const State k2 = rhs(t + 0.5 * h, State(x + (0.5 * h) * k1));
  const State k3 = rhs(t + 0.5 * h, State(x + (0.5 * h) * k2));
  const State k4 = rhs(t + h, State(x + h * k3));
  return State(x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

/// One closed-loop RK4 advance: the feedback law is evaluated at (t, s) and
/// held over the step, so the advance integrates a constant affine system.
inline Vec3 step(const Vec3& s, double t, double dt, const SystemModel& model,
                 const ControllerSpec& ctrl, Mode mode, const Vec3& target) {
  if (!(dt > 0.0)) throw DomainError("step size must be positive");
  const Vec2 u = control_input({s, target}, model, ctrl, mode, t);
  const auto rhs = [&](double, const Vec3& x) { return Vec3(bloch_rhs(model, x, u)); };
  return rk4_step(rhs, t, s, dt);
}

/// Evaluate the switching rule at (t, state) for the active mode. Returns the
/// trigger when min(gap - sing_thr, |V'| - inv_thr) <= 0; the singular test
/// wins on simultaneous satisfaction and is evaluated first so that the
/// control (needed only for |V'|) is never formed with a vanished gap.
inline std::optional<TriggerHit> switch_trigger(const ErrorState& st, const SystemModel& model,
                                                const ControllerSpec& ctrl,
                                                const SwitchingPolicy& policy, Mode mode,
                                                double t) {
  if (policy.kind == PolicyKind::None) return std::nullopt;
  const double v = lyapunov_value(st.error(), ctrl.weight);
  const int fc = fractional_channel(ctrl.family, mode);
  const double gap = singular_gap(st, ctrl.weight, model.control[fc]);
  if (gap - policy.singular_threshold(mode, v) <= 0.0) return TriggerHit{Trigger::Singular, gap};
  const Vec2 u = control_input(st, model, ctrl, mode, t);
  const double rate = std::abs(lyapunov_rate(st, model, ctrl.weight, u));
  if (rate - policy.invariant_threshold(mode, v) <= 0.0) return TriggerHit{Trigger::Invariant, rate};
  return std::nullopt;
}

namespace detail {

inline constexpr double kBallGuard = 1e-3;      // StepTooLarge beyond 1 + this
inline constexpr double kDeferRotation = 0.1;   // max |u| dt ||K|| admitted when switching
                                                // into a mode inside its own threshold region
inline constexpr double kRotationCap = 0.05;  // per-sub-step control rotation bound
inline constexpr int kMaxSubsteps = 1024;     // sub-step ceiling per sampling window

/// Everything the engine needs to know about one state under one mode.
struct StateProbe {
  double v = 0.0;
  double den = 0.0;          // signed e^T P K_den s of the fractional channel
  double gap = 0.0;          // |den|
  double sing_scalar = 0.0;  // gap - singular threshold
  double vdot = 0.0;         // signed V'
  double inv_scalar = 0.0;   // |vdot| - invariant threshold
  Vec2 u = Vec2::Zero();
};

}  // namespace detail

/// Integrate the closed loop from s0 toward target over [0, t_final] under
/// the given switching policy.
///
/// Samples are uniformly spaced by dt except at event-refined switch points.
/// Detection follows the sampled reading of the switching rule: the two
/// trigger scalars are tested at every accepted sample, a sign change of the
/// signed denominator across a step's stages counts as a singular trigger
/// (the gap passed through zero, hence through any positive threshold,
/// inside the step), and a sign change of V' across a step counts as an
/// invariant trigger. Triggered crossings are localized by bisection on the
/// triggering scalar; after a switch the new mode always runs one step
/// before its own triggers are evaluated, so a switch landing inside the
/// other mode's threshold region produces a one-step dwell rather than a
/// zero-time switching loop. The terminal rule e^T P e <= terminal_v is
/// checked at every accepted sample.
inline SimulationResult simulate(const SystemModel& model, const Vec3& s0, const Vec3& target,
                                 const ControllerSpec& ctrl, const SwitchingPolicy& policy,
                                 double t_final, double dt, double event_tol) {
  ctrl.validate();
  policy.validate();
  if (!(t_final > 0.0)) throw DomainError("t_final must be positive");
  if (!(dt > 0.0)) throw DomainError("dt must be positive");
  if (!(event_tol > 0.0)) throw DomainError("event_tol must be positive");
  if (s0.norm() > 1.0 + kBlochBallTol) throw NonPhysicalState("initial state outside Bloch ball");
  if (target.norm() > 1.0 + kBlochBallTol) throw NonPhysicalState("target outside Bloch ball");

  SimulationResult res;
  res.trajectory.dt = dt;
  res.trajectory.t_final = t_final;

  Mode mode = policy.initial_mode;
  Vec3 s = s0;
  double t = 0.0;
  double last_switch = -std::numeric_limits<double>::infinity();
  bool stopped = false;
  StopReason reason = StopReason::Horizon;

  // Probe a state under the current mode. With a vanished gap the control is
  // undefined; u = 0 is recorded there (V' and the gap remain well defined)
  // and the singular scalar, already nonpositive, carries the trigger.
  const auto probe_state = [&](double time, const Vec3& state) {
    detail::StateProbe p;
    const ErrorState st{state, target};
    p.v = lyapunov_value(st.error(), ctrl.weight);
    const int fc = fractional_channel(ctrl.family, mode);
    p.den = st.error().dot(ctrl.weight * (model.control[fc] * state));
    p.gap = std::abs(p.den);
    p.sing_scalar = p.gap - policy.singular_threshold(mode, p.v);
    try {
      p.u = control_input(st, model, ctrl, mode, time);
    } catch (const SingularDenominator&) {
      p.u = Vec2::Zero();
    }
    p.vdot = lyapunov_rate(st, model, ctrl.weight, p.u);
    p.inv_scalar = std::abs(p.vdot) - policy.invariant_threshold(mode, p.v);
    return p;
  };

  const auto record_sample = [&](double time, const Vec3& state, const detail::StateProbe& p) {
    res.trajectory.samples.push_back({time, state, p.u, p.v, p.vdot, mode, p.gap});
  };

  // One sampling window: the state advanced over [t0, t0+h] by a
  // deterministic number of RK4 sub-steps. The sub-step count keeps the
  // per-sub-step control rotation |u| * ||K|| * h_sub below a fixed cap:
  // near a singular surface the fractional law grows without bound and one
  // full step would mix wildly different controls. The count is derived from
  // the control magnitude at the window start and doubled (bounded times)
  // whenever a sub-step exceeds twice the cap. Sub-step controls feed the
  // tape and the signed-denominator monitor.
  struct Window {
    Vec3 end = Vec3::Zero();
    std::vector<std::pair<double, double>> steps;
    std::vector<Vec2> inputs;  // one frozen control per sub-step
    bool den_flip = false;
    bool guard_hit = false;
    bool clamped = false;
  };

  // The feedback is evaluated at each sub-step's start and held for the
  // sub-step, so every sub-step integrates a constant affine system; RK4 on
  // such a system cannot inflate the Bloch norm for rotations under the cap.
  const auto integrate_window = [&](double t0, const Vec3& x0, double h, double u_start,
                                    double den_start) {
    Window w;
    const double start_sign = den_start > 0.0 ? 1.0 : (den_start < 0.0 ? -1.0 : 0.0);
    const int fc = fractional_channel(ctrl.family, mode);
    int n = 1;
    if (u_start * 2.0 * h > detail::kRotationCap)
      n = std::min(detail::kMaxSubsteps,
                   static_cast<int>(std::ceil(u_start * 2.0 * h / detail::kRotationCap)));
    bool clamp = false;
    while (true) {
      w.steps.clear();
      w.inputs.clear();
      w.den_flip = false;
      w.guard_hit = false;
      w.clamped = clamp;
      bool refine = false;
      const double h_sub = h / n;
      // A transversal zero of the fractional denominator carries an
      // irreducible winding burst (the integral of |u| through it diverges
      // logarithmically), so once the sub-step ladder is exhausted the
      // fractional channel is capped at the largest magnitude resolvable at
      // this resolution. The capped values go onto the tape, so the density
      // replay still sees the applied controls exactly.
      const double u_limit = detail::kRotationCap / (2.0 * h_sub);
      Vec3 x = x0;
      for (int k = 0; k < n; ++k) {
        const double tt = t0 + k * h_sub;
        const ErrorState st{x, target};
        const double den = st.error().dot(ctrl.weight * (model.control[fc] * x));
        if (den * start_sign <= 0.0) w.den_flip = true;
        Vec2 u;
        if (clamp) {
          try {
            u = control_input(st, model, ctrl, mode, tt);
          } catch (const SingularDenominator&) {
            u = Vec2::Zero();
            u[1 - fc] = -ctrl.gain *
                        sign0((ctrl.weight * st.error()).dot(model.control[1 - fc] * x));
          }
          u[fc] = std::clamp(u[fc], -u_limit, u_limit);
        } else {
          try {
            u = control_input(st, model, ctrl, mode, tt);
          } catch (const SingularDenominator&) {
            w.guard_hit = true;
            break;
          }
          if (u.cwiseAbs().maxCoeff() * 2.0 * h_sub > 2.0 * detail::kRotationCap) {
            refine = true;
            break;
          }
        }
        const auto rhs = [&](double, const Vec3& y) { return Vec3(bloch_rhs(model, y, u)); };
        x = rk4_step(rhs, tt, x, h_sub);
        w.steps.emplace_back(tt, h_sub);
        w.inputs.push_back(u);
      }
      if (refine) {
        if (n < detail::kMaxSubsteps)
          n = std::min(detail::kMaxSubsteps, 2 * n);
        else
          clamp = true;
        continue;
      }
      w.end = x;
      return w;
    }
  };

  const auto commit_window = [&](const Window& w) {
    res.tape.steps.insert(res.tape.steps.end(), w.steps.begin(), w.steps.end());
    res.tape.inputs.insert(res.tape.inputs.end(), w.inputs.begin(), w.inputs.end());
    if (w.clamped) ++res.summary.clamped_windows;
  };

  detail::StateProbe prev;  // probe of the current (t, s) under the current mode

  const auto start_u = [&] { return prev.u.cwiseAbs().maxCoeff(); };

  // Trigger scalar of the given kind on a trial window of length frac*h
  // from (t, s). A denominator guard tripping mid-trial means the singular
  // crossing lies inside the window while |V'| is effectively unbounded.
  const auto trial_scalar = [&](Trigger kind, double frac, double h) {
    const Window w = integrate_window(t, s, frac * h, start_u(), prev.den);
    if (w.guard_hit)
      return kind == Trigger::Singular ? -std::numeric_limits<double>::infinity()
                                       : std::numeric_limits<double>::infinity();
    const ErrorState st{w.end, target};
    const double v = lyapunov_value(st.error(), ctrl.weight);
    const int fc = fractional_channel(ctrl.family, mode);
    if (kind == Trigger::Singular)
      return singular_gap(st, ctrl.weight, model.control[fc]) -
             policy.singular_threshold(mode, v);
    try {
      const Vec2 u = control_input(st, model, ctrl, mode, t + frac * h);
      return std::abs(lyapunov_rate(st, model, ctrl.weight, u)) -
             policy.invariant_threshold(mode, v);
    } catch (const SingularDenominator&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  // Signed monitored quantity (denominator or V') on a trial window.
  const auto trial_signed = [&](Trigger kind, double frac, double h) -> std::optional<double> {
    const Window w = integrate_window(t, s, frac * h, start_u(), prev.den);
    if (w.guard_hit) return std::nullopt;
    const ErrorState st{w.end, target};
    const int fc = fractional_channel(ctrl.family, mode);
    if (kind == Trigger::Singular)
      return st.error().dot(ctrl.weight * (model.control[fc] * w.end));
    try {
      const Vec2 u = control_input(st, model, ctrl, mode, t + frac * h);
      return lyapunov_rate(st, model, ctrl.weight, u);
    } catch (const SingularDenominator&) {
      return std::nullopt;
    }
  };

  // Find a step fraction with a nonpositive trigger scalar, scanning for the
  // first sub-sample where either the scalar dips or the signed quantity
  // flips; returns nullopt when the flagged crossing cannot be reproduced on
  // refined sub-steps (the trigger was a stage artifact).
  const auto find_right_end = [&](Trigger kind, double h,
                                  double start_sign) -> std::optional<double> {
    if (trial_scalar(kind, 1.0, h) <= 0.0) return 1.0;
    const int scan = 64;
    double prev = 0.0;
    for (int k = 1; k <= scan; ++k) {
      const double frac = static_cast<double>(k) / scan;
      if (trial_scalar(kind, frac, h) <= 0.0) return frac;
      const std::optional<double> q = trial_signed(kind, frac, h);
      if (!q)  // guard tripped mid-trial: usable as a singular end only
        return kind == Trigger::Singular ? std::optional<double>(frac) : std::nullopt;
      if (*q * start_sign < 0.0) {
        // Sign flip inside (prev, frac]: walk the bracket down until the
        // scalar itself goes nonpositive near the zero of the quantity.
        double lo = prev, hi = frac;
        for (int it = 0; it < 100; ++it) {
          const double mid = 0.5 * (lo + hi);
          if (trial_scalar(kind, mid, h) <= 0.0) return mid;
          const std::optional<double> qm = trial_signed(kind, mid, h);
          if (!qm) return kind == Trigger::Singular ? std::optional<double>(mid) : std::nullopt;
          if (*qm * start_sign < 0.0)
            hi = mid;
          else
            lo = mid;
        }
        return std::nullopt;
      }
      prev = frac;
    }
    return std::nullopt;
  };

  const auto check_ball = [&](const Vec3& state, double time) {
    if (state.norm() > 1.0 + detail::kBallGuard)
      throw StepTooLarge("|s| = " + std::to_string(state.norm()) + " at t = " +
                         std::to_string(time) + "; reduce dt or adjust thresholds");
  };

  // Hand control to the other mode at the current (t, s). A destination
  // whose own fractional gap sits inside its singular threshold is accepted
  // only while its fractional law stays integrable at this step size;
  // otherwise the switch is deferred (in continuous time it would be undone
  // after zero dwell) and re-evaluated at every subsequent sample.
  // Returns true when the switch was taken.
  const auto attempt_switch = [&](Trigger kind, double value) -> bool {
    const Mode dest = other_mode(mode);
    const ErrorState st{s, target};
    const double v = lyapunov_value(st.error(), ctrl.weight);
    const int dest_fc = fractional_channel(ctrl.family, dest);
    const double dest_gap = singular_gap(st, ctrl.weight, model.control[dest_fc]);
    bool usable = dest_gap > policy.singular_threshold(dest, v);
    if (!usable) {
      try {
        const Vec2 u_dest = control_input(st, model, ctrl, dest, t);
        usable = std::abs(u_dest[dest_fc]) * dt * 2.0 <= detail::kDeferRotation;
      } catch (const SingularDenominator&) {
        usable = false;
      }
    }
    if (!usable) return false;
    res.log.events.push_back({static_cast<int>(res.log.events.size()) + 1, t, mode, dest, kind,
                              value});
    mode = dest;
    last_switch = t;
    return true;
  };

  // Initial sample: terminal rule first, then a possible t = 0 trigger.
  {
    prev = probe_state(t, s);
    if (prev.v <= policy.terminal_v) {
      record_sample(t, s, prev);
      stopped = true;
      reason = StopReason::TerminalCondition;
    } else {
      if (policy.kind != PolicyKind::None) {
        bool switched = false;
        if (prev.sing_scalar <= 0.0)
          switched = attempt_switch(Trigger::Singular, prev.gap);
        else if (prev.inv_scalar <= 0.0)
          switched = attempt_switch(Trigger::Invariant, std::abs(prev.vdot));
        if (switched) prev = probe_state(t, s);
      }
      record_sample(t, s, prev);
    }
  }

  while (!stopped) {
    const double remaining = t_final - t;
    if (remaining <= dt * 1e-12) break;
    const double h = std::min(dt, remaining);

    const Window win = integrate_window(t, s, h, start_u(), prev.den);
    const double t_next = t + h;

    if (!win.guard_hit) {
      check_ball(win.end, t_next);
      const double v_next = lyapunov_value(Vec3(win.end - target), ctrl.weight);
      if (v_next <= policy.terminal_v) {
        commit_window(win);
        t = t_next;
        s = win.end;
        prev = probe_state(t, s);
        record_sample(t, s, prev);
        reason = StopReason::TerminalCondition;
        stopped = true;
        break;
      }
    }

    const bool policy_active =
        policy.kind != PolicyKind::None && (t_next - last_switch >= policy.min_dwell);

    if (win.guard_hit) {
      // The active law's denominator crossed the hard guard inside this
      // window; stop at the singular-threshold crossing instead and switch.
      if (!policy_active)
        throw SingularDenominator("fractional law denominator collapsed at t = " +
                                  std::to_string(t_next));
      const std::optional<double> right =
          find_right_end(Trigger::Singular, h, prev.den > 0.0 ? 1.0 : -1.0);
      if (!right)
        throw SingularDenominator("fractional law denominator collapsed at t = " +
                                  std::to_string(t_next));
      double frac = *right;
      if (prev.sing_scalar > 0.0) {
        double lo = 0.0, hi = *right;
        while ((hi - lo) * h > event_tol) {
          const double mid = 0.5 * (lo + hi);
          if (trial_scalar(Trigger::Singular, mid, h) <= 0.0)
            hi = mid;
          else
            lo = mid;
        }
        frac = hi;
      }
      const Window ev = integrate_window(t, s, frac * h, start_u(), prev.den);
      if (ev.guard_hit)
        throw SingularDenominator("fractional law denominator collapsed at t = " +
                                  std::to_string(t + frac * h));
      commit_window(ev);
      t = t + frac * h;
      s = ev.end;
      check_ball(s, t);
      const detail::StateProbe at_tau = probe_state(t, s);
      if (at_tau.v <= policy.terminal_v) {
        record_sample(t, s, at_tau);
        reason = StopReason::TerminalCondition;
        stopped = true;
        break;
      }
      if (!attempt_switch(Trigger::Singular, at_tau.gap))
        throw AssumptionViolation(
            "both fractional laws unusable at t = " + std::to_string(t) +
            "; trajectory sits on an intersection of the singular value sets");
      prev = probe_state(t, s);
      record_sample(t, s, prev);
      continue;
    }

    const detail::StateProbe next = probe_state(t_next, win.end);

    // Trigger detection, singular first. A crossing is localized by
    // bisection only when the step started outside the threshold region;
    // a step that started inside it (just-switched or deferred) runs to its
    // end and the event, if still due, is taken there.
    enum class Action { None, AtEnd, Localize };
    Action action = Action::None;
    Trigger kind = Trigger::Singular;
    if (policy_active) {
      const bool sing_fresh = prev.sing_scalar > 0.0;
      const bool sing_end = next.sing_scalar <= 0.0;
      const bool sing_flip = win.den_flip && prev.den != 0.0;
      const bool inv_fresh = prev.inv_scalar > 0.0;
      const bool inv_end = next.inv_scalar <= 0.0;
      const bool inv_flip = next.vdot * prev.vdot < 0.0;
      if (sing_fresh && (sing_end || sing_flip)) {
        action = Action::Localize;
        kind = Trigger::Singular;
      } else if (!sing_fresh && sing_end) {
        action = Action::AtEnd;
        kind = Trigger::Singular;
      } else if (inv_fresh && (inv_end || inv_flip)) {
        action = Action::Localize;
        kind = Trigger::Invariant;
      } else if (!inv_fresh && inv_end) {
        action = Action::AtEnd;
        kind = Trigger::Invariant;
      }
    }

    if (action == Action::None) {
      commit_window(win);
      t = t_next;
      s = win.end;
      prev = next;
      record_sample(t, s, prev);
      continue;
    }

    if (action == Action::AtEnd) {
      commit_window(win);
      t = t_next;
      s = win.end;
      const double value = kind == Trigger::Singular ? next.gap : std::abs(next.vdot);
      if (attempt_switch(kind, value)) {
        prev = probe_state(t, s);
      } else {
        if (next.gap <= 10.0 * kSingularGuard)
          throw AssumptionViolation(
              "both fractional laws unusable at t = " + std::to_string(t) +
              "; trajectory sits on an intersection of the singular value sets");
        prev = next;  // deferred: destination unusable here
      }
      record_sample(t, s, prev);
      continue;
    }

    // Localize the first crossing of the triggering scalar inside (t, t+h].
    const std::optional<double> right =
        find_right_end(kind, h, prev.den > 0.0 ? 1.0 : (prev.den < 0.0 ? -1.0 : 0.0));
    if (!right) {
      commit_window(win);  // flagged crossing did not reproduce; keep the window
      t = t_next;
      s = win.end;
      prev = next;
      record_sample(t, s, prev);
      continue;
    }
    double lo = 0.0, hi = *right;
    while ((hi - lo) * h > event_tol) {
      const double mid = 0.5 * (lo + hi);
      if (trial_scalar(kind, mid, h) <= 0.0)
        hi = mid;
      else
        lo = mid;
    }
    const Window ev = integrate_window(t, s, hi * h, start_u(), prev.den);
    if (ev.guard_hit)
      throw SingularDenominator("fractional law denominator collapsed at t = " +
                                std::to_string(t + hi * h));
    commit_window(ev);
    t = t + hi * h;
    s = ev.end;
    check_ball(s, t);

    const detail::StateProbe at_tau = probe_state(t, s);
    if (at_tau.v <= policy.terminal_v) {
      record_sample(t, s, at_tau);
      reason = StopReason::TerminalCondition;
      stopped = true;
      break;
    }
    const double value = kind == Trigger::Singular ? at_tau.gap : std::abs(at_tau.vdot);
    if (attempt_switch(kind, value)) {
      prev = probe_state(t, s);
    } else {
      if (at_tau.gap <= 10.0 * kSingularGuard)
        throw AssumptionViolation(
            "both fractional laws unusable at t = " + std::to_string(t) +
            "; trajectory sits on an intersection of the singular value sets");
      prev = at_tau;  // deferred: destination unusable at the crossing
    }
    record_sample(t, s, prev);
  }

  Summary& sum = res.summary;
  sum.final_s = s;
  sum.final_time = t;
  sum.final_v = lyapunov_value(Vec3(s - target), ctrl.weight);
  sum.terminated_early = (reason == StopReason::TerminalCondition);
  sum.reason = reason;
  sum.switches = res.log.events.size();
  const Vec3 s_proj = s.norm() > 1.0 ? Vec3(s / s.norm()) : s;
  sum.final_rho = bloch_to_density(s_proj).matrix();
  sum.fidelity_to_target =
      fidelity(bloch_to_density(s_proj), bloch_to_density(target));
  if (!res.log.events.empty()) {
    const DwellStats ds = dwell_stats(res.log, 0.0, std::max(t_final, t) + dt);
    sum.min_gap = ds.min_gap;
  }
  return res;
}

inline SimulationResult simulate(const OpenSystemSpec& spec, const Vec3& s0, const Vec3& target,
                                 const ControllerSpec& ctrl, const SwitchingPolicy& policy,
                                 double t_final, double dt, double event_tol) {
  return simulate(build_system(spec), s0, target, ctrl, policy, t_final, dt, event_tol);
}

/// Replay the recorded controls through an RK4 integration of the
/// density-matrix master equation and return the largest componentwise
/// Bloch-vector deviation from the recorded trajectory. Tape steps are
/// matched against samples by time: a sampling window may have been taken
/// in several sub-steps.
inline double replay_density_max_error(const OpenSystemSpec& spec, const DensityMatrix& rho0,
                                       const ControlTape& tape, const Trajectory& traj) {
  if (traj.samples.empty()) throw DomainError("trajectory is empty");
  if (tape.inputs.size() != tape.steps.size())
    throw DomainError("tape does not hold one control per step");
  const auto bloch_of = [](const Matrix2c& r) {
    return Vec3(2.0 * pauli_coefficients(r).sigma.real());
  };

  Matrix2c rho = rho0.matrix();
  double max_err = (bloch_of(rho) - traj.samples[0].s).cwiseAbs().maxCoeff();
  std::size_t sample = 1;
  for (std::size_t i = 0; i < tape.steps.size(); ++i) {
    const Vec2& u = tape.inputs[i];
    const auto rhs = [&](double, const Matrix2c& r) {
      return Matrix2c(master_equation_rhs(spec, r, u));
    };
    rho = rk4_step(rhs, tape.steps[i].first, rho, tape.steps[i].second);
    const double t_end = tape.steps[i].first + tape.steps[i].second;
    if (sample < traj.samples.size() &&
        std::abs(traj.samples[sample].t - t_end) <= 1e-12 * std::max(1.0, t_end)) {
      max_err = std::max(max_err,
                         (bloch_of(rho) - traj.samples[sample].s).cwiseAbs().maxCoeff());
      ++sample;
    }
  }
  if (sample != traj.samples.size())
    throw DomainError("tape does not cover every trajectory sample");
  return max_err;
}

}  // namespace qswitch
