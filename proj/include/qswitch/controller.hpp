#pragma once
// Lyapunov function V = e^T P e, its analytic rate along the closed loop,
// the singularity gap |e^T P K s|, and the two switching feedback families.
//
// Standard family (drift cancellation only):
//   Mode1: u1 = -xi sign(e^T P K1 s),  u2 = (s^T A^T P e + e^T P g) / (-e^T P K2 s)
//   Mode2: channels swapped.
// Contractive family adds Upsilon(t) = -Gamma(t) V + theta_hat to the
// fractional numerator; its fractional law sits on channel 1 for Mode1 and
// channel 2 for Mode2.
//
// Substituting either law into the rate gives, away from the singular set,
//   standard:    V' = -2 xi |e^T P K_bang s|
//   contractive: V' = 2 Gamma(t) V - 2 theta_hat - 2 xi |e^T P K_bang s|.

#include <cmath>
#include <string>

#include "qswitch/bloch_system.hpp"
#include "qswitch/errors.hpp"

namespace qswitch {

inline constexpr double kSingularGuard = 1e-12;

enum class ControlFamily { Standard, Contractive };
enum class Mode : int { One = 1, Two = 2 };

inline int mode_index(Mode m) { return m == Mode::One ? 0 : 1; }
inline Mode other_mode(Mode m) { return m == Mode::One ? Mode::Two : Mode::One; }
inline int mode_number(Mode m) { return static_cast<int>(m); }

/// Channel (0-based) carrying the fractional drift-cancelling law.
inline int fractional_channel(ControlFamily family, Mode mode) {
  return family == ControlFamily::Contractive ? mode_index(mode) : 1 - mode_index(mode);
}

/// Channel (0-based) carrying the bang-bang sign law.
inline int bang_channel(ControlFamily family, Mode mode) {
  return 1 - fractional_channel(family, mode);
}

inline double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// Gamma(t) = intercept + slope * t, with closed-form antiderivative.
struct GammaSchedule {
  double intercept = 0.0;
  double slope = 0.0;

  double value(double t) const { return intercept + slope * t; }
  /// Lambda(t) = integral of Gamma from 0 to t.
  double antiderivative(double t) const { return intercept * t + 0.5 * slope * t * t; }
  bool negative_on(double t0, double t1) const { return value(t0) < 0.0 && value(t1) < 0.0; }
};

struct ControllerSpec {
  Mat3 weight = Mat3::Identity();  // P, symmetric positive definite
  double gain = 1.0;               // xi > 0
  ControlFamily family = ControlFamily::Contractive;
  GammaSchedule gamma;             // contractive family only
  double theta_hat = 0.0;          // contractive family only

  void validate() const {
    if ((weight - weight.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw BadWeightMatrix("weight matrix P is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat3> es(weight);
    if (!(es.eigenvalues().minCoeff() > 0.0))
      throw BadWeightMatrix("weight matrix P is not positive definite");
    if (!(gain > 0.0)) throw DomainError("controller gain xi must be positive");
  }
};

/// Current state and target on the Bloch ball; the tracking error is s - target.
struct ErrorState {
  Vec3 s;
  Vec3 target;
  Vec3 error() const { return s - target; }
};

inline double lyapunov_value(const Vec3& e, const Mat3& weight) { return e.dot(weight * e); }

/// Analytic V' = 2 e^T P (A s + sum_r u_r K_r s + g).
inline double lyapunov_rate(const ErrorState& st, const SystemModel& model, const Mat3& weight,
                            const Vec2& u) {
  return 2.0 * st.error().dot(weight * bloch_rhs(model, st.s, u));
}

/// Distance proxy to a singular value set: |e^T P K s|.
inline double singular_gap(const ErrorState& st, const Mat3& weight, const Mat3& control_matrix) {
  return std::abs(st.error().dot(weight * (control_matrix * st.s)));
}

/// Evaluate the active mode's feedback law (u1, u2) at time t.
/// Throws SingularDenominator when |e^T P K_den s| falls below the hard
/// guard; a correctly configured switching policy switches away first.
inline Vec2 control_input(const ErrorState& st, const SystemModel& model,
                          const ControllerSpec& ctrl, Mode mode, double t) {
  const Vec3 e = st.error();
  const Vec3 pe = ctrl.weight * e;

  double numerator = pe.dot(model.drift * st.s) + pe.dot(model.offset);
  if (ctrl.family == ControlFamily::Contractive)
    numerator += -ctrl.gamma.value(t) * lyapunov_value(e, ctrl.weight) + ctrl.theta_hat;

  const int fc = fractional_channel(ctrl.family, mode);
  const int bc = 1 - fc;
  const double denominator = pe.dot(model.control[fc] * st.s);
  if (std::abs(denominator) <= kSingularGuard)
    throw SingularDenominator("fractional law denominator |e^T P K_" + std::to_string(fc + 1) +
                              " s| = " + std::to_string(std::abs(denominator)) +
                              " at t = " + std::to_string(t));

  Vec2 u;
  u[fc] = numerator / (-denominator);
  u[bc] = -ctrl.gain * sign0(pe.dot(model.control[bc] * st.s));
  return u;
}

}  // namespace qswitch
