#pragma once
// Finite-time stability (FTS) and finite-time contractive stability (FTCS)
// certificates as arithmetic checks, plus trajectory-level verifiers of the
// two defining error bounds.
//
// Norm conventions: c1 and c2 bound the squared error norm e^T e, while
// b1 and eta bound the plain norm |e|.

#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "qswitch/controller.hpp"
#include "qswitch/errors.hpp"
#include "qswitch/switching.hpp"

namespace qswitch {

struct FtsCertificate {
  Mat3 weight_p = Mat3::Identity();  // P, shared with the controller
  Mat3 weight_w = Mat3::Identity();  // W
  double alpha = 0.1;
  double c1 = 1.0;  // bound on |e(0)|^2
  double c2 = 4.0;  // bound on |e(t)|^2
  double t_final = 1.0;
  double zeta = 1.0;  // average dwell time supplied for the check

  void validate() const {
    const auto spd = [](const Mat3& m, const std::string& name) {
      if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw BadWeightMatrix(name + " is not symmetric");
      Eigen::SelfAdjointEigenSolver<Mat3> es(m);
      if (!(es.eigenvalues().minCoeff() > 0.0))
        throw BadWeightMatrix(name + " is not positive definite");
    };
    spd(weight_p, "P");
    spd(weight_w, "W");
    if (!(alpha > 0.0) || !(c1 > 0.0) || !(c2 > 0.0) || !(t_final > 0.0) || !(zeta > 0.0))
      throw DomainError("FTS certificate constants must be positive");
  }
};

struct FtsDerived {
  double lambda1 = 0.0;  // lambda_max(P)
  double lambda2 = 0.0;  // lambda_min(P)
  double lambda3 = 0.0;  // lambda_min(W)
  double mu = 1.0;       // lambda1 / lambda2
  double d = 0.0;        // g^T g * T_f
};

struct ConditionResult {
  bool applicable = true;
  bool pass = false;
  double bound = 0.0;
  double margin = 0.0;
};

struct FtsReport {
  FtsDerived derived;
  ConditionResult horizon;  // T_f <= -(1/alpha) ln((l1 c1 + d l3)/(c2 l2))
  ConditionResult dwell;    // zeta > T_f ln(mu) / (ln(l2 c2) - ln(l1 c1 + d l3) - alpha T_f)

  bool pass() const { return horizon.pass && (!dwell.applicable || dwell.pass); }
};

inline FtsReport check_fts(const FtsCertificate& cert, const Vec3& g) {
  cert.validate();
  FtsReport rep;
  Eigen::SelfAdjointEigenSolver<Mat3> ep(cert.weight_p);
  Eigen::SelfAdjointEigenSolver<Mat3> ew(cert.weight_w);
  rep.derived.lambda1 = ep.eigenvalues().maxCoeff();
  rep.derived.lambda2 = ep.eigenvalues().minCoeff();
  rep.derived.lambda3 = ew.eigenvalues().minCoeff();
  rep.derived.mu = rep.derived.lambda1 / rep.derived.lambda2;
  rep.derived.d = g.dot(g) * cert.t_final;

  const double num = rep.derived.lambda1 * cert.c1 + rep.derived.d * rep.derived.lambda3;
  const double den = cert.c2 * rep.derived.lambda2;
  if (!(num > 0.0) || !(den > 0.0)) throw DomainError("log argument must be positive");
  rep.horizon.bound = -std::log(num / den) / cert.alpha;
  rep.horizon.margin = rep.horizon.bound - cert.t_final;
  rep.horizon.pass = cert.t_final <= rep.horizon.bound;

  if (rep.derived.mu > 1.0) {
    rep.dwell.applicable = true;
    const double log_gap = std::log(rep.derived.lambda2 * cert.c2) - std::log(num) -
                           cert.alpha * cert.t_final;
    if (log_gap <= 0.0) {
      rep.dwell.pass = false;
      rep.dwell.bound = std::numeric_limits<double>::infinity();
      rep.dwell.margin = -std::numeric_limits<double>::infinity();
    } else {
      rep.dwell.bound = cert.t_final * std::log(rep.derived.mu) / log_gap;
      rep.dwell.margin = cert.zeta - rep.dwell.bound;
      rep.dwell.pass = cert.zeta > rep.dwell.bound;
    }
  } else {
    rep.dwell.applicable = false;
    rep.dwell.pass = true;
    rep.dwell.bound = 0.0;
    rep.dwell.margin = std::numeric_limits<double>::infinity();
  }
  return rep;
}

/// Class-K comparison function of the supported quadratic form coeff * x^2.
struct QuadraticComparison {
  double coeff = 1.0;
  double operator()(double x) const { return coeff * x * x; }
};

struct FtcsCertificate {
  GammaSchedule gamma;   // Gamma(t) < 0 over [0, t_final]
  double theta_hat = 0.0;
  QuadraticComparison alpha1{1.0};
  QuadraticComparison alpha2{1.0};
  double b1 = 1.0;      // bound on |e(0)|
  double eta = 0.5;     // claimed terminal error radius, < b1
  double varrho = 0.5;  // window parameter, in (0, t_final)
  double t_final = 1.0;

  void validate() const {
    if (!(alpha1.coeff > 0.0) || !(alpha2.coeff > 0.0) || !(alpha1.coeff < alpha2.coeff))
      throw DomainError("comparison functions need 0 < alpha1 < alpha2");
    if (!(b1 > 0.0) || !(eta > 0.0) || !(eta < b1)) throw DomainError("need 0 < eta < b1");
    if (!(varrho > 0.0) || !(varrho < t_final)) throw DomainError("need 0 < varrho < t_final");
    if (!gamma.negative_on(0.0, t_final))
      throw DomainError("Gamma(t) must be negative over [0, t_final]");
  }
};

/// Integral of exp(-Lambda(w)) over [from, to]; closed form for constant
/// Gamma, composite Gauss-Legendre quadrature for the affine form.
inline double lambda_integral(const GammaSchedule& gamma, double from, double to) {
  if (to < from) throw DomainError("integration bounds out of order");
  if (gamma.slope == 0.0) {
    const double k = gamma.intercept;
    if (k == 0.0) return to - from;
    return (std::exp(-k * to) - std::exp(-k * from)) / (-k);
  }
  // 16 panels x 8-point Gauss-Legendre.
  static constexpr std::array<double, 4> nodes = {0.1834346424956498, 0.5255324099163290,
                                                  0.7966664774136267, 0.9602898564975363};
  static constexpr std::array<double, 4> weights = {0.3626837833783620, 0.3137066458778873,
                                                    0.2223810344533745, 0.1012285362903763};
  const int panels = 16;
  const double hp = (to - from) / panels;
  double acc = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = from + (p + 0.5) * hp;
    const double half = 0.5 * hp;
    for (int q = 0; q < 4; ++q) {
      acc += weights[q] * half *
             (std::exp(-gamma.antiderivative(mid + half * nodes[q])) +
              std::exp(-gamma.antiderivative(mid - half * nodes[q])));
    }
  }
  return acc;
}

/// Left-hand side of the FTCS condition at time t in [varrho, t_final]:
///   exp(Lambda(t)-Lambda(varrho)) alpha2(b1)
///   + theta_hat exp(Lambda(t)) int_varrho^t exp(-Lambda(w)) dw - alpha1(eta).
inline double ftcs_condition_lhs(const FtcsCertificate& cert, double t) {
  if (t < cert.varrho || t > cert.t_final)
    throw DomainError("t must lie in [varrho, t_final]");
  const double lam_t = cert.gamma.antiderivative(t);
  const double lam_r = cert.gamma.antiderivative(cert.varrho);
  return std::exp(lam_t - lam_r) * cert.alpha2(cert.b1) +
         cert.theta_hat * std::exp(lam_t) * lambda_integral(cert.gamma, cert.varrho, t) -
         cert.alpha1(cert.eta);
}

/// Terminal error radius implied by the certificate at time t:
///   sqrt((1/lambda2) [exp(Lambda(t)-Lambda(varrho)) alpha2(b1)
///                     + theta_hat exp(Lambda(t)) int_varrho^t exp(-Lambda)]).
inline double eta_bound(const FtcsCertificate& cert, double lambda2, double t) {
  if (!(lambda2 > 0.0)) throw DomainError("lambda2 must be positive");
  if (t < cert.varrho) throw DomainError("t must not precede varrho");
  const double lam_t = cert.gamma.antiderivative(t);
  const double lam_r = cert.gamma.antiderivative(cert.varrho);
  const double bracket =
      std::exp(lam_t - lam_r) * cert.alpha2(cert.b1) +
      cert.theta_hat * std::exp(lam_t) * lambda_integral(cert.gamma, cert.varrho, t);
  if (bracket < 0.0) throw DomainError("negative radicand in eta bound");
  return std::sqrt(bracket / lambda2);
}

struct FtcsReport {
  bool condition_pass = false;  // LHS <= 0 on the whole sampled window
  double worst_lhs = 0.0;
  double worst_t = 0.0;
  double holds_from = std::numeric_limits<double>::quiet_NaN();  // earliest grid time from
                                                                 // which LHS <= 0 through T_f
  double eta_bound_t_final = std::numeric_limits<double>::quiet_NaN();
};

inline FtcsReport check_ftcs(const FtcsCertificate& cert, double lambda2, int grid_points = 1000) {
  cert.validate();
  if (grid_points < 2) throw DomainError("grid needs at least two points");
  FtcsReport rep;
  rep.condition_pass = true;
  rep.worst_lhs = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid_points; ++i) {
    const double t =
        cert.varrho + (cert.t_final - cert.varrho) * static_cast<double>(i) / (grid_points - 1);
    const double lhs = ftcs_condition_lhs(cert, t);
    if (lhs > rep.worst_lhs) {
      rep.worst_lhs = lhs;
      rep.worst_t = t;
    }
    if (lhs > 0.0) {
      rep.condition_pass = false;
      rep.holds_from = std::numeric_limits<double>::quiet_NaN();
    } else if (std::isnan(rep.holds_from)) {
      rep.holds_from = t;
    }
  }
  try {
    rep.eta_bound_t_final = eta_bound(cert, lambda2, cert.t_final);
  } catch (const DomainError&) {
    rep.eta_bound_t_final = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

/// Definition-1(1) on a recorded trajectory: |e(0)|^2 < c1 and
/// |e(t)|^2 < c2 at every sample.
inline bool verify_fts_trajectory(const Trajectory& traj, const Vec3& target, double c1,
                                  double c2) {
  if (traj.samples.empty()) throw DomainError("trajectory is empty");
  const double e0_sq = (traj.samples.front().s - target).squaredNorm();
  if (!(e0_sq < c1)) return false;
  for (const auto& sample : traj.samples)
    if (!((sample.s - target).squaredNorm() < c2)) return false;
  return true;
}

enum class FtcsWindow {
  FromVarrho,  // [varrho, t_final]
  TailVarrho   // [t_final - varrho, t_final]
};

inline std::pair<double, double> ftcs_window_bounds(double varrho, double t_final,
                                                    FtcsWindow window) {
  return window == FtcsWindow::FromVarrho
             ? std::pair<double, double>{varrho, t_final}
             : std::pair<double, double>{t_final - varrho, t_final};
}

/// Largest |e(t)| over samples with t in [lo, hi].
inline double max_error_on_window(const Trajectory& traj, const Vec3& target, double lo,
                                  double hi) {
  double out = 0.0;
  for (const auto& sample : traj.samples)
    if (sample.t >= lo && sample.t <= hi)
      out = std::max(out, (sample.s - target).norm());
  return out;
}

/// Definition-1(2) on a recorded trajectory: |e(t)| < eta over the window.
inline bool verify_ftcs_trajectory(const Trajectory& traj, const Vec3& target, double eta,
                                   double varrho, double t_final,
                                   FtcsWindow window = FtcsWindow::FromVarrho) {
  if (traj.samples.empty()) throw DomainError("trajectory is empty");
  const auto [lo, hi] = ftcs_window_bounds(varrho, t_final, window);
  const double span_lo = traj.samples.front().t;
  const double span_hi = traj.samples.back().t;
  if (lo < span_lo - 1e-12 || hi > span_hi + 1e-12)
    throw WindowOutOfRange("window [" + std::to_string(lo) + ", " + std::to_string(hi) +
                           "] outside trajectory span [" + std::to_string(span_lo) + ", " +
                           std::to_string(span_hi) + "]");
  for (const auto& sample : traj.samples)
    if (sample.t >= lo && sample.t <= hi && !((sample.s - target).norm() < eta)) return false;
  return true;
}

}  // namespace qswitch
