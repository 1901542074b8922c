#pragma once
// Single-qubit Pauli algebra: density-matrix <-> Bloch-vector conversion,
// Pauli-basis expansion of 2x2 operators, and state functionals.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <string>

#include "qswitch/errors.hpp"

namespace qswitch {

using Complex = std::complex<double>;
using Matrix2c = Eigen::Matrix2cd;
using Vector3c = Eigen::Vector3cd;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kHermitianTol = 1e-12;
inline constexpr double kTraceTol = 1e-12;
inline constexpr double kPsdTol = 1e-12;
inline constexpr double kBlochBallTol = 1e-9;

namespace detail {
inline Matrix2c make_sigma(int v) {
  const Complex i(0.0, 1.0);
  Matrix2c m;
  if (v == 1) {
    m << 0, 1, 1, 0;
  } else if (v == 2) {
    m << 0, -i, i, 0;
  } else {
    m << 1, 0, 0, -1;
  }
  return m;
}
}  // namespace detail

inline const Matrix2c& identity2() {
  static const Matrix2c m = Matrix2c::Identity();
  return m;
}

/// Pauli matrix sigma_v, v in {1,2,3}.
inline const Matrix2c& sigma(int v) {
  static const std::array<Matrix2c, 3> s = {detail::make_sigma(1), detail::make_sigma(2),
                                            detail::make_sigma(3)};
  return s[static_cast<std::size_t>(v - 1)];
}

/// Completely antisymmetric structure constant of su(2), indices in {1,2,3}.
constexpr double levi_civita(int m, int n, int l) {
  if (m == n || n == l || m == l) return 0.0;
  if ((m == 1 && n == 2 && l == 3) || (m == 2 && n == 3 && l == 1) || (m == 3 && n == 1 && l == 2))
    return 1.0;
  return -1.0;
}

constexpr double kronecker(int m, int n) { return m == n ? 1.0 : 0.0; }

/// 2x2 Hermitian, unit-trace, positive-semidefinite quantum state.
class DensityMatrix {
 public:
  DensityMatrix() : m_(0.5 * Matrix2c::Identity()) {}

  explicit DensityMatrix(const Matrix2c& m) : m_(m) {
    std::string why;
    if (!is_physical(m, &why)) throw NonPhysicalState("density matrix rejected: " + why);
  }

  const Matrix2c& matrix() const { return m_; }

  static bool is_physical(const Matrix2c& m, std::string* why = nullptr) {
    const auto reject = [&](const std::string& msg) {
      if (why) *why = msg;
      return false;
    };
    if (std::abs(m(1, 0) - std::conj(m(0, 1))) > kHermitianTol ||
        std::abs(m(0, 0).imag()) > kHermitianTol || std::abs(m(1, 1).imag()) > kHermitianTol)
      return reject("not Hermitian within 1e-12");
    if (std::abs(m.trace().real() - 1.0) > kTraceTol) return reject("trace differs from 1 beyond 1e-12");
    // With unit trace, positive semidefiniteness reduces to det >= 0.
    if (m.determinant().real() < -kPsdTol) return reject("negative eigenvalue beyond 1e-12");
    if (why) why->clear();
    return true;
  }

 private:
  struct Unchecked {};
  DensityMatrix(const Matrix2c& m, Unchecked) : m_(m) {}
  friend DensityMatrix bloch_to_density(const Vec3& s);

  Matrix2c m_;
};

/// Pauli-basis coefficients of a 2x2 operator under the half-trace
/// convention: M = identity * I_2 + sum_v sigma_v_coeff * sigma_v.
struct PauliCoefficients {
  Complex identity;  // (1/2) tr(M)
  Vector3c sigma;    // (1/2) tr(M sigma_v)
};

inline PauliCoefficients pauli_coefficients(const Matrix2c& m) {
  PauliCoefficients out;
  out.identity = 0.5 * m.trace();
  for (int v = 1; v <= 3; ++v) out.sigma[v - 1] = 0.5 * (m * sigma(v)).trace();
  return out;
}

inline Matrix2c pauli_reconstruct(const PauliCoefficients& c) {
  Matrix2c m = c.identity * Matrix2c::Identity();
  for (int v = 1; v <= 3; ++v) m += c.sigma[v - 1] * sigma(v);
  return m;
}

/// Componentwise tr(M sigma_v) for an operator expected to have real Pauli
/// projections (Hermitian input); throws if an imaginary residue survives.
inline Vec3 pauli_vector(const Matrix2c& m) {
  Vec3 out;
  for (int v = 1; v <= 3; ++v) {
    const Complex c = (m * sigma(v)).trace();
    if (std::abs(c.imag()) >= 1e-12)
      throw NonPhysicalState("tr(M sigma_" + std::to_string(v) + ") has imaginary residue " +
                             std::to_string(c.imag()));
    out[v - 1] = c.real();
  }
  return out;
}

inline Vec3 density_to_bloch(const DensityMatrix& rho) { return pauli_vector(rho.matrix()); }

inline DensityMatrix bloch_to_density(const Vec3& s) {
  if (s.norm() > 1.0 + kBlochBallTol)
    throw NonPhysicalState("Bloch vector leaves the unit ball: |s| = " + std::to_string(s.norm()));
  Matrix2c m = 0.5 * Matrix2c::Identity();
  for (int v = 1; v <= 3; ++v) m += 0.5 * s[v - 1] * sigma(v);
  return DensityMatrix(m, DensityMatrix::Unchecked{});
}

/// Uhlmann fidelity, qubit closed form: tr(rho sigma) + 2 sqrt(det rho det sigma).
inline double fidelity(const DensityMatrix& a, const DensityMatrix& b) {
  const double overlap = (a.matrix() * b.matrix()).trace().real();
  const double da = std::max(0.0, a.matrix().determinant().real());
  const double db = std::max(0.0, b.matrix().determinant().real());
  return std::clamp(overlap + 2.0 * std::sqrt(da * db), 0.0, 1.0);
}

/// tr(rho^2); 1/2 for the maximally mixed state, 1 for pure states.
inline double purity(const DensityMatrix& rho) {
  return std::clamp((rho.matrix() * rho.matrix()).trace().real(), 0.0, 1.0);
}

}  // namespace qswitch
