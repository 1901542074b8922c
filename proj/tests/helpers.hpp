#pragma once
// Shared generators and fixtures for the unit suites. Deterministic seeds:
// the suites must produce identical results on every run.

#include <complex>
#include <random>

#include "qswitch/bloch_system.hpp"
#include "qswitch/pauli.hpp"

namespace qtest {

using qswitch::Complex;
using qswitch::Matrix2c;
using qswitch::Vec2;
using qswitch::Vec3;

inline std::mt19937& rng() {
  static std::mt19937 gen(1234567u);
  return gen;
}

inline double uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng());
}

inline Complex random_complex(double scale = 1.0) {
  return {uniform(-scale, scale), uniform(-scale, scale)};
}

inline Matrix2c random_matrix(double scale = 1.0) {
  Matrix2c m;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) m(r, c) = random_complex(scale);
  return m;
}

inline Matrix2c random_hermitian(double scale = 1.0) {
  const Matrix2c m = random_matrix(scale);
  return 0.5 * (m + m.adjoint());
}

/// Random Bloch vector drawn uniformly from the closed unit ball.
inline Vec3 random_bloch_in_ball() {
  while (true) {
    Vec3 s(uniform(-1.0, 1.0), uniform(-1.0, 1.0), uniform(-1.0, 1.0));
    if (s.norm() <= 1.0) return s;
  }
}

/// Random physical state built from a spectral decomposition, independent of
/// the Bloch-vector conversion path.
inline qswitch::DensityMatrix random_density_spectral() {
  const double theta = uniform(0.0, M_PI);
  const double phi = uniform(0.0, 2.0 * M_PI);
  const double p = uniform(0.0, 1.0);
  Eigen::Vector2cd psi, chi;
  psi << std::cos(0.5 * theta), std::exp(Complex(0.0, phi)) * std::sin(0.5 * theta);
  chi << -std::exp(Complex(0.0, -phi)) * std::sin(0.5 * theta), std::cos(0.5 * theta);
  const Matrix2c m = p * (psi * psi.adjoint()) + (1.0 - p) * (chi * chi.adjoint());
  return qswitch::DensityMatrix(0.5 * (m + m.adjoint()));
}

/// Hermitian with unit trace but not necessarily positive semidefinite.
inline Matrix2c random_hermitian_unit_trace() {
  Matrix2c m = random_hermitian(1.0);
  const double tr = m.trace().real();
  m(0, 0) += 0.5 * (1.0 - tr);
  m(1, 1) += 0.5 * (1.0 - tr);
  return m;
}

inline qswitch::OpenSystemSpec amplitude_spec() {
  qswitch::OpenSystemSpec spec;
  spec.free_hamiltonian = 5.0 * qswitch::sigma(3);
  spec.control_hamiltonians = {qswitch::sigma(1), qswitch::sigma(2)};
  Matrix2c lower;
  lower << Complex(0, 0), Complex(0, 0), Complex(1, 0), Complex(0, 0);
  spec.channels.push_back({lower, 0.1});
  return spec;
}

inline qswitch::OpenSystemSpec dephasing_spec() {
  qswitch::OpenSystemSpec spec;
  spec.free_hamiltonian = 5.0 * qswitch::sigma(3);
  spec.control_hamiltonians = {qswitch::sigma(1), qswitch::sigma(2)};
  spec.channels.push_back({qswitch::sigma(3), 0.1});
  return spec;
}

inline qswitch::OpenSystemSpec polarization_spec() {
  qswitch::OpenSystemSpec spec;
  spec.free_hamiltonian = 5.0 * qswitch::sigma(3);
  spec.control_hamiltonians = {qswitch::sigma(1), qswitch::sigma(2)};
  spec.channels.push_back({qswitch::sigma(3), 0.01});
  spec.channels.push_back({qswitch::sigma(2), 0.01});
  spec.channels.push_back({qswitch::sigma(1), 0.01});
  return spec;
}

inline Matrix2c scenario_rho0() {
  Matrix2c m;
  m << Complex(0.8, 0.0), Complex(0.0, 0.4), Complex(0.0, -0.4), Complex(0.2, 0.0);
  return m;
}

inline Matrix2c scenario_rho_target() {
  Matrix2c m;
  m << Complex(0.1, 0.0), Complex(-0.3, 0.0), Complex(-0.3, 0.0), Complex(0.9, 0.0);
  return m;
}

inline Matrix2c reference_rho_final() {
  Matrix2c m;
  m << Complex(0.10, 0.0), Complex(-0.29, 0.03), Complex(-0.29, -0.03), Complex(0.90, 0.0);
  return m;
}

}  // namespace qtest
