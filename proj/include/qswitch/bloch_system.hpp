#pragma once
// Assembly of the affine Bloch-vector control system
//     s' = A s + sum_r u_r K_r s + g
// from Hamiltonian/Lindblad data, and the density-matrix master-equation
// right-hand side used as an independent oracle for it.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "qswitch/errors.hpp"
#include "qswitch/pauli.hpp"

namespace qswitch {

struct DecoherenceChannel {
  Matrix2c op;  // Lindblad operator L_j
  double rate;  // gamma_j, must be positive
};

/// Free + control Hamiltonians (hbar = 1) and damping channels.
/// Exactly two control channels: the switching logic is defined over a
/// mode pair.
struct OpenSystemSpec {
  Matrix2c free_hamiltonian = Matrix2c::Zero();
  std::array<Matrix2c, 2> control_hamiltonians = {Matrix2c::Zero(), Matrix2c::Zero()};
  std::vector<DecoherenceChannel> channels;

  void validate() const {
    const auto check_hermitian = [](const Matrix2c& h, const std::string& name) {
      if ((h - h.adjoint()).cwiseAbs().maxCoeff() > kHermitianTol)
        throw NonHermitianInput(name + " is not Hermitian within 1e-12");
    };
    check_hermitian(free_hamiltonian, "free Hamiltonian");
    check_hermitian(control_hamiltonians[0], "control Hamiltonian 1");
    check_hermitian(control_hamiltonians[1], "control Hamiltonian 2");
    for (std::size_t j = 0; j < channels.size(); ++j) {
      if (!(channels[j].rate > 0.0))
        throw NonPositiveRate("damping rate of channel " + std::to_string(j + 1) +
                              " must be positive");
    }
  }
};

/// Real affine control system on the Bloch ball.
struct SystemModel {
  Mat3 drift = Mat3::Zero();                            // A
  std::array<Mat3, 2> control = {Mat3::Zero(), Mat3::Zero()};  // K_1, K_2
  Vec3 offset = Vec3::Zero();                           // g
};

inline SystemModel build_system(const OpenSystemSpec& spec) {
  spec.validate();

  const Vector3c h0 = pauli_coefficients(spec.free_hamiltonian).sigma;
  std::array<Vector3c, 2> hr;
  for (int r = 0; r < 2; ++r) hr[r] = pauli_coefficients(spec.control_hamiltonians[r]).sigma;

  struct ChannelCoeff {
    Vector3c beta;
    double rate;
  };
  std::vector<ChannelCoeff> ch;
  ch.reserve(spec.channels.size());
  for (const auto& c : spec.channels)
    ch.push_back({pauli_coefficients(c.op).sigma, c.rate});

  SystemModel model;
  for (int l = 1; l <= 3; ++l) {
    for (int m = 1; m <= 3; ++m) {
      if (l == m) {
        double acc = 0.0;
        for (const auto& c : ch)
          for (int p = 1; p <= 3; ++p)
            if (p != l) acc += c.rate * std::norm(c.beta[p - 1]);
        model.drift(l - 1, l - 1) = -2.0 * acc;
      } else {
        double acc = 0.0;
        for (int p = 1; p <= 3; ++p) acc += 2.0 * h0[p - 1].real() * levi_civita(p, m, l);
        for (const auto& c : ch)
          acc += c.rate * 2.0 * (c.beta[l - 1] * std::conj(c.beta[m - 1])).real();
        model.drift(l - 1, m - 1) = acc;
      }
      for (int r = 0; r < 2; ++r) {
        double k = 0.0;
        if (l != m)
          for (int p = 1; p <= 3; ++p) k += 2.0 * hr[r][p - 1].real() * levi_civita(p, m, l);
        model.control[r](l - 1, m - 1) = k;
      }
    }
  }

  for (int l = 1; l <= 3; ++l) {
    Complex acc(0.0, 0.0);
    for (const auto& c : ch)
      for (int m = 1; m <= 3; ++m)
        for (int p = 1; p <= 3; ++p)
          acc += c.rate * c.beta[m - 1] * std::conj(c.beta[p - 1]) * levi_civita(m, p, l);
    const Complex gl = Complex(0.0, 2.0) * acc;
    if (std::abs(gl.imag()) > 1e-12)
      throw DomainError("offset vector g acquired an imaginary residue of " +
                        std::to_string(gl.imag()));
    model.offset[l - 1] = gl.real();
  }
  return model;
}

inline Vec3 bloch_rhs(const SystemModel& model, const Vec3& s, const Vec2& u) {
  return model.drift * s + u[0] * (model.control[0] * s) + u[1] * (model.control[1] * s) +
         model.offset;
}

/// Master-equation right-hand side on a raw 2x2 matrix:
///   -i[H0 + sum_r u_r H_r, rho] + sum_j gamma_j D_{L_j}[rho].
inline Matrix2c master_equation_rhs(const OpenSystemSpec& spec, const Matrix2c& rho,
                                    const Vec2& u) {
  const Complex i(0.0, 1.0);
  const Matrix2c h = spec.free_hamiltonian + u[0] * spec.control_hamiltonians[0] +
                     u[1] * spec.control_hamiltonians[1];
  Matrix2c out = -i * (h * rho - rho * h);
  for (const auto& c : spec.channels) {
    const Matrix2c ld = c.op.adjoint();
    const Matrix2c ll = ld * c.op;
    out += c.rate * (c.op * rho * ld - 0.5 * (ll * rho + rho * ll));
  }
  return out;
}

inline Matrix2c lindblad_rhs(const OpenSystemSpec& spec, const DensityMatrix& rho, const Vec2& u) {
  spec.validate();
  return master_equation_rhs(spec, rho.matrix(), u);
}

}  // namespace qswitch
