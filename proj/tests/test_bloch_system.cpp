#include <doctest.h>

#include "helpers.hpp"
#include "qswitch/bloch_system.hpp"

using namespace qswitch;

namespace {

Mat3 amplitude_a() {
  Mat3 a;
  a << -0.05, -10, 0, 10, -0.05, 0, 0, 0, -0.1;
  return a;
}

Mat3 reference_k1() {
  Mat3 k;
  k << 0, 0, 0, 0, 0, -2, 0, 2, 0;
  return k;
}

Mat3 reference_k2() {
  Mat3 k;
  k << 0, 0, 2, 0, 0, 0, -2, 0, 0;
  return k;
}

}  // namespace

TEST_CASE("amplitude channel model matches the reference matrices") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  CHECK((model.drift - amplitude_a()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((model.offset - Vec3(0, 0, -0.1)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((model.control[0] - reference_k1()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((model.control[1] - reference_k2()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("dephasing channel model") {
  const SystemModel model = build_system(qtest::dephasing_spec());
  Mat3 expected;
  expected << -0.2, -10, 0, 10, -0.2, 0, 0, 0, 0;
  CHECK((model.drift - expected).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(model.offset.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("polarization channel model") {
  const SystemModel model = build_system(qtest::polarization_spec());
  Mat3 expected;
  expected << -0.04, -10, 0, 10, -0.04, 0, 0, 0, -0.04;
  CHECK((model.drift - expected).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(model.offset.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("builder rejects non-Hermitian and non-positive inputs") {
  OpenSystemSpec spec = qtest::amplitude_spec();
  spec.free_hamiltonian(0, 1) = Complex(0.3, 0.0);  // breaks Hermiticity
  CHECK_THROWS_AS(build_system(spec), NonHermitianInput);

  OpenSystemSpec bad_rate = qtest::amplitude_spec();
  bad_rate.channels[0].rate = 0.0;
  CHECK_THROWS_AS(build_system(bad_rate), NonPositiveRate);
  bad_rate.channels[0].rate = -0.1;
  CHECK_THROWS_AS(build_system(bad_rate), NonPositiveRate);
}

TEST_CASE("bloch_rhs pointwise examples") {
  const SystemModel model = build_system(qtest::amplitude_spec());
  CHECK((bloch_rhs(model, Vec3::Zero(), Vec2::Zero()) - Vec3(0, 0, -0.1)).cwiseAbs().maxCoeff() <=
        1e-15);

  const SystemModel dephasing = build_system(qtest::dephasing_spec());
  for (double z : {-0.9, 0.2, 1.0})
    CHECK(bloch_rhs(dephasing, Vec3(0, 0, z), Vec2::Zero()).cwiseAbs().maxCoeff() <= 1e-15);

  const Vec3 with_k1 = bloch_rhs(model, Vec3(0, 0, 1), Vec2(1.0, 0.0));
  const Vec3 without = bloch_rhs(model, Vec3(0, 0, 1), Vec2(0.0, 0.0));
  CHECK(((with_k1 - without) - Vec3(0, -2, 0)).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("ground state of the amplitude channel is a fixed point") {
  Matrix2c ground;
  ground << Complex(0, 0), Complex(0, 0), Complex(0, 0), Complex(1, 0);
  const Matrix2c rhs = lindblad_rhs(qtest::amplitude_spec(), DensityMatrix(ground), Vec2::Zero());
  CHECK(rhs.cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("lindblad_rhs is traceless and Hermitian") {
  const OpenSystemSpec spec = qtest::amplitude_spec();
  for (int i = 0; i < 1000; ++i) {
    const DensityMatrix rho = qtest::random_density_spectral();
    const Vec2 u(qtest::uniform(-10, 10), qtest::uniform(-10, 10));
    const Matrix2c d = lindblad_rhs(spec, rho, u);
    CHECK(std::abs(d.trace()) <= 1e-12);
    CHECK((d - d.adjoint()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("Bloch image of the master equation equals the Bloch system") {
  const auto check_spec = [](const OpenSystemSpec& spec, int cases) {
    const SystemModel model = build_system(spec);
    for (int i = 0; i < cases; ++i) {
      const DensityMatrix rho = qtest::random_density_spectral();
      const Vec2 u(qtest::uniform(-10, 10), qtest::uniform(-10, 10));
      const Matrix2c drho = master_equation_rhs(spec, rho.matrix(), u);
      Vec3 image;
      for (int v = 1; v <= 3; ++v) image[v - 1] = (drho * sigma(v)).trace().real();
      const Vec3 direct = bloch_rhs(model, density_to_bloch(rho), u);
      CHECK((image - direct).cwiseAbs().maxCoeff() <= 1e-10);
    }
  };
  check_spec(qtest::amplitude_spec(), 400);
  check_spec(qtest::dephasing_spec(), 300);
  check_spec(qtest::polarization_spec(), 300);
}

TEST_CASE("control matrices are antisymmetric with zero diagonal") {
  for (const auto& spec :
       {qtest::amplitude_spec(), qtest::dephasing_spec(), qtest::polarization_spec()}) {
    const SystemModel model = build_system(spec);
    for (int r = 0; r < 2; ++r) {
      CHECK((model.control[r] + model.control[r].transpose()).cwiseAbs().maxCoeff() <= 1e-12);
      for (int l = 0; l < 3; ++l) CHECK(model.control[r](l, l) == 0.0);
    }
  }
}

TEST_CASE("closed system drift is a pure rotation") {
  OpenSystemSpec spec = qtest::amplitude_spec();
  spec.channels.clear();
  const SystemModel model = build_system(spec);
  CHECK((model.drift + model.drift.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(model.offset.cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("Hermitian Lindblad operators produce no offset") {
  for (int i = 0; i < 200; ++i) {
    OpenSystemSpec spec = qtest::amplitude_spec();
    spec.channels.clear();
    const int n = 1 + static_cast<int>(qtest::uniform(0.0, 2.999));
    for (int j = 0; j < n; ++j)
      spec.channels.push_back({qtest::random_hermitian(1.5), qtest::uniform(0.01, 1.0)});
    const SystemModel model = build_system(spec);
    CHECK(model.offset.cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("drift plus its transpose is negative semidefinite for the presets") {
  for (const auto& spec :
       {qtest::amplitude_spec(), qtest::dephasing_spec(), qtest::polarization_spec()}) {
    const SystemModel model = build_system(spec);
    Eigen::SelfAdjointEigenSolver<Mat3> es(model.drift + model.drift.transpose());
    CHECK(es.eigenvalues().maxCoeff() <= 1e-12);
  }
}
