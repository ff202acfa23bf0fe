#include "test_support.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <complex>

#include "mbmard/errors.hpp"
#include "mbmard/mixture_model.hpp"

using namespace mbmard;

namespace {

constexpr double kPi = 3.14159265358979323846;

template <class F>
double simpson_half(F&& f, int levels = 15) {
  const int panels = 1 << levels;
  const double h = 0.5 / panels;
  double sum = f(0.0) + f(0.5);
  for (int i = 1; i < panels; ++i) sum += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return sum * h / 3.0;
}

// Brute-force PDC over the joint (Z, X) system, built exactly as the block
// recursion reads: Z follows its diagonal AR(2) lags, X copies Lambda times
// the same lags (plus its own innovations), nothing feeds back. Abar(w) =
// I - A1 e^{-i 2 pi w} - A2 e^{-i 4 pi w}, and PDC is the column-normalized
// entry magnitude. Row/column order: the k latents first, then n channels.
Eigen::MatrixXd pdc_block_oracle(const MixtureModel& m, double omega) {
  const int n = m.channels();
  const int k = m.components();
  const int d = n + k;
  Eigen::MatrixXd a1 = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd a2 = Eigen::MatrixXd::Zero(d, d);
  for (int j = 0; j < k; ++j) {
    const Ar2Coeffs c = ar2_coeffs(m.kernels[static_cast<std::size_t>(j)]);
    a1(j, j) = c.phi1;
    a2(j, j) = c.phi2;
    for (int i = 0; i < n; ++i) {
      a1(k + i, j) = m.weights(i, j) * c.phi1;
      a2(k + i, j) = m.weights(i, j) * c.phi2;
    }
  }
  const std::complex<double> z1 = std::polar(1.0, -2.0 * kPi * omega);
  const std::complex<double> z2 = z1 * z1;
  Eigen::MatrixXcd abar = Eigen::MatrixXcd::Identity(d, d);
  abar -= a1.cast<std::complex<double>>() * z1;
  abar -= a2.cast<std::complex<double>>() * z2;
  Eigen::MatrixXd out(d, d);
  for (int j = 0; j < d; ++j) {
    const double norm = abar.col(j).norm();
    for (int i = 0; i < d; ++i) out(i, j) = std::abs(abar(i, j)) / norm;
  }
  return out;
}

}  // namespace

TEST_CASE("spectral matrix sums the weighted kernels entrywise") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const MixtureModel m = testkit::random_model(rng, 4, 3);
    for (double w : {0.0, 0.08, 0.25, 0.41, 0.5}) {
      const SpectralMatrix s = spectral_matrix(m, w);
      CHECK(s.freq == w);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          double expected = a == b ? m.noise_var : 0.0;
          for (int j = 0; j < 3; ++j)
            expected +=
                m.weights(a, j) * m.weights(b, j) * kernel_density(m.kernels[std::size_t(j)], w);
          CHECK(s.values(a, b).real() == doctest::Approx(expected).epsilon(1e-12));
          CHECK(s.values(a, b).imag() == 0.0);
          // Entry accessor and the matrix product may round differently.
          CHECK(std::abs(s.values(a, b) - cross_spectrum(m, a, b, w)) <=
                1e-13 * (1.0 + std::abs(expected)));
        }
      const Eigen::MatrixXd real = spectral_matrix_real(m, w);
      CHECK((real - s.values.real()).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("spectral matrices are Hermitian positive definite") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const MixtureModel m = testkit::random_model(rng, 5, 4);
    for (double w : {0.01, 0.2, 0.37, 0.5}) {
      const SpectralMatrix s = spectral_matrix(m, w);
      CHECK((s.values - s.values.adjoint()).cwiseAbs().maxCoeff() < 1e-14);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(s.values);
      // Lambda diag(g) Lambda^T is positive semidefinite, so the noise floor
      // bounds every eigenvalue from below.
      CHECK(eig.eigenvalues().minCoeff() >= m.noise_var - 1e-12);
    }
  }
}

TEST_CASE("latent-to-signal PDC matches the block-matrix construction") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + rng.integer(5);
    const int k = 1 + rng.integer(4);
    const MixtureModel m = testkit::random_model(rng, n, k);
    for (double w : {0.03, 0.19, 0.33, 0.47}) {
      const Eigen::MatrixXd oracle = pdc_block_oracle(m, w);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
          CHECK(std::abs(pdc_latent_to_signal(m, i, j, w) - oracle(k + i, j)) < 1e-12);
      // Channel-to-channel columns of the block construction are exactly the
      // identity pattern.
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          CHECK(oracle(k + a, k + b) == (a == b ? 1.0 : 0.0));
          CHECK(pdc_signal_to_signal(m, a, b, w) == (a == b ? 1.0 : 0.0));
        }
    }
  }
}

TEST_CASE("PDC columns normalize to one including the latent self-term") {
  Rng rng(13);
  const MixtureModel m = testkit::random_model(rng, 6, 3);
  for (double w : {0.05, 0.18, 0.31, 0.44}) {
    for (int j = 0; j < 3; ++j) {
      const std::complex<double> phi = transfer_poly(m, j, w);
      double denom = std::norm(1.0 - phi);
      for (int i = 0; i < 6; ++i) denom += m.weights(i, j) * m.weights(i, j) * std::norm(phi);
      double total = std::norm(1.0 - phi) / denom;
      for (int i = 0; i < 6; ++i) {
        const double p = pdc_latent_to_signal(m, i, j, w);
        total += p * p;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("transfer polynomial is consistent with the kernel density") {
  // den(w) of the closed-form density is (1 + e^{-2L}) |1 - Phi(w)|^2, so
  // |1 - Phi|^2 g is flat in w for every kernel.
  Rng rng(17);
  const MixtureModel m = testkit::random_model(rng, 2, 3);
  for (int j = 0; j < 3; ++j) {
    const double ref = std::norm(1.0 - transfer_poly(m, j, 0.11)) *
                       kernel_density(m.kernels[std::size_t(j)], 0.11);
    for (double w : {0.02, 0.23, 0.35, 0.49}) {
      const double val = std::norm(1.0 - transfer_poly(m, j, w)) *
                         kernel_density(m.kernels[std::size_t(j)], w);
      CHECK(val == doctest::Approx(ref).epsilon(1e-10));
    }
  }
}

TEST_CASE("coherence is bounded, symmetric, one on the diagonal") {
  Rng rng(21);
  const MixtureModel m = testkit::random_model(rng, 5, 3);
  for (double w : {0.04, 0.22, 0.38}) {
    for (int a = 0; a < 5; ++a) {
      CHECK(coherence(m, a, a, w) == doctest::Approx(1.0).epsilon(1e-12));
      for (int b = 0; b < 5; ++b) {
        const double c = coherence(m, a, b, w);
        CHECK(c >= 0.0);
        CHECK(c <= 1.0 + 1e-12);
        CHECK(c == doctest::Approx(coherence(m, b, a, w)).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("a single noiseless oscillation is perfectly coherent") {
  MixtureModel m;
  m.kernels.push_back(Ar2Kernel{0.2, 0.4});
  m.weights.resize(3, 1);
  m.weights << 1.0, 1.0, 1.0;
  m.noise_var = 0.0;
  validate(m);
  for (double w : {0.1, 0.2, 0.45}) {
    CHECK(coherence(m, 0, 2, w) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(coherence(m, 1, 2, w) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("autocovariance blocks match quadrature of the spectral matrix") {
  Rng rng(25);
  const int n = 3, k = 2;
  const MixtureModel m = testkit::random_model(rng, n, k);
  for (int lag : {0, 1, 4}) {
    const BlockCovariance cov = autocovariance(m, lag);
    REQUIRE(cov.blocks.rows() == n + k);
    // X-by-X block: integral of the observed spectrum against cos(2 pi w h).
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        const double integral = simpson_half([&](double w) {
          return spectral_matrix_real(m, w)(a, b) * std::cos(2.0 * kPi * w * lag);
        });
        CHECK(std::abs(cov.blocks(k + a, k + b) - integral) < 1e-8);
      }
    // Z-by-Z block: diagonal unit-variance AR(2) autocovariances.
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v) {
        const double expected =
            u == v ? kernel_autocov(m.kernels[std::size_t(u)], lag) : 0.0;
        CHECK(cov.blocks(u, v) == doctest::Approx(expected).epsilon(1e-12));
      }
    // Cross block: Sigma_ZZ(h) Lambda^T above, Lambda Sigma_ZZ(h) below.
    for (int u = 0; u < k; ++u)
      for (int a = 0; a < n; ++a) {
        const double expected =
            kernel_autocov(m.kernels[std::size_t(u)], lag) * m.weights(a, u);
        CHECK(cov.blocks(u, k + a) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(cov.blocks(k + a, u) == doctest::Approx(expected).epsilon(1e-12));
      }
  }
}

TEST_CASE("canonicalize sorts kernels without changing the spectrum") {
  MixtureModel m;
  m.kernels = {Ar2Kernel{0.4, 0.3}, Ar2Kernel{0.1, 0.8}, Ar2Kernel{0.25, 0.2}};
  m.weights.resize(2, 3);
  m.weights << 0.6, 0.8, 0.0, 0.0, 0.6, 0.8;
  m.noise_var = 0.05;
  validate(m);
  const Eigen::MatrixXd before = spectral_matrix_real(m, 0.17);
  canonicalize(m);
  CHECK(m.kernels[0].psi == 0.1);
  CHECK(m.kernels[1].psi == 0.25);
  CHECK(m.kernels[2].psi == 0.4);
  CHECK(m.weights(0, 2) == 0.6);  // column followed its kernel
  const Eigen::MatrixXd after = spectral_matrix_real(m, 0.17);
  CHECK((before - after).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("validate rejects broken models") {
  Rng rng(29);
  MixtureModel good = testkit::random_model(rng, 3, 2);
  validate(good);

  MixtureModel m = good;
  m.kernels.clear();
  CHECK_THROWS_AS(validate(m), std::invalid_argument);

  m = good;
  m.weights.resize(3, 3);
  CHECK_THROWS_AS(validate(m), std::invalid_argument);

  m = good;
  m.noise_var = -0.1;
  CHECK_THROWS_AS(validate(m), std::invalid_argument);

  m = good;
  m.kernels[0].psi = 0.7;
  CHECK_THROWS_AS(validate(m), std::invalid_argument);

  m = good;
  m.weights(0, 0) += 0.25;
  CHECK_THROWS_AS(validate(m), std::invalid_argument);
}

TEST_CASE("index range errors") {
  Rng rng(31);
  const MixtureModel m = testkit::random_model(rng, 3, 2);
  CHECK_THROWS_AS(cross_spectrum(m, 3, 0, 0.2), std::out_of_range);
  CHECK_THROWS_AS(coherence(m, 0, -1, 0.2), std::out_of_range);
  CHECK_THROWS_AS(pdc_latent_to_signal(m, 0, 2, 0.2), std::out_of_range);
  CHECK_THROWS_AS(transfer_poly(m, 5, 0.2), std::out_of_range);
}

TEST_CASE("JSON round trip is bitwise") {
  Rng rng(37);
  for (int trial = 0; trial < 5; ++trial) {
    MixtureModel m = testkit::random_model(rng, 4, 3);
    canonicalize(m);
    const MixtureModel back = model_from_json(to_json(m));
    for (int j = 0; j < 3; ++j) {
      CHECK(back.kernels[std::size_t(j)].psi == m.kernels[std::size_t(j)].psi);
      CHECK(back.kernels[std::size_t(j)].log_mod == m.kernels[std::size_t(j)].log_mod);
    }
    CHECK(back.noise_var == m.noise_var);
    CHECK((back.weights - m.weights).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("model JSON errors are data errors") {
  CHECK_THROWS_AS(model_from_json("not json at all {"), DataError);
  CHECK_THROWS_AS(model_from_json("{\"k\": 1}"), DataError);
  CHECK_THROWS_AS(model_from_json("[1, 2, 3]"), DataError);
}
