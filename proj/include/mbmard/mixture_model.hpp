#pragma once
// The full observation model X(t) = Lambda Z(t) + q(t): K latent AR(2)
// oscillations mixed into n channels plus white channel noise, and its
// derived quantities (spectral matrix, autocovariance, coherence, PDC).

#include <Eigen/Core>
#include <complex>
#include <string>
#include <vector>

#include "mbmard/spectral_kernel.hpp"

namespace mbmard {

// noise_var is the flat one-sided spectral level of q on [0, 0.5], not the
// time-domain variance: noise with variance s2 has level 2*s2, and the lag-0
// autocovariance contribution is noise_var / 2. The serialized schema stores
// the same convention.
struct MixtureModel {
  std::vector<Ar2Kernel> kernels;  // canonical order: psi ascending, ties by log_mod
  Eigen::MatrixXd weights;         // n x K; every row has sum of squares 1
  double noise_var = 0.0;

  int channels() const { return static_cast<int>(weights.rows()); }
  int components() const { return static_cast<int>(weights.cols()); }
};

// Sorts kernels by (psi, log_mod) and permutes weight columns to match.
void canonicalize(MixtureModel& m);

// Throws std::invalid_argument on broken invariants: size mismatch, kernel
// domain violations, row sums of squares off unity, negative noise level.
void validate(const MixtureModel& m);

struct SpectralMatrix {
  double freq = 0.0;
  Eigen::MatrixXcd values;  // n x n Hermitian
};

// S_XX(w) = Lambda diag(g_j(w)) Lambda^T + noise_var I. Real symmetric for
// this model family; returned in complex storage to share the type with
// periodogram-style estimates.
SpectralMatrix spectral_matrix(const MixtureModel& m, double omega);
Eigen::MatrixXd spectral_matrix_real(const MixtureModel& m, double omega);

// Entry (ch_a, ch_b) of S_XX: sum_j lambda_aj lambda_bj g_j(w), plus the
// noise level when ch_a == ch_b. Real under this model.
std::complex<double> cross_spectrum(const MixtureModel& m, int ch_a, int ch_b, double omega);

// |S_ab|^2 / (S_aa S_bb), in [0, 1].
double coherence(const MixtureModel& m, int ch_a, int ch_b, double omega);

// Joint lag-h covariance of (Z, X), a (K+n) x (K+n) block matrix:
// [ Sigma_ZZ(h),          Sigma_ZZ(h) Lambda^T ]
// [ Lambda Sigma_ZZ(h),   Lambda Sigma_ZZ(h) Lambda^T + (noise_var/2) 1{h=0} I ]
struct BlockCovariance {
  int lag = 0;
  Eigen::MatrixXd blocks;
};
BlockCovariance autocovariance(const MixtureModel& m, int lag);

// Phi_j(w) = phi_{j,1} e^{-i 2 pi w} + phi_{j,2} e^{-i 4 pi w}.
std::complex<double> transfer_poly(const MixtureModel& m, int kernel, double omega);

// PDC from oscillation `kernel` to channel `channel`:
// lambda_ij |Phi_j| / sqrt(|Phi_j|^2 sum_i lambda_ij^2 + |1 - Phi_j|^2).
double pdc_latent_to_signal(const MixtureModel& m, int channel, int kernel, double omega);

// PDC between observed channels is the Kronecker delta: all cross-channel
// association flows through the shared latents.
double pdc_signal_to_signal(const MixtureModel& m, int ch_a, int ch_b, double omega);

// JSON document {k, psi[], log_mod[], lambda[n][K], noise_var}; writing
// canonicalizes, doubles round-trip bit-exactly.
std::string to_json(const MixtureModel& m);
MixtureModel model_from_json(const std::string& text);

}  // namespace mbmard
