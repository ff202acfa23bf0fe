#pragma once
// Closed-form math of a single latent AR(2) oscillation.

#include <Eigen/Core>

namespace mbmard {

// One latent oscillation: spectral peak location psi in cycles/sample and
// log root modulus L = log(M) > 0. Small L means roots close to the unit
// circle, i.e. a sharp, nearly periodic peak at psi.
struct Ar2Kernel {
  double psi = 0.25;
  double log_mod = 0.5;
};

// Lag coefficients of the same oscillation: x_t = phi1 x_{t-1} + phi2 x_{t-2} + e_t.
struct Ar2Coeffs {
  double phi1 = 0.0;
  double phi2 = 0.0;
};

// phi1 = 2 e^{-L} cos(2 pi psi), phi2 = -e^{-2L}.
// Throws std::domain_error unless 0 < psi < 0.5 and L > 0.
Ar2Coeffs ar2_coeffs(const Ar2Kernel& k);

// Inverse of ar2_coeffs. Throws std::domain_error if (phi1, phi2) is outside
// the complex-root stationary region this family covers.
Ar2Kernel ar2_kernel_from_coeffs(const Ar2Coeffs& c);

// Normalized one-sided AR(2) spectral density: g >= 0 and the integral of g
// over [0, 0.5] is exactly 1, so g is the spectrum of the unit-variance
// oscillation. Throws std::domain_error for omega outside [0, 0.5].
double kernel_density(const Ar2Kernel& k, double omega);

// Grid evaluation of kernel_density.
Eigen::ArrayXd kernel_density(const Ar2Kernel& k, const Eigen::ArrayXd& omega);

// Same density evaluated from precomputed cos/sin tables
// (c1 = cos(2 pi w), s1 = sin(2 pi w), c2 = cos(4 pi w), s2 = sin(4 pi w)).
// This is the hot path of the Whittle evaluator; one formula, two entry points.
void kernel_density_tabled(const Ar2Kernel& k, const Eigen::ArrayXd& c1,
                           const Eigen::ArrayXd& s1, const Eigen::ArrayXd& c2,
                           const Eigen::ArrayXd& s2, Eigen::Ref<Eigen::ArrayXd> out);

// Autocovariance gamma(h) of the unit-variance oscillation; gamma(0) = 1,
// gamma(1) = phi1/(1 - phi2), then the Yule-Walker recursion.
double kernel_autocov(const Ar2Kernel& k, int lag);

}  // namespace mbmard
