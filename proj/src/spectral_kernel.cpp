#include "mbmard/spectral_kernel.hpp"

#include <cmath>
#include <stdexcept>

namespace mbmard {

namespace {

constexpr double kTwoPi = 6.28318530717958647692528676655900577;
// Floor applied to the squared transfer modulus before division, guarding the
// near-cancellation at omega close to 0 or 0.5 for nearly unit roots.
constexpr double kDenFloor = 1e-300;

void check_kernel(const Ar2Kernel& k) {
  if (!(k.psi > 0.0 && k.psi < 0.5))
    throw std::domain_error("Ar2Kernel: psi must lie in (0, 0.5)");
  if (!(k.log_mod > 0.0))
    throw std::domain_error("Ar2Kernel: log_mod must be positive");
}

// Leading constant of the density. Writing the raw AR(2) variance as
// gamma0 = (1 + e^{-2L}) / [(1 - e^{-2L}) ((1 + e^{-2L})^2 - 4 cos^2(2 pi psi) e^{-2L})]
// the normalized one-sided density is 2 / (gamma0 |transfer|^2), so the
// numerator below makes the [0, 0.5] integral exactly 1.
double density_numerator(const Ar2Kernel& k, double e2) {
  const double cpsi = std::cos(kTwoPi * k.psi);
  const double one_minus_e2 = -std::expm1(-2.0 * k.log_mod);
  return 2.0 * one_minus_e2 * ((1.0 + e2) * (1.0 + e2) - 4.0 * cpsi * cpsi * e2);
}

}  // namespace

Ar2Coeffs ar2_coeffs(const Ar2Kernel& k) {
  check_kernel(k);
  const double em = std::exp(-k.log_mod);
  return {2.0 * em * std::cos(kTwoPi * k.psi), -em * em};
}

Ar2Kernel ar2_kernel_from_coeffs(const Ar2Coeffs& c) {
  if (!(c.phi2 > -1.0 && c.phi2 < 0.0))
    throw std::domain_error("Ar2Coeffs: phi2 must lie in (-1, 0)");
  const double log_mod = -0.5 * std::log(-c.phi2);
  const double arg = 0.5 * c.phi1 * std::exp(log_mod);
  if (!(arg > -1.0 && arg < 1.0))
    throw std::domain_error("Ar2Coeffs: roots are not a complex pair with psi in (0, 0.5)");
  return {std::acos(arg) / kTwoPi, log_mod};
}

double kernel_density(const Ar2Kernel& k, double omega) {
  check_kernel(k);
  if (!(omega >= 0.0 && omega <= 0.5))
    throw std::domain_error("kernel_density: omega outside [0, 0.5]");
  const Ar2Coeffs c = ar2_coeffs(k);
  const double e2 = std::exp(-2.0 * k.log_mod);
  const double num = density_numerator(k, e2);
  // |1 - phi1 e^{-i 2 pi w} - phi2 e^{-i 4 pi w}|^2 by real/imaginary parts;
  // the explicit expansion avoids cancellation near the interval ends.
  const double c1 = std::cos(kTwoPi * omega), s1 = std::sin(kTwoPi * omega);
  const double c2 = std::cos(2.0 * kTwoPi * omega), s2 = std::sin(2.0 * kTwoPi * omega);
  const double re = 1.0 - c.phi1 * c1 - c.phi2 * c2;
  const double im = c.phi1 * s1 + c.phi2 * s2;
  double den = (1.0 + e2) * (re * re + im * im);
  if (den < kDenFloor) den = kDenFloor;
  return num / den;
}

Eigen::ArrayXd kernel_density(const Ar2Kernel& k, const Eigen::ArrayXd& omega) {
  check_kernel(k);
  if (omega.size() > 0 && !(omega.minCoeff() >= 0.0 && omega.maxCoeff() <= 0.5))
    throw std::domain_error("kernel_density: omega outside [0, 0.5]");
  Eigen::ArrayXd out(omega.size());
  const Eigen::ArrayXd a1 = kTwoPi * omega;
  kernel_density_tabled(k, a1.cos(), a1.sin(), (2.0 * a1).cos(), (2.0 * a1).sin(), out);
  return out;
}

void kernel_density_tabled(const Ar2Kernel& k, const Eigen::ArrayXd& c1,
                           const Eigen::ArrayXd& s1, const Eigen::ArrayXd& c2,
                           const Eigen::ArrayXd& s2, Eigen::Ref<Eigen::ArrayXd> out) {
  const Ar2Coeffs c = ar2_coeffs(k);
  const double e2 = std::exp(-2.0 * k.log_mod);
  const double num = density_numerator(k, e2);
  const double scale = 1.0 + e2;
  out = 1.0 - c.phi1 * c1 - c.phi2 * c2;
  out = out.square() + (c.phi1 * s1 + c.phi2 * s2).square();
  out = num / (scale * out).max(kDenFloor);
}

double kernel_autocov(const Ar2Kernel& k, int lag) {
  if (lag < 0) throw std::domain_error("kernel_autocov: negative lag");
  const Ar2Coeffs c = ar2_coeffs(k);
  if (lag == 0) return 1.0;
  double prev = 1.0;
  double cur = c.phi1 / (1.0 - c.phi2);
  for (int h = 2; h <= lag; ++h) {
    const double next = c.phi1 * cur + c.phi2 * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

}  // namespace mbmard
