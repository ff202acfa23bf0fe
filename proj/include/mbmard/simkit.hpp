#pragma once
// Simulation scenarios, their exact spectra, and the integrated-absolute-
// error evaluation harness.

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "mbmard/mixture_model.hpp"
#include "mbmard/whittle_data.hpp"

namespace mbmard {

// One latent linear process x_t = sum_j ar[j] x_{t-1-j} + e_t + sum_k ma[k] e_{t-1-k}
// with unit-variance Gaussian innovations. Either list may be empty.
struct LatentSpec {
  std::vector<double> ar;
  std::vector<double> ma;
};

struct ScenarioSpec {
  std::string name;
  std::vector<LatentSpec> latents;
  Eigen::MatrixXd mixing;  // n x K; every row has sum of squares 1
  double noise_scale = 0.1;
};

// Throws std::invalid_argument on non-stationary AR parts, mixing rows off
// unit sum of squares, or empty pieces.
void validate_scenario(const ScenarioSpec& spec);

// The two built-in seven-channel scenarios: four mixed AR(2) oscillations,
// and the harder mix of AR(12)/MA(4)/AR(1) latents none of which is an AR(2).
ScenarioSpec scenario1();
ScenarioSpec scenario2();

// JSON round-trip: {"name", "noise_scale", "latents": [{"ar", "ma"}...],
// "mixing": [[...], ...]}. Parsing validates.
ScenarioSpec scenario_from_json(const std::string& text);
std::string scenario_to_json(const ScenarioSpec& spec);

// Two-sided spectral density |theta(e^{-i2pw})|^2 / |phi(e^{-i2pw})|^2 of the
// latent at unit innovation variance.
double latent_density_raw(const LatentSpec& l, double omega);

// Lag-0 variance of the latent at unit innovation variance: Simpson
// quadrature of twice the density over [0, 0.5].
double latent_variance(const LatentSpec& l);

// Closed-form one-sided spectral matrix of a scenario whose latents are
// normalized to unit variance, as the generator emits them.
struct TrueSpectrum {
  ScenarioSpec spec;
  Eigen::VectorXd latent_var;  // pre-normalization lag-0 variances

  int channels() const { return static_cast<int>(spec.mixing.rows()); }
  // standardized = true rescales to the unit-variance series the fitter
  // sees, dividing by the channel variance 1 + noise_scale^2.
  Eigen::MatrixXcd matrix(double omega, bool standardized = false) const;
  std::vector<SpectralMatrix> grid(const Eigen::VectorXd& freqs,
                                   bool standardized = false) const;
};

TrueSpectrum true_spectrum(const ScenarioSpec& spec);

struct ScenarioData {
  MultiChannelSeries series;
  TrueSpectrum truth;
};

// Simulates the scenario: every latent runs its recursion from a zero state
// through a 1000-sample burn-in, is scaled to unit variance, mixed by the
// scenario matrix, and per-channel Gaussian noise of scale noise_scale is
// added. Latent j draws from stream j of the seed, channel i noise from
// stream 1000 + i, so output is bitwise deterministic in (spec, t_len, seed).
// t_len must be even and at least 256.
ScenarioData gen_scenario(const ScenarioSpec& spec, int t_len, std::uint64_t seed);
ScenarioData gen_scenario1(int t_len, std::uint64_t seed);
ScenarioData gen_scenario2(int t_len, std::uint64_t seed);

// Integrated absolute error: trapezoid quadrature over the shared grid of
// the entrywise modulus difference, summed over the lower triangle including
// the diagonal. Grids must match, start at 0, and end at 0.5.
double iae(const std::vector<SpectralMatrix>& a, const std::vector<SpectralMatrix>& b);

// Same, with the truth evaluated on the estimate's grid.
double iae(const std::vector<SpectralMatrix>& estimate, const TrueSpectrum& truth,
           bool standardized = true);

// Cross-periodogram 2 d(w) d(w)^* on the data's frequency grid, box-smoothed
// over up to `halfwidth` neighbors each side (window truncated at the grid
// edges). The factor 2 puts it on the one-sided scale of the model spectra.
std::vector<SpectralMatrix> periodogram_baseline(const FourierData& data, int halfwidth);

// Extends a spectral-matrix list to cover [0, 0.5] by copying the first
// entry to frequency 0 and the last to 0.5, for IAE against full-band grids.
std::vector<SpectralMatrix> pad_spectrum_grid(std::vector<SpectralMatrix> list);

}  // namespace mbmard
