#pragma once
// Chain post-processing: likelihood filtering, component stacking, Gaussian
// mixture clustering of the oscillation parameters, pointwise-mean spectral
// matrices, and frequency-band tables.

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mbmard/dp_sampler.hpp"
#include "mbmard/mixture_model.hpp"

namespace mbmard {

// One row per component occurrence in a retained iteration: the row is
// (psi, log_mod, weight_1, ..., weight_n), so rows has n + 2 columns.
struct StackedSamples {
  Eigen::MatrixXd rows;
  std::vector<std::pair<int, int>> retained;  // (chain, record index) kept by the filter
  std::vector<int> k_per_iteration;           // component count of each retained iteration
  double loglik_threshold = 0.0;              // pooled quantile the filter applied
};

// Pools post-burn-in log-likelihoods across chains, takes the empirical
// `quantile` (index ceil(q N) of the ascending sort), and keeps iterations
// whose log-likelihood is strictly greater. Throws DataError when nothing
// exceeds the quantile (for instance, all log-likelihoods equal).
StackedSamples filter_top(const std::vector<ChainTrace>& traces, int burnin,
                          double quantile = 0.95);

struct ClusterReport {
  double psi_mean = 0.0;
  double psi_sd = 0.0;
  double psi_hz = 0.0;  // 0 when the sampling rate is unknown
  double log_mod_mean = 0.0;
  double log_mod_sd = 0.0;
  Eigen::VectorXd weight_mean;  // per channel
  Eigen::VectorXd weight_sd;
  int count = 0;
  std::string band;  // empty when the sampling rate is unknown
};

struct ClusterConfig {
  enum class Criterion { kIcl, kBic };
  Criterion criterion = Criterion::kIcl;
  int restarts = 10;
  int max_iterations = 500;
  double var_floor = 1e-8;
  std::uint64_t seed = 1;
};

// Gaussian-mixture clustering of the stacked rows: expectation-maximization
// with diagonal covariances, candidate cluster counts spanning the range of
// component counts observed in the retained iterations, the best of
// `restarts` runs per count, and the count chosen by the integrated
// completed likelihood (BIC as the config alternative). Reported statistics
// are the per-cluster member mean and population standard deviation, ordered
// by mean psi. Requires at least 2 rows.
std::vector<ClusterReport> cluster_components(const StackedSamples& samples,
                                              double sampling_rate = 0.0,
                                              const ClusterConfig& cfg = {});

// Arithmetic mean of the per-sample spectral matrices over the retained
// (chain, record) pairs, one SpectralMatrix per grid frequency.
std::vector<SpectralMatrix> mean_spectral_matrix(
    const std::vector<ChainTrace>& traces,
    const std::vector<std::pair<int, int>>& retained, const Eigen::VectorXd& freq_grid);

// Half-open band edges [0,4), [4,8), [8,12), [12,30), [30,60) named delta,
// theta, alpha, beta, gamma; 60 Hz and above reports "high". A value exactly
// at an edge belongs to the upper band.
std::string band_label(double hz);

struct BandRow {
  std::string band;
  std::string task;
  double psi_hz = 0.0;
  double log_mod = 0.0;
  double weight = 0.0;  // largest channel mean weight
  int count = 0;
};

// Converts cluster means to Hz, drops clusters whose largest channel weight
// is below min_weight, and labels each remaining cluster with its band.
std::vector<BandRow> band_table(const std::vector<ClusterReport>& report,
                                double sampling_rate, double min_weight = 0.1,
                                const std::string& task = "");

// Fixed schema "Band,Task,Psi_Hz,L,Lambda,Count" with %.6g numbers.
std::string band_table_csv(const std::vector<BandRow>& rows);

std::string report_to_json(const std::vector<ClusterReport>& report);
std::string report_to_csv(const std::vector<ClusterReport>& report);

// Long format "freq,i,j,re,im" with 1-based channel indices, %.17g numbers.
std::string spectra_to_csv(const std::vector<SpectralMatrix>& spectra);

}  // namespace mbmard
