#pragma once
// Metropolis-within-Gibbs posterior sampler: truncated matrix stick-breaking
// for the weight matrix, partition-constrained kernel parameters, birth-death
// moves on the component count, and the DP precision update.

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mbmard/rng.hpp"
#include "mbmard/whittle_data.hpp"

namespace mbmard {

struct PriorConfig {
  enum class PsiPrior { kUniform, kBeta22 };
  enum class LogModPrior { kJeffreys, kUniform };
  enum class KPrior { kDpInduced, kDiscreteUniform };
  enum class EscobarCount { kComponents, kFourier };

  PsiPrior psi_prior = PsiPrior::kUniform;
  LogModPrior logmod_prior = LogModPrior::kJeffreys;
  // kDpInduced: flat over {1..truncation_v}, the reachable range of the
  // truncated stick-breaking representation. kDiscreteUniform: flat over
  // {1..k_max}. Both are flat, so birth/death prior ratios are 1 inside the
  // support; only the cap differs.
  KPrior k_prior = KPrior::kDpInduced;
  int k_max = 30;

  double alpha_shape = 0.1;  // Gamma prior on the DP precision
  double alpha_rate = 0.1;
  int truncation_v = 50;     // stick-breaking truncation level
  double l_min = 1e-4;       // Jeffreys prior truncation: p(L) = l_min / L^2 on [l_min, inf)
  double l_max = 2.0;        // upper end of the uniform log_mod alternative
  double noise_floor = 1e-6; // sigma^2 support is (noise_floor, inf), flat in log scale
  EscobarCount escobar_count = EscobarCount::kComponents;
};

struct ProposalConfig {
  double psi_step_frac = 0.2;  // reflected walk sd as a fraction of the subinterval width
  double logmod_step = 0.15;   // log-scale walk sd
  double noise_step = 0.15;    // log-scale walk sd
  double stick_step = 0.3;     // logit-scale walk sd, sticks and atoms alike
};

struct InitConfig {
  int k0 = 3;            // equally spaced cutoffs, psi at midpoints
  double log_mod0 = 0.5;
  double noise0 = 0.1;
  double alpha0 = 1.0;
};

struct SamplerConfig {
  PriorConfig prior;
  ProposalConfig proposal;
  InitConfig init;
  int iterations = 50000;
  int chains = 3;
  std::uint64_t seed = 1;
};

// Full sampler state. The weight matrix is derived, not stored: call
// weights_from_sticks. The last stick of every row is fixed at 1 so row
// weights sum to 1 exactly.
struct ChainState {
  Eigen::MatrixXd sticks;   // n x v, fractions in (0, 1); last column 1
  Eigen::MatrixXd atoms;    // n x v, locations in (0, 1)
  Eigen::VectorXd cutoffs;  // k+1 ascending, cutoffs(0) = 0, cutoffs(k) = 0.5
  Eigen::VectorXd psi;      // k, psi(j) strictly inside (cutoffs(j), cutoffs(j+1))
  Eigen::VectorXd log_mod;  // k, positive
  double noise_var = 0.1;
  double alpha = 1.0;
  int k = 1;
};

// Weight matrix from the truncated stick-breaking representation: the h-th
// stick weight v_h prod_{g<h}(1 - v_g) of row i lands in the bin of k equal
// subdivisions of (0, 1] its atom falls in, and the result is the elementwise
// square root, so each row satisfies sum lambda^2 = 1.
Eigen::MatrixXd weights_from_sticks(const Eigen::MatrixXd& sticks,
                                    const Eigen::MatrixXd& atoms, int k);

// Throws std::logic_error on any violated state invariant.
void validate_state(const ChainState& s, const PriorConfig& prior);

// Largest component count the prior allows.
int k_cap(const PriorConfig& prior);

// Log prior densities and prior draws for the partition-constrained kernel
// parameters; (a, b) is the active subinterval.
double psi_log_prior(double psi, double a, double b, const PriorConfig& prior);
double logmod_log_prior(double log_mod, const PriorConfig& prior);
double sample_psi_prior(double a, double b, const PriorConfig& prior, Rng& rng);
double sample_logmod_prior(const PriorConfig& prior, Rng& rng);

// Likelihood callback: log-likelihood of the state whose derived weight
// matrix is `lambda`. Swapping this out gives prior-only and toy-model runs
// the exact production moves.
using LoglikFn =
    std::function<double(const ChainState& state, const Eigen::MatrixXd& lambda)>;

// One sweep piece each. `lambda` and `loglik` always hold values consistent
// with `state`; moves update all three together on acceptance.
void birth_death_move(ChainState& s, Eigen::MatrixXd& lambda, double& loglik,
                      const LoglikFn& fn, const PriorConfig& prior, Rng& rng);
// Death-then-birth composite at fixed component count: one component
// teleports to a fresh prior draw on one side of a new split of any
// subinterval, while every other component keeps its fitted parameters.
// Duplicated components can escape a crowded spectral peak this way without
// a random walk through the likelihood valley between peaks.
void relocate_move(ChainState& s, Eigen::MatrixXd& lambda, double& loglik, const LoglikFn& fn,
                   const PriorConfig& prior, Rng& rng);
// Cutoff refresh between adjacent peak locations. The likelihood does not
// depend on the cutoffs, so acceptance uses subinterval widths alone.
void update_cutoffs(ChainState& s, const PriorConfig& prior, Rng& rng);
void update_psi(ChainState& s, const Eigen::MatrixXd& lambda, double& loglik,
                const LoglikFn& fn, const PriorConfig& prior,
                const ProposalConfig& prop, Rng& rng);
void update_log_mod(ChainState& s, const Eigen::MatrixXd& lambda, double& loglik,
                    const LoglikFn& fn, const PriorConfig& prior,
                    const ProposalConfig& prop, Rng& rng);
void update_sticks(ChainState& s, Eigen::MatrixXd& lambda, double& loglik,
                   const LoglikFn& fn, const PriorConfig& prior,
                   const ProposalConfig& prop, Rng& rng);
void update_atoms(ChainState& s, Eigen::MatrixXd& lambda, double& loglik,
                  const LoglikFn& fn, const PriorConfig& prior,
                  const ProposalConfig& prop, Rng& rng);
void update_noise(ChainState& s, const Eigen::MatrixXd& lambda, double& loglik,
                  const LoglikFn& fn, const PriorConfig& prior,
                  const ProposalConfig& prop, Rng& rng);
// Escobar-West auxiliary-variable update of the DP precision; n_eff plays
// the sample-size role (component count by default, Fourier bin count as the
// config alternative).
void update_alpha(ChainState& s, const PriorConfig& prior, int n_eff, Rng& rng);

struct TraceRecord {
  int iter = 0;
  int k = 0;
  double loglik = 0.0;
  double noise_var = 0.0;
  double alpha = 0.0;
  Eigen::VectorXd psi;
  Eigen::VectorXd log_mod;
  Eigen::MatrixXd lambda;  // n x k
};

struct ChainTrace {
  int channels = 0;
  std::vector<TraceRecord> records;
};

ChainState initial_state(int n_channels, const SamplerConfig& cfg, Rng& rng);

// Deterministic given (data, cfg, chain_id); sweep order per iteration:
// birth_death, cutoffs, psi, log_mod, sticks, atoms, noise, alpha.
ChainTrace run_chain(const FourierData& data, const SamplerConfig& cfg, int chain_id);

// All chains; chain c uses stream c of cfg.seed. Chains may run on the
// process worker pool, results are independent of the worker count.
std::vector<ChainTrace> run_chains(const FourierData& data, const SamplerConfig& cfg);

// Same drive with an arbitrary likelihood (prior studies, toy models).
// fourier_count is only consulted when the config selects the Fourier-bin
// Escobar-West count. on_iteration, when set, sees every post-sweep state.
ChainTrace run_chain_with(int n_channels, const LoglikFn& fn, const SamplerConfig& cfg,
                          int chain_id, int fourier_count = 0,
                          const std::function<void(const ChainState&)>& on_iteration = {});

// Trace file: one '#'-prefixed JSON header line describing the layout, one
// column-name row, then CSV rows padded to the widest component count with
// zeros. Doubles print as %.17g so read_trace_csv round-trips bitwise.
void write_trace_csv(const ChainTrace& t, const std::string& path);
ChainTrace read_trace_csv(const std::string& path);

}  // namespace mbmard
