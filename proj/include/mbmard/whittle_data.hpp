#pragma once
// Data ingestion, standardization, DFT, and the multivariate Whittle
// log-likelihood.

#include <Eigen/Core>
#include <complex>
#include <functional>
#include <string>

#include "mbmard/mixture_model.hpp"

namespace mbmard {

struct MultiChannelSeries {
  Eigen::MatrixXd samples;     // T x n, rows are time points
  double sampling_rate = 0.0;  // Hz, metadata only; 0 means unknown
};

// Fourier coefficients d(w_m) = T^{-1/2} sum_{t=1..T} X(t) e^{-i 2 pi w_m t}
// at w_m = m/T for m = 1 .. T/2 - 1 (endpoints excluded).
struct FourierData {
  Eigen::VectorXd freqs;    // length T/2 - 1
  Eigen::MatrixXcd coeffs;  // n x (T/2 - 1); column m-1 holds d(w_m)
};

// CSV with rows = time, columns = channels, optional header row. Ragged or
// non-numeric rows raise DataError naming the row.
MultiChannelSeries read_series_csv(const std::string& path);
void write_series_csv(const MultiChannelSeries& s, const std::string& path);

// Per-channel affine map to sample mean 0, variance 1 (1/T convention).
// Constant channels raise DataError naming the channel.
MultiChannelSeries standardize(const MultiChannelSeries& s);

// T must be even and at least 16 with finite entries.
FourierData dft(const MultiChannelSeries& s);

// l = -sum_m { log det S(w_m) + d(w_m)^* S(w_m)^{-1} d(w_m) } with S the
// model spectral matrix. One Cholesky factorization per frequency provides
// both the log-determinant and the solve. Frequency terms are combined in a
// fixed chunk order, so the value is identical for any worker count.
// Raises NumericError (with the frequency) if S fails to factor.
double whittle_loglik(const FourierData& d, const MixtureModel& m, int workers = 0);

// Same likelihood for an arbitrary spectrum source; spectrum(w) must return
// the n x n real symmetric spectral matrix at w.
double whittle_loglik(const FourierData& d,
                      const std::function<Eigen::MatrixXd(double)>& spectrum,
                      int workers = 0);

}  // namespace mbmard
