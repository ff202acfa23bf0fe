#include "mbmard/simkit.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <utility>

#include "json.hpp"
#include "mbmard/errors.hpp"
#include "mbmard/rng.hpp"
#include "mbmard/spectral_kernel.hpp"

namespace mbmard {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Largest eigenvalue modulus of the AR companion matrix; < 1 iff stationary.
double ar_spectral_radius(const std::vector<double>& ar) {
  const int p = static_cast<int>(ar.size());
  if (p == 0) return 0.0;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(p, p);
  for (int j = 0; j < p; ++j) companion(0, j) = ar[j];
  for (int j = 1; j < p; ++j) companion(j, j - 1) = 1.0;
  const Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

void validate_scenario(const ScenarioSpec& spec) {
  const int k = static_cast<int>(spec.latents.size());
  if (k < 1) throw std::invalid_argument("scenario has no latent processes");
  if (spec.mixing.rows() < 1 || spec.mixing.cols() != k)
    throw std::invalid_argument("mixing matrix must have one column per latent");
  for (int i = 0; i < spec.mixing.rows(); ++i) {
    const double s = spec.mixing.row(i).squaredNorm();
    if (std::abs(s - 1.0) > 1e-6)
      throw std::invalid_argument("mixing row " + std::to_string(i + 1) +
                                  " has sum of squares " + std::to_string(s) +
                                  ", expected 1");
  }
  if (!(spec.noise_scale >= 0.0) || !std::isfinite(spec.noise_scale))
    throw std::invalid_argument("noise scale must be a nonnegative number");
  for (int j = 0; j < k; ++j) {
    for (double c : spec.latents[j].ar)
      if (!std::isfinite(c)) throw std::invalid_argument("AR coefficient not finite");
    for (double c : spec.latents[j].ma)
      if (!std::isfinite(c)) throw std::invalid_argument("MA coefficient not finite");
    const double radius = ar_spectral_radius(spec.latents[j].ar);
    if (radius >= 1.0 - 1e-9)
      throw std::invalid_argument("latent " + std::to_string(j + 1) +
                                  " is not stationary (companion spectral radius " +
                                  std::to_string(radius) + ")");
  }
}

ScenarioSpec scenario1() {
  ScenarioSpec spec;
  spec.name = "ar2mix";
  const double psi[4] = {0.005, 0.03, 0.06, 0.3};
  for (double p : psi) {
    const Ar2Coeffs c = ar2_coeffs({p, 0.03});
    spec.latents.push_back({{c.phi1, c.phi2}, {}});
  }
  spec.mixing.setZero(7, 4);
  spec.mixing(0, 0) = 1.0;
  spec.mixing(1, 1) = 1.0;
  spec.mixing(2, 2) = 1.0;
  spec.mixing(3, 3) = 1.0;
  spec.mixing(4, 0) = std::sqrt(0.4);
  spec.mixing(4, 2) = std::sqrt(0.6);
  spec.mixing(5, 1) = std::sqrt(0.7);
  spec.mixing(5, 3) = std::sqrt(0.3);
  spec.mixing(6, 2) = std::sqrt(0.3);
  spec.mixing(6, 3) = std::sqrt(0.7);
  spec.noise_scale = 0.1;
  return spec;
}

ScenarioSpec scenario2() {
  ScenarioSpec spec;
  spec.name = "misspec";
  LatentSpec z1;  // seasonal AR(12): lags 4, 8, 12
  z1.ar.assign(12, 0.0);
  z1.ar[3] = 0.9;
  z1.ar[7] = 0.7;
  z1.ar[11] = -0.63;
  LatentSpec z2;  // MA(4)
  z2.ma = {0.6, -0.3, -0.6, -0.3};
  LatentSpec z3;  // low-frequency AR(1)
  z3.ar = {0.8};
  LatentSpec z4;  // high-frequency AR(1)
  z4.ar = {-0.8};
  spec.latents = {z1, z2, z3, z4};
  spec.mixing.setZero(7, 4);
  spec.mixing(0, 0) = 1.0;
  spec.mixing(1, 1) = 1.0;
  spec.mixing(2, 2) = 1.0;
  spec.mixing(3, 3) = 1.0;
  spec.mixing(4, 2) = std::sqrt(0.4);
  spec.mixing(4, 3) = std::sqrt(0.6);
  spec.mixing(5, 1) = std::sqrt(0.6);
  spec.mixing(5, 2) = std::sqrt(0.4);
  spec.mixing(6, 1) = std::sqrt(0.5);
  spec.mixing(6, 3) = std::sqrt(0.5);
  spec.noise_scale = 0.1;
  return spec;
}

ScenarioSpec scenario_from_json(const std::string& text) {
  const nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw DataError("scenario file is not valid JSON");
  ScenarioSpec spec;
  try {
    spec.name = doc.value("name", "custom");
    spec.noise_scale = doc.value("noise_scale", 0.1);
    if (!doc.at("latents").is_array())
      throw DataError("scenario field 'latents' must be a list");
    for (const auto& l : doc.at("latents")) {
      if (!l.is_object())
        throw DataError("every latent must be an object with 'ar'/'ma' lists");
      LatentSpec latent;
      if (l.contains("ar")) latent.ar = l["ar"].get<std::vector<double>>();
      if (l.contains("ma")) latent.ma = l["ma"].get<std::vector<double>>();
      spec.latents.push_back(std::move(latent));
    }
    const auto& rows = doc.at("mixing");
    if (!rows.is_array())
      throw DataError("scenario field 'mixing' must be a list of rows");
    const int n = static_cast<int>(rows.size());
    const int k = static_cast<int>(spec.latents.size());
    spec.mixing.resize(n, k);
    for (int i = 0; i < n; ++i) {
      const auto row = rows[i].get<std::vector<double>>();
      if (static_cast<int>(row.size()) != k)
        throw DataError("mixing row " + std::to_string(i + 1) +
                        " length does not match the latent count");
      for (int j = 0; j < k; ++j) spec.mixing(i, j) = row[j];
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("scenario file structure: ") + e.what());
  }
  try {
    validate_scenario(spec);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("scenario file: ") + e.what());
  }
  return spec;
}

std::string scenario_to_json(const ScenarioSpec& spec) {
  nlohmann::json doc;
  doc["name"] = spec.name;
  doc["noise_scale"] = spec.noise_scale;
  doc["latents"] = nlohmann::json::array();
  for (const LatentSpec& l : spec.latents)
    doc["latents"].push_back({{"ar", l.ar}, {"ma", l.ma}});
  doc["mixing"] = nlohmann::json::array();
  for (int i = 0; i < spec.mixing.rows(); ++i) {
    std::vector<double> row(spec.mixing.cols());
    for (int j = 0; j < spec.mixing.cols(); ++j) row[j] = spec.mixing(i, j);
    doc["mixing"].push_back(row);
  }
  return doc.dump(2);
}

double latent_density_raw(const LatentSpec& l, double omega) {
  const std::complex<double> z = std::polar(1.0, -kTwoPi * omega);
  std::complex<double> zk = 1.0;
  std::complex<double> num = 1.0, den = 1.0;
  const std::size_t depth = std::max(l.ar.size(), l.ma.size());
  for (std::size_t j = 0; j < depth; ++j) {
    zk *= z;
    if (j < l.ma.size()) num += l.ma[j] * zk;
    if (j < l.ar.size()) den -= l.ar[j] * zk;
  }
  return std::norm(num) / std::norm(den);
}

double latent_variance(const LatentSpec& l) {
  // Simpson rule; 2^16 panels resolve even the near-unit-root peaks of the
  // built-in scenarios far below the tolerances anything downstream uses.
  const int panels = 1 << 16;
  const double h = 0.5 / panels;
  double sum = latent_density_raw(l, 0.0) + latent_density_raw(l, 0.5);
  for (int i = 1; i < panels; ++i)
    sum += latent_density_raw(l, i * h) * (i % 2 ? 4.0 : 2.0);
  return 2.0 * sum * h / 3.0;
}

Eigen::MatrixXcd TrueSpectrum::matrix(double omega, bool standardized) const {
  const int k = static_cast<int>(spec.latents.size());
  Eigen::VectorXd dens(k);
  for (int j = 0; j < k; ++j)
    dens(j) = 2.0 * latent_density_raw(spec.latents[j], omega) / latent_var(j);
  Eigen::MatrixXd s = spec.mixing * dens.asDiagonal() * spec.mixing.transpose();
  s.diagonal().array() += 2.0 * spec.noise_scale * spec.noise_scale;
  if (standardized) s /= 1.0 + spec.noise_scale * spec.noise_scale;
  return s.cast<std::complex<double>>();
}

std::vector<SpectralMatrix> TrueSpectrum::grid(const Eigen::VectorXd& freqs,
                                               bool standardized) const {
  std::vector<SpectralMatrix> out(freqs.size());
  for (int i = 0; i < freqs.size(); ++i) {
    out[i].freq = freqs(i);
    out[i].values = matrix(freqs(i), standardized);
  }
  return out;
}

TrueSpectrum true_spectrum(const ScenarioSpec& spec) {
  validate_scenario(spec);
  TrueSpectrum t;
  t.spec = spec;
  t.latent_var.resize(spec.latents.size());
  for (std::size_t j = 0; j < spec.latents.size(); ++j)
    t.latent_var(j) = latent_variance(spec.latents[j]);
  return t;
}

namespace {

constexpr int kBurnIn = 1000;

Eigen::VectorXd simulate_latent(const LatentSpec& l, int t_len, Rng& rng) {
  const int p = static_cast<int>(l.ar.size());
  const int q = static_cast<int>(l.ma.size());
  const int total = t_len + kBurnIn;
  std::vector<double> e(total), x(total);
  for (int t = 0; t < total; ++t) e[t] = rng.normal();
  for (int t = 0; t < total; ++t) {
    double value = e[t];
    for (int k = 0; k < q && k < t; ++k) value += l.ma[k] * e[t - 1 - k];
    for (int j = 0; j < p && j < t; ++j) value += l.ar[j] * x[t - 1 - j];
    x[t] = value;
  }
  return Eigen::Map<Eigen::VectorXd>(x.data() + kBurnIn, t_len);
}

}  // namespace

ScenarioData gen_scenario(const ScenarioSpec& spec, int t_len, std::uint64_t seed) {
  if (t_len < 256 || t_len % 2 != 0)
    throw std::invalid_argument("series length must be even and at least 256");
  ScenarioData out;
  out.truth = true_spectrum(spec);  // validates, and provides the variances
  const int k = static_cast<int>(spec.latents.size());
  const int n = static_cast<int>(spec.mixing.rows());
  Eigen::MatrixXd z(t_len, k);
  for (int j = 0; j < k; ++j) {
    Rng rng(seed, static_cast<std::uint64_t>(j));
    z.col(j) = simulate_latent(spec.latents[j], t_len, rng) /
               std::sqrt(out.truth.latent_var(j));
  }
  out.series.samples.noalias() = z * spec.mixing.transpose();
  for (int i = 0; i < n; ++i) {
    Rng rng(seed, 1000 + static_cast<std::uint64_t>(i));
    for (int t = 0; t < t_len; ++t)
      out.series.samples(t, i) += spec.noise_scale * rng.normal();
  }
  out.series.sampling_rate = 0.0;
  return out;
}

ScenarioData gen_scenario1(int t_len, std::uint64_t seed) {
  return gen_scenario(scenario1(), t_len, seed);
}

ScenarioData gen_scenario2(int t_len, std::uint64_t seed) {
  return gen_scenario(scenario2(), t_len, seed);
}

double iae(const std::vector<SpectralMatrix>& a, const std::vector<SpectralMatrix>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("IAE needs two spectra on one grid of at least 2 points");
  const int n = static_cast<int>(a.front().values.rows());
  for (std::size_t g = 0; g < a.size(); ++g) {
    if (std::abs(a[g].freq - b[g].freq) > 1e-12)
      throw std::invalid_argument("IAE grids disagree at index " + std::to_string(g));
    if (a[g].values.rows() != n || b[g].values.rows() != n ||
        a[g].values.cols() != n || b[g].values.cols() != n)
      throw std::invalid_argument("IAE spectral matrices disagree in shape");
    if (g > 0 && !(a[g].freq > a[g - 1].freq))
      throw std::invalid_argument("IAE grid is not ascending");
  }
  if (std::abs(a.front().freq) > 1e-12 || std::abs(a.back().freq - 0.5) > 1e-12)
    throw std::invalid_argument("IAE grid must span [0, 0.5]");
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double prev = std::abs(a.front().values(i, j) - b.front().values(i, j));
      for (std::size_t g = 1; g < a.size(); ++g) {
        const double cur = std::abs(a[g].values(i, j) - b[g].values(i, j));
        total += 0.5 * (prev + cur) * (a[g].freq - a[g - 1].freq);
        prev = cur;
      }
    }
  }
  return total;
}

double iae(const std::vector<SpectralMatrix>& estimate, const TrueSpectrum& truth,
           bool standardized) {
  Eigen::VectorXd freqs(estimate.size());
  for (std::size_t g = 0; g < estimate.size(); ++g) freqs(g) = estimate[g].freq;
  return iae(estimate, truth.grid(freqs, standardized));
}

std::vector<SpectralMatrix> periodogram_baseline(const FourierData& data, int halfwidth) {
  if (halfwidth < 0) throw std::invalid_argument("smoothing halfwidth must be >= 0");
  const int m = static_cast<int>(data.coeffs.cols());
  if (m < 1) throw std::invalid_argument("empty Fourier data");
  std::vector<Eigen::MatrixXcd> raw(m);
  for (int g = 0; g < m; ++g)
    raw[g].noalias() = data.coeffs.col(g) * data.coeffs.col(g).adjoint();
  std::vector<SpectralMatrix> out(m);
  for (int g = 0; g < m; ++g) {
    const int lo = std::max(0, g - halfwidth);
    const int hi = std::min(m - 1, g + halfwidth);
    Eigen::MatrixXcd acc = raw[lo];
    for (int w = lo + 1; w <= hi; ++w) acc += raw[w];
    out[g].freq = data.freqs(g);
    out[g].values = acc * (2.0 / (hi - lo + 1));
  }
  return out;
}

std::vector<SpectralMatrix> pad_spectrum_grid(std::vector<SpectralMatrix> list) {
  if (list.empty()) throw std::invalid_argument("cannot pad an empty spectrum list");
  if (list.front().freq <= 0.0 || list.back().freq >= 0.5)
    throw std::invalid_argument("spectrum list already reaches the band edges");
  SpectralMatrix lo = list.front();
  lo.freq = 0.0;
  SpectralMatrix hi = list.back();
  hi.freq = 0.5;
  list.insert(list.begin(), std::move(lo));
  list.push_back(std::move(hi));
  return list;
}

}  // namespace mbmard
