#include "mbmard/mixture_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "mbmard/errors.hpp"

namespace mbmard {

namespace {
constexpr double kTwoPi = 6.28318530717958647692528676655900577;
constexpr double kRowTol = 1e-10;

void check_channel(const MixtureModel& m, int ch, const char* what) {
  if (ch < 0 || ch >= m.channels()) throw std::out_of_range(std::string(what) + ": channel index");
}
void check_kernel_index(const MixtureModel& m, int j, const char* what) {
  if (j < 0 || j >= m.components()) throw std::out_of_range(std::string(what) + ": kernel index");
}
}  // namespace

void canonicalize(MixtureModel& m) {
  const int k = m.components();
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (m.kernels[a].psi != m.kernels[b].psi) return m.kernels[a].psi < m.kernels[b].psi;
    return m.kernels[a].log_mod < m.kernels[b].log_mod;
  });
  std::vector<Ar2Kernel> kernels(k);
  Eigen::MatrixXd weights(m.weights.rows(), k);
  for (int j = 0; j < k; ++j) {
    kernels[j] = m.kernels[order[j]];
    weights.col(j) = m.weights.col(order[j]);
  }
  m.kernels = std::move(kernels);
  m.weights = std::move(weights);
}

void validate(const MixtureModel& m) {
  if (m.kernels.empty()) throw std::invalid_argument("MixtureModel: needs at least one kernel");
  if (m.weights.rows() < 1 || m.weights.cols() != static_cast<Eigen::Index>(m.kernels.size()))
    throw std::invalid_argument("MixtureModel: weights must be n x K with K = kernel count");
  if (!(m.noise_var >= 0.0)) throw std::invalid_argument("MixtureModel: negative noise level");
  for (const Ar2Kernel& k : m.kernels) {
    if (!(k.psi > 0.0 && k.psi < 0.5) || !(k.log_mod > 0.0))
      throw std::invalid_argument("MixtureModel: kernel outside its domain");
  }
  for (int i = 0; i < m.channels(); ++i) {
    const double s = m.weights.row(i).squaredNorm();
    if (std::abs(s - 1.0) > kRowTol)
      throw std::invalid_argument("MixtureModel: row " + std::to_string(i) +
                                  " of weights has sum of squares " + std::to_string(s));
  }
}

Eigen::MatrixXd spectral_matrix_real(const MixtureModel& m, double omega) {
  const int k = m.components();
  Eigen::VectorXd g(k);
  for (int j = 0; j < k; ++j) g(j) = kernel_density(m.kernels[j], omega);
  Eigen::MatrixXd s = m.weights * g.asDiagonal() * m.weights.transpose();
  s.diagonal().array() += m.noise_var;
  return s;
}

SpectralMatrix spectral_matrix(const MixtureModel& m, double omega) {
  SpectralMatrix out;
  out.freq = omega;
  out.values = spectral_matrix_real(m, omega).cast<std::complex<double>>();
  return out;
}

std::complex<double> cross_spectrum(const MixtureModel& m, int ch_a, int ch_b, double omega) {
  check_channel(m, ch_a, "cross_spectrum");
  check_channel(m, ch_b, "cross_spectrum");
  double s = 0.0;
  for (int j = 0; j < m.components(); ++j)
    s += m.weights(ch_a, j) * m.weights(ch_b, j) * kernel_density(m.kernels[j], omega);
  if (ch_a == ch_b) s += m.noise_var;
  return {s, 0.0};
}

double coherence(const MixtureModel& m, int ch_a, int ch_b, double omega) {
  const double saa = cross_spectrum(m, ch_a, ch_a, omega).real();
  const double sbb = cross_spectrum(m, ch_b, ch_b, omega).real();
  const double sab = std::abs(cross_spectrum(m, ch_a, ch_b, omega));
  const double den = saa * sbb;
  if (!(den > 0.0)) throw std::domain_error("coherence: vanishing auto-spectrum");
  return sab * sab / den;
}

BlockCovariance autocovariance(const MixtureModel& m, int lag) {
  if (lag < 0) throw std::domain_error("autocovariance: negative lag");
  const int n = m.channels();
  const int k = m.components();
  Eigen::VectorXd gz(k);
  for (int j = 0; j < k; ++j) gz(j) = kernel_autocov(m.kernels[j], lag);
  BlockCovariance out;
  out.lag = lag;
  out.blocks.setZero(k + n, k + n);
  out.blocks.topLeftCorner(k, k) = gz.asDiagonal();
  out.blocks.topRightCorner(k, n) = gz.asDiagonal() * m.weights.transpose();
  out.blocks.bottomLeftCorner(n, k) = m.weights * gz.asDiagonal();
  out.blocks.bottomRightCorner(n, n) = m.weights * gz.asDiagonal() * m.weights.transpose();
  if (lag == 0)
    out.blocks.bottomRightCorner(n, n).diagonal().array() += 0.5 * m.noise_var;
  return out;
}

std::complex<double> transfer_poly(const MixtureModel& m, int kernel, double omega) {
  check_kernel_index(m, kernel, "transfer_poly");
  const Ar2Coeffs c = ar2_coeffs(m.kernels[kernel]);
  const std::complex<double> e1 = std::polar(1.0, -kTwoPi * omega);
  const std::complex<double> e2 = std::polar(1.0, -2.0 * kTwoPi * omega);
  return c.phi1 * e1 + c.phi2 * e2;
}

double pdc_latent_to_signal(const MixtureModel& m, int channel, int kernel, double omega) {
  check_channel(m, channel, "pdc_latent_to_signal");
  check_kernel_index(m, kernel, "pdc_latent_to_signal");
  const std::complex<double> phi = transfer_poly(m, kernel, omega);
  const double mod2 = std::norm(phi);
  const double self2 = std::norm(1.0 - phi);
  const double colsum = m.weights.col(kernel).squaredNorm();
  const double den = std::sqrt(mod2 * colsum + self2);
  return std::abs(m.weights(channel, kernel)) * std::sqrt(mod2) / den;
}

double pdc_signal_to_signal(const MixtureModel& m, int ch_a, int ch_b, double omega) {
  check_channel(m, ch_a, "pdc_signal_to_signal");
  check_channel(m, ch_b, "pdc_signal_to_signal");
  (void)omega;
  return ch_a == ch_b ? 1.0 : 0.0;
}

std::string to_json(const MixtureModel& m) {
  MixtureModel c = m;
  canonicalize(c);
  validate(c);
  nlohmann::json j;
  j["k"] = c.components();
  j["noise_var"] = c.noise_var;
  for (const Ar2Kernel& kn : c.kernels) {
    j["psi"].push_back(kn.psi);
    j["log_mod"].push_back(kn.log_mod);
  }
  for (int i = 0; i < c.channels(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int jj = 0; jj < c.components(); ++jj) row.push_back(c.weights(i, jj));
    j["lambda"].push_back(row);
  }
  return j.dump(2) + "\n";
}

MixtureModel model_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("model_from_json: not valid JSON");
  MixtureModel m;
  if (!j.is_object() || !j.contains("k") || !j.contains("noise_var") || !j.contains("psi") ||
      !j.contains("log_mod") || !j.contains("lambda"))
    throw DataError("model_from_json: missing field");
  try {
    const int k = j.at("k").get<int>();
    m.noise_var = j.at("noise_var").get<double>();
    const auto& psi = j.at("psi");
    const auto& log_mod = j.at("log_mod");
    if (static_cast<int>(psi.size()) != k || static_cast<int>(log_mod.size()) != k)
      throw std::invalid_argument("model_from_json: psi/log_mod length mismatch");
    for (int jj = 0; jj < k; ++jj)
      m.kernels.push_back({psi[jj].get<double>(), log_mod[jj].get<double>()});
    const auto& lam = j.at("lambda");
    const int n = static_cast<int>(lam.size());
    m.weights.resize(n, k);
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(lam[i].size()) != k)
        throw std::invalid_argument("model_from_json: ragged lambda");
      for (int jj = 0; jj < k; ++jj) m.weights(i, jj) = lam[i][jj].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model_from_json: ") + e.what());
  }
  validate(m);
  return m;
}

}  // namespace mbmard
