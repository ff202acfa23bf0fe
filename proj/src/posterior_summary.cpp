#include "mbmard/posterior_summary.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mbmard/errors.hpp"
#include "mbmard/rng.hpp"

namespace mbmard {

namespace {

std::string fmt(double x, const char* spec = "%.17g") {
  char buf[40];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

}  // namespace

StackedSamples filter_top(const std::vector<ChainTrace>& traces, int burnin,
                          double quantile) {
  if (traces.empty()) throw std::invalid_argument("no chains to filter");
  if (!(quantile > 0.0 && quantile < 1.0))
    throw std::invalid_argument("quantile must lie in (0, 1)");
  const int n = traces.front().channels;
  std::size_t pooled_count = 0;
  for (const ChainTrace& t : traces) {
    if (t.channels != n) throw std::invalid_argument("chains disagree on channel count");
    if (burnin < 0 || burnin >= static_cast<int>(t.records.size()))
      throw std::invalid_argument("burn-in leaves no samples in some chain");
    pooled_count += t.records.size() - burnin;
  }
  std::vector<double> pooled;
  pooled.reserve(pooled_count);
  for (const ChainTrace& t : traces)
    for (std::size_t r = burnin; r < t.records.size(); ++r)
      pooled.push_back(t.records[r].loglik);
  std::sort(pooled.begin(), pooled.end());
  // rank ceil(q N) of the ascending sort; the small nudge absorbs cases like
  // 0.95 * N landing a hair above the integer it represents
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(quantile * static_cast<double>(pooled.size()) - 1e-9));
  rank = std::min(std::max<std::size_t>(rank, 1), pooled.size());
  const double threshold = pooled[rank - 1];

  StackedSamples out;
  out.loglik_threshold = threshold;
  std::size_t row_count = 0;
  for (std::size_t c = 0; c < traces.size(); ++c) {
    for (std::size_t r = burnin; r < traces[c].records.size(); ++r) {
      const TraceRecord& rec = traces[c].records[r];
      if (rec.loglik > threshold) {
        out.retained.emplace_back(static_cast<int>(c), static_cast<int>(r));
        out.k_per_iteration.push_back(rec.k);
        row_count += rec.k;
      }
    }
  }
  if (out.retained.empty())
    throw DataError("likelihood filter retained nothing; the pooled log-likelihoods "
                    "have no values strictly above their quantile");
  out.rows.resize(row_count, n + 2);
  std::size_t row = 0;
  for (const auto& [c, r] : out.retained) {
    const TraceRecord& rec = traces[c].records[r];
    for (int j = 0; j < rec.k; ++j) {
      out.rows(row, 0) = rec.psi(j);
      out.rows(row, 1) = rec.log_mod(j);
      out.rows.row(row).tail(n) = rec.lambda.col(j).transpose();
      ++row;
    }
  }
  return out;
}

namespace {

struct GmmFit {
  Eigen::VectorXd weights;  // kc
  Eigen::MatrixXd means;    // kc x d
  Eigen::MatrixXd vars;     // kc x d
  Eigen::MatrixXd resp;     // rows x kc
  double loglik = -std::numeric_limits<double>::infinity();
};

// One EM run from a random start: means at kc distinct data rows, shared
// column variances, uniform weights.
GmmFit em_run(const Eigen::MatrixXd& x, int kc, const ClusterConfig& cfg, Rng& rng) {
  const int rows = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  GmmFit f;
  f.weights = Eigen::VectorXd::Constant(kc, 1.0 / kc);
  f.means.resize(kc, d);
  std::vector<int> pick(rows);
  std::iota(pick.begin(), pick.end(), 0);
  for (int c = 0; c < kc; ++c) {
    const int swap_with = c + static_cast<int>(rng.integer(rows - c));
    std::swap(pick[c], pick[swap_with]);
    f.means.row(c) = x.row(pick[c]);
  }
  Eigen::RowVectorXd col_mean = x.colwise().mean();
  Eigen::RowVectorXd col_var =
      ((x.rowwise() - col_mean).array().square().colwise().mean()).matrix();
  for (int j = 0; j < d; ++j) col_var(j) = std::max(col_var(j), cfg.var_floor);
  f.vars = col_var.replicate(kc, 1);
  f.resp.resize(rows, kc);

  Eigen::MatrixXd logp(rows, kc);
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    // E step in log space
    for (int c = 0; c < kc; ++c) {
      double norm = std::log(std::max(f.weights(c), 1e-300));
      for (int j = 0; j < d; ++j) norm -= 0.5 * std::log(2.0 * M_PI * f.vars(c, j));
      logp.col(c) =
          (((x.rowwise() - f.means.row(c)).array().square().rowwise() /
            f.vars.row(c).array())
               .rowwise()
               .sum() *
           -0.5) +
          norm;
    }
    double ll = 0.0;
    for (int r = 0; r < rows; ++r) {
      const double mx = logp.row(r).maxCoeff();
      const double sum = (logp.row(r).array() - mx).exp().sum();
      const double lse = mx + std::log(sum);
      ll += lse;
      f.resp.row(r) = (logp.row(r).array() - lse).exp();
    }
    f.loglik = ll;
    // M step
    for (int c = 0; c < kc; ++c) {
      const double nk = f.resp.col(c).sum();
      f.weights(c) = nk / rows;
      if (nk < 1e-12) {
        f.vars.row(c).setConstant(cfg.var_floor);
        continue;  // empty component keeps its mean, regularized flat
      }
      f.means.row(c) = (f.resp.col(c).transpose() * x) / nk;
      for (int j = 0; j < d; ++j) {
        const double v =
            (f.resp.col(c).array() * (x.col(j).array() - f.means(c, j)).square())
                .sum() /
            nk;
        f.vars(c, j) = std::max(v, cfg.var_floor);
      }
    }
    if (std::abs(ll - prev) < 1e-9 * (1.0 + std::abs(ll))) break;
    prev = ll;
  }
  return f;
}

double fit_criterion(const GmmFit& f, const ClusterConfig& cfg) {
  const int kc = static_cast<int>(f.weights.size());
  const int d = static_cast<int>(f.means.cols());
  const double rows = static_cast<double>(f.resp.rows());
  const double nu = (kc - 1) + 2.0 * kc * d;
  const double bic = 2.0 * f.loglik - nu * std::log(rows);
  if (cfg.criterion == ClusterConfig::Criterion::kBic) return bic;
  double entropy = 0.0;  // sum z log z, zero at hard assignments
  for (int r = 0; r < f.resp.rows(); ++r)
    for (int c = 0; c < kc; ++c) {
      const double z = f.resp(r, c);
      if (z > 0.0) entropy += z * std::log(z);
    }
  return bic + 2.0 * entropy;
}

}  // namespace

std::vector<ClusterReport> cluster_components(const StackedSamples& samples,
                                              double sampling_rate,
                                              const ClusterConfig& cfg) {
  const Eigen::MatrixXd& x = samples.rows;
  const int rows = static_cast<int>(x.rows());
  if (rows < 2) throw std::invalid_argument("clustering needs at least 2 stacked rows");
  const int n = static_cast<int>(x.cols()) - 2;
  int k_lo = samples.k_per_iteration.empty() ? 1 : samples.k_per_iteration.front();
  int k_hi = k_lo;
  for (int k : samples.k_per_iteration) {
    k_lo = std::min(k_lo, k);
    k_hi = std::max(k_hi, k);
  }
  k_lo = std::clamp(k_lo, 1, rows);
  k_hi = std::clamp(k_hi, k_lo, rows);

  GmmFit best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int kc = k_lo; kc <= k_hi; ++kc) {
    GmmFit kc_best;
    for (int restart = 0; restart < cfg.restarts; ++restart) {
      Rng rng(cfg.seed, static_cast<std::uint64_t>(kc) * 1000 + restart);
      GmmFit f = em_run(x, kc, cfg, rng);
      if (f.loglik > kc_best.loglik) kc_best = std::move(f);
    }
    const double score = fit_criterion(kc_best, cfg);
    if (score > best_score) {
      best_score = score;
      best = std::move(kc_best);
    }
  }

  // Hard assignment, then member statistics per nonempty cluster.
  const int kc = static_cast<int>(best.weights.size());
  std::vector<std::vector<int>> members(kc);
  for (int r = 0; r < rows; ++r) {
    int arg = 0;
    best.resp.row(r).maxCoeff(&arg);
    members[arg].push_back(r);
  }
  std::vector<ClusterReport> report;
  for (int c = 0; c < kc; ++c) {
    if (members[c].empty()) continue;
    const int cnt = static_cast<int>(members[c].size());
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(n + 2);
    for (int r : members[c]) mean += x.row(r);
    mean /= cnt;
    Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(n + 2);
    for (int r : members[c]) var += (x.row(r) - mean).array().square().matrix();
    var /= cnt;
    ClusterReport rep;
    rep.count = cnt;
    rep.psi_mean = mean(0);
    rep.psi_sd = std::sqrt(var(0));
    rep.log_mod_mean = mean(1);
    rep.log_mod_sd = std::sqrt(var(1));
    rep.weight_mean = mean.tail(n).transpose();
    rep.weight_sd = var.tail(n).array().sqrt().matrix().transpose();
    if (sampling_rate > 0.0) {
      rep.psi_hz = rep.psi_mean * sampling_rate;
      rep.band = band_label(rep.psi_hz);
    }
    report.push_back(std::move(rep));
  }
  std::stable_sort(report.begin(), report.end(),
                   [](const ClusterReport& a, const ClusterReport& b) {
                     return a.psi_mean < b.psi_mean;
                   });
  return report;
}

std::vector<SpectralMatrix> mean_spectral_matrix(
    const std::vector<ChainTrace>& traces,
    const std::vector<std::pair<int, int>>& retained, const Eigen::VectorXd& freq_grid) {
  if (retained.empty()) throw std::invalid_argument("no retained samples to average");
  const int n = traces.at(retained.front().first).channels;
  std::vector<SpectralMatrix> out(freq_grid.size());
  for (int g = 0; g < freq_grid.size(); ++g) {
    out[g].freq = freq_grid(g);
    out[g].values = Eigen::MatrixXcd::Zero(n, n);
  }
  for (const auto& [c, r] : retained) {
    const TraceRecord& rec = traces.at(c).records.at(r);
    MixtureModel m;
    m.kernels.reserve(rec.k);
    for (int j = 0; j < rec.k; ++j) m.kernels.push_back({rec.psi(j), rec.log_mod(j)});
    m.weights = rec.lambda;
    m.noise_var = rec.noise_var;
    for (int g = 0; g < freq_grid.size(); ++g)
      out[g].values += spectral_matrix(m, freq_grid(g)).values;
  }
  const double inv = 1.0 / static_cast<double>(retained.size());
  for (auto& s : out) s.values *= inv;
  return out;
}

std::string band_label(double hz) {
  if (hz < 4.0) return "delta";
  if (hz < 8.0) return "theta";
  if (hz < 12.0) return "alpha";
  if (hz < 30.0) return "beta";
  if (hz < 60.0) return "gamma";
  return "high";
}

std::vector<BandRow> band_table(const std::vector<ClusterReport>& report,
                                double sampling_rate, double min_weight,
                                const std::string& task) {
  if (!(sampling_rate > 0.0))
    throw std::invalid_argument("band tables need a positive sampling rate");
  std::vector<BandRow> rows;
  for (const ClusterReport& rep : report) {
    const double weight = rep.weight_mean.size() ? rep.weight_mean.maxCoeff() : 0.0;
    if (weight < min_weight) continue;
    BandRow row;
    row.psi_hz = rep.psi_mean * sampling_rate;
    row.band = band_label(row.psi_hz);
    row.task = task;
    row.log_mod = rep.log_mod_mean;
    row.weight = weight;
    row.count = rep.count;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string band_table_csv(const std::vector<BandRow>& rows) {
  std::string out = "Band,Task,Psi_Hz,L,Lambda,Count\n";
  for (const BandRow& r : rows) {
    out += r.band + ',' + r.task + ',' + fmt(r.psi_hz, "%.6g") + ',' +
           fmt(r.log_mod, "%.6g") + ',' + fmt(r.weight, "%.6g") + ',' +
           std::to_string(r.count) + '\n';
  }
  return out;
}

std::string report_to_json(const std::vector<ClusterReport>& report) {
  nlohmann::json doc;
  doc["clusters"] = nlohmann::json::array();
  for (const ClusterReport& rep : report) {
    nlohmann::json c;
    c["psi_mean"] = rep.psi_mean;
    c["psi_sd"] = rep.psi_sd;
    c["log_mod_mean"] = rep.log_mod_mean;
    c["log_mod_sd"] = rep.log_mod_sd;
    c["count"] = rep.count;
    if (!rep.band.empty()) {
      c["psi_hz"] = rep.psi_hz;
      c["band"] = rep.band;
    }
    c["weight_mean"] = std::vector<double>(rep.weight_mean.data(),
                                           rep.weight_mean.data() + rep.weight_mean.size());
    c["weight_sd"] = std::vector<double>(rep.weight_sd.data(),
                                         rep.weight_sd.data() + rep.weight_sd.size());
    doc["clusters"].push_back(std::move(c));
  }
  return doc.dump(2);
}

std::string report_to_csv(const std::vector<ClusterReport>& report) {
  const int n = report.empty() ? 0 : static_cast<int>(report.front().weight_mean.size());
  std::string out = "cluster,count,band,psi_mean,psi_sd,psi_hz,log_mod_mean,log_mod_sd";
  for (int i = 1; i <= n; ++i)
    out += ",weight_mean_" + std::to_string(i) + ",weight_sd_" + std::to_string(i);
  out += '\n';
  for (std::size_t c = 0; c < report.size(); ++c) {
    const ClusterReport& rep = report[c];
    out += std::to_string(c + 1) + ',' + std::to_string(rep.count) + ',' + rep.band +
           ',' + fmt(rep.psi_mean) + ',' + fmt(rep.psi_sd) + ',' + fmt(rep.psi_hz) +
           ',' + fmt(rep.log_mod_mean) + ',' + fmt(rep.log_mod_sd);
    for (int i = 0; i < n; ++i)
      out += ',' + fmt(rep.weight_mean(i)) + ',' + fmt(rep.weight_sd(i));
    out += '\n';
  }
  return out;
}

std::string spectra_to_csv(const std::vector<SpectralMatrix>& spectra) {
  std::string out = "freq,i,j,re,im\n";
  for (const SpectralMatrix& s : spectra) {
    const int n = static_cast<int>(s.values.rows());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        out += fmt(s.freq) + ',' + std::to_string(i + 1) + ',' + std::to_string(j + 1) +
               ',' + fmt(s.values(i, j).real()) + ',' + fmt(s.values(i, j).imag()) + '\n';
  }
  return out;
}

}  // namespace mbmard
