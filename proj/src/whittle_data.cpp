#include "mbmard/whittle_data.hpp"

#include <unsupported/Eigen/FFT>

#include <Eigen/Cholesky>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>
#include <vector>

#include "mbmard/errors.hpp"
#include "mbmard/parallel.hpp"

namespace mbmard {

namespace {
constexpr double kTwoPi = 6.28318530717958647692528676655900577;
std::atomic<int> g_threads{1};

// Chunk width for the deterministic likelihood reduction; fixed so the sum
// order never depends on the worker count.
constexpr int kChunk = 64;

bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t comma = line.find(',', pos);
    if (comma == std::string::npos) comma = line.size();
    const std::string field = line.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      const double v = std::stod(field, &used);
      while (used < field.size() && std::isspace(static_cast<unsigned char>(field[used]))) ++used;
      if (used != field.size()) return false;
      out.push_back(v);
    } catch (const std::exception&) {
      return false;
    }
    pos = comma + 1;
    if (comma == line.size()) break;
  }
  return !out.empty();
}
}  // namespace

void set_thread_count(int n) { g_threads.store(n < 1 ? 1 : n); }
int thread_count() { return g_threads.load(); }

void parallel_chunks(int chunks, const std::function<void(int)>& fn, int workers) {
  if (workers <= 0) workers = thread_count();
  if (workers > chunks) workers = chunks;
  if (workers <= 1) {
    for (int c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int c = next.fetch_add(1);
        if (c >= chunks) return;
        fn(c);
      }
    });
  }
  for (std::thread& t : pool) t.join();
}

MultiChannelSeries read_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  std::vector<double> fields;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!parse_row(line, fields)) {
      if (lineno == 1) continue;  // header row
      throw DataError(path + ": row " + std::to_string(lineno) + " is not numeric");
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width)
      throw DataError(path + ": row " + std::to_string(lineno) + " has " +
                      std::to_string(fields.size()) + " fields, expected " + std::to_string(width));
    rows.push_back(fields);
  }
  if (rows.empty()) throw DataError(path + ": no data rows");
  MultiChannelSeries s;
  s.samples.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t c = 0; c < width; ++c) {
      if (!std::isfinite(rows[t][c]))
        throw DataError(path + ": non-finite value at row " + std::to_string(t + 1));
      s.samples(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = rows[t][c];
    }
  return s;
}

void write_series_csv(const MultiChannelSeries& s, const std::string& path) {
  std::ostringstream out;
  const Eigen::Index n = s.samples.cols();
  for (Eigen::Index c = 0; c < n; ++c) out << (c ? ",ch" : "ch") << (c + 1);
  out << '\n';
  char buf[40];
  for (Eigen::Index t = 0; t < s.samples.rows(); ++t) {
    for (Eigen::Index c = 0; c < n; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", s.samples(t, c));
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f << out.str();
}

MultiChannelSeries standardize(const MultiChannelSeries& s) {
  MultiChannelSeries out = s;
  const Eigen::Index t = s.samples.rows();
  for (Eigen::Index c = 0; c < s.samples.cols(); ++c) {
    const double mean = s.samples.col(c).mean();
    const double var = (s.samples.col(c).array() - mean).square().sum() / static_cast<double>(t);
    if (!(var > 0.0))
      throw DataError("standardize: channel " + std::to_string(c + 1) + " is constant");
    out.samples.col(c) = (s.samples.col(c).array() - mean) / std::sqrt(var);
  }
  return out;
}

FourierData dft(const MultiChannelSeries& s) {
  const Eigen::Index t = s.samples.rows();
  const Eigen::Index n = s.samples.cols();
  if (t < 16 || t % 2 != 0) throw DataError("dft: series length must be even and at least 16");
  if (!s.samples.allFinite()) throw DataError("dft: non-finite samples");
  const Eigen::Index m = t / 2 - 1;
  FourierData out;
  out.freqs.resize(m);
  out.coeffs.resize(n, m);
  const double scale = 1.0 / std::sqrt(static_cast<double>(t));
  Eigen::FFT<double> fft;
  std::vector<double> in(static_cast<std::size_t>(t));
  std::vector<std::complex<double>> spec;
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index i = 0; i < t; ++i) in[static_cast<std::size_t>(i)] = s.samples(i, c);
    fft.fwd(spec, in);
    for (Eigen::Index k = 1; k <= m; ++k) {
      // The transform above indexes time from 0; the t = 1..T convention
      // shifts bin k by e^{-i 2 pi k / T}.
      const std::complex<double> phase = std::polar(1.0, -kTwoPi * static_cast<double>(k) / static_cast<double>(t));
      out.coeffs(c, k - 1) = spec[static_cast<std::size_t>(k)] * phase * scale;
    }
  }
  for (Eigen::Index k = 1; k <= m; ++k)
    out.freqs(k - 1) = static_cast<double>(k) / static_cast<double>(t);
  return out;
}

double whittle_loglik(const FourierData& d,
                      const std::function<Eigen::MatrixXd(double)>& spectrum,
                      int workers) {
  const Eigen::Index m = d.freqs.size();
  const Eigen::Index n = d.coeffs.rows();
  if (m == 0) throw DataError("whittle_loglik: empty Fourier data");
  const int chunks = static_cast<int>((m + kChunk - 1) / kChunk);
  std::vector<double> partial(static_cast<std::size_t>(chunks), 0.0);
  std::atomic<bool> failed{false};
  std::atomic<Eigen::Index> bad_index{-1};
  parallel_chunks(
      chunks,
      [&](int chunk) {
        Eigen::LLT<Eigen::MatrixXd> llt(n);
        Eigen::VectorXd re(n), im(n);
        double acc = 0.0;
        const Eigen::Index lo = static_cast<Eigen::Index>(chunk) * kChunk;
        const Eigen::Index hi = std::min<Eigen::Index>(lo + kChunk, m);
        for (Eigen::Index k = lo; k < hi; ++k) {
          if (failed.load(std::memory_order_relaxed)) return;
          const Eigen::MatrixXd s = spectrum(d.freqs(k));
          llt.compute(s);
          if (llt.info() != Eigen::Success) {
            failed.store(true);
            bad_index.store(k);
            return;
          }
          double logdet = 0.0;
          for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(llt.matrixLLT()(i, i));
          logdet *= 2.0;
          re = d.coeffs.col(k).real();
          im = d.coeffs.col(k).imag();
          const double quad = re.dot(llt.solve(re)) + im.dot(llt.solve(im));
          acc += logdet + quad;
        }
        partial[static_cast<std::size_t>(chunk)] = acc;
      },
      workers);
  if (failed.load())
    throw NumericError("whittle_loglik: spectral matrix not positive definite at frequency " +
                       std::to_string(d.freqs(bad_index.load())));
  double total = 0.0;
  for (double p : partial) total += p;
  if (!std::isfinite(total)) throw NumericError("whittle_loglik: non-finite value");
  return -total;
}

double whittle_loglik(const FourierData& d, const MixtureModel& m, int workers) {
  if (m.channels() != d.coeffs.rows())
    throw DataError("whittle_loglik: model has " + std::to_string(m.channels()) +
                    " channels, data has " + std::to_string(d.coeffs.rows()));
  validate(m);
  return whittle_loglik(
      d, [&m](double w) { return spectral_matrix_real(m, w); }, workers);
}

}  // namespace mbmard
