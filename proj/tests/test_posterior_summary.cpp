#include "test_support.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mbmard/errors.hpp"
#include "mbmard/posterior_summary.hpp"

using namespace mbmard;

namespace {

// Trace record with every field pinned by hand.
TraceRecord make_record(int iter, double loglik, const std::vector<double>& psi,
                        const std::vector<double>& log_mod, const Eigen::MatrixXd& lambda,
                        double noise = 0.05, double alpha = 1.0) {
  TraceRecord r;
  r.iter = iter;
  r.k = static_cast<int>(psi.size());
  r.loglik = loglik;
  r.noise_var = noise;
  r.alpha = alpha;
  r.psi = Eigen::Map<const Eigen::VectorXd>(psi.data(), static_cast<int>(psi.size()));
  r.log_mod =
      Eigen::Map<const Eigen::VectorXd>(log_mod.data(), static_cast<int>(log_mod.size()));
  r.lambda = lambda;
  return r;
}

// Single-component records with ascending logliks 1..count.
ChainTrace ladder_trace(int count, int channels) {
  ChainTrace t;
  t.channels = channels;
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Ones(channels, 1);
  for (int i = 0; i < count; ++i)
    t.records.push_back(make_record(i, static_cast<double>(i + 1), {0.1 + 0.001 * i},
                                    {0.5}, lambda));
  return t;
}

}  // namespace

TEST_CASE("likelihood filter keeps strictly-above-quantile iterations") {
  // Pooled logliks 1..20: the 0.95 quantile is the rank-19 order statistic,
  // so only the loglik-20 record survives.
  std::vector<ChainTrace> traces{ladder_trace(20, 2)};
  StackedSamples s = filter_top(traces, 0, 0.95);
  CHECK(s.loglik_threshold == 19.0);
  REQUIRE(s.retained.size() == 1);
  CHECK(s.retained[0] == std::pair<int, int>(0, 19));
  CHECK(s.k_per_iteration == std::vector<int>{1});
  CHECK(s.rows.rows() == 1);

  // Median keeps the strict upper half.
  s = filter_top(traces, 0, 0.5);
  CHECK(s.loglik_threshold == 10.0);
  CHECK(s.retained.size() == 10);
  CHECK(s.retained.front() == std::pair<int, int>(0, 10));

  // Burn-in removes the early records before the quantile is taken.
  s = filter_top(traces, 10, 0.5);
  CHECK(s.loglik_threshold == 15.0);
  CHECK(s.retained.size() == 5);
  CHECK(s.retained.front() == std::pair<int, int>(0, 15));

  // Pooling across chains: the second chain sits strictly above the first,
  // so the top tail comes entirely from it.
  ChainTrace high = ladder_trace(20, 2);
  for (TraceRecord& r : high.records) r.loglik += 100.0;
  std::vector<ChainTrace> both{ladder_trace(20, 2), high};
  s = filter_top(both, 0, 0.9);
  CHECK(s.loglik_threshold == 116.0);
  REQUIRE(s.retained.size() == 4);
  for (const auto& [c, r] : s.retained) CHECK(c == 1);

  // All logliks equal: nothing is strictly above the quantile.
  ChainTrace flat = ladder_trace(20, 2);
  for (TraceRecord& r : flat.records) r.loglik = 7.0;
  CHECK_THROWS_AS(filter_top({flat}, 0, 0.95), DataError);

  CHECK_THROWS_AS(filter_top({}, 0, 0.95), std::invalid_argument);
  CHECK_THROWS_AS(filter_top(traces, 20, 0.95), std::invalid_argument);
  CHECK_THROWS_AS(filter_top(traces, -1, 0.95), std::invalid_argument);
  CHECK_THROWS_AS(filter_top(traces, 0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(filter_top(traces, 0, 1.0), std::invalid_argument);
  ChainTrace other = ladder_trace(20, 3);
  CHECK_THROWS_AS(filter_top({traces[0], other}, 0, 0.95), std::invalid_argument);
}

TEST_CASE("stacked rows carry each retained component in order") {
  Eigen::MatrixXd lam1(2, 1), lam2(2, 2);
  lam1 << 1.0, 1.0;
  lam2 << 0.6, 0.8, 0.8, 0.6;
  ChainTrace t;
  t.channels = 2;
  t.records.push_back(make_record(0, 1.0, {0.1}, {0.3}, lam1));
  t.records.push_back(make_record(1, 5.0, {0.2, 0.4}, {0.7, 0.9}, lam2));
  t.records.push_back(make_record(2, 3.0, {0.15}, {0.4}, lam1));

  const StackedSamples s = filter_top({t}, 0, 0.5);
  // threshold is the rank-2 order statistic (loglik 3); only record 1 passes.
  CHECK(s.loglik_threshold == 3.0);
  REQUIRE(s.k_per_iteration == std::vector<int>{2});
  REQUIRE(s.rows.rows() == 2);
  REQUIRE(s.rows.cols() == 4);
  CHECK(s.rows(0, 0) == 0.2);
  CHECK(s.rows(0, 1) == 0.7);
  CHECK(s.rows(0, 2) == 0.6);  // lambda column 0
  CHECK(s.rows(0, 3) == 0.8);
  CHECK(s.rows(1, 0) == 0.4);
  CHECK(s.rows(1, 1) == 0.9);
  CHECK(s.rows(1, 2) == 0.8);
  CHECK(s.rows(1, 3) == 0.6);
}

TEST_CASE("clustering recovers well-separated blobs") {
  // Three tight blobs in (psi, log_mod, w1, w2); candidate counts 2..4 come
  // from k_per_iteration, so the criterion has to do real model selection.
  Rng rng(1234);
  const int per = 200;
  Eigen::MatrixXd rows(3 * per, 4);
  const double centers[3][4] = {{0.10, 0.30, 0.90, 0.10},
                                {0.25, 0.50, 0.50, 0.50},
                                {0.40, 0.80, 0.10, 0.90}};
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < per; ++i)
      for (int j = 0; j < 4; ++j)
        rows(b * per + i, j) = centers[b][j] + 0.005 * rng.normal();
  StackedSamples s;
  s.rows = rows;
  s.k_per_iteration = {2, 3, 4};

  for (const auto criterion :
       {ClusterConfig::Criterion::kIcl, ClusterConfig::Criterion::kBic}) {
    ClusterConfig cfg;
    cfg.criterion = criterion;
    const std::vector<ClusterReport> rep = cluster_components(s, 0.0, cfg);
    REQUIRE(rep.size() == 3);
    for (int b = 0; b < 3; ++b) {
      const ClusterReport& c = rep[static_cast<std::size_t>(b)];
      CHECK(std::abs(c.psi_mean - centers[b][0]) < 0.003);
      CHECK(std::abs(c.log_mod_mean - centers[b][1]) < 0.003);
      REQUIRE(c.weight_mean.size() == 2);
      CHECK(std::abs(c.weight_mean(0) - centers[b][2]) < 0.003);
      CHECK(std::abs(c.weight_mean(1) - centers[b][3]) < 0.003);
      CHECK(std::abs(c.psi_sd - 0.005) < 0.002);
      CHECK(c.count > per - 10);
      CHECK(c.count < per + 10);
      CHECK(c.band.empty());
      CHECK(c.psi_hz == 0.0);
    }
    // Ascending peak order is part of the contract.
    CHECK(rep[0].psi_mean < rep[1].psi_mean);
    CHECK(rep[1].psi_mean < rep[2].psi_mean);
  }

  // A sampling rate fills in Hz peaks and band labels.
  const std::vector<ClusterReport> hz = cluster_components(s, 100.0);
  REQUIRE(hz.size() == 3);
  CHECK(hz[0].psi_hz == doctest::Approx(10.0).epsilon(0.05));
  CHECK(hz[0].band == "alpha");
  CHECK(hz[1].band == "beta");
  CHECK(hz[2].band == "gamma");

  // Same seed, same answer.
  const std::vector<ClusterReport> again = cluster_components(s, 100.0);
  REQUIRE(again.size() == hz.size());
  for (std::size_t i = 0; i < hz.size(); ++i) {
    CHECK(again[i].psi_mean == hz[i].psi_mean);
    CHECK(again[i].count == hz[i].count);
  }

  StackedSamples tiny;
  tiny.rows.resize(1, 4);
  tiny.rows.setZero();
  CHECK_THROWS_AS(cluster_components(tiny), std::invalid_argument);
}

TEST_CASE("band labels use half-open edges") {
  CHECK(band_label(0.0) == "delta");
  CHECK(band_label(3.999) == "delta");
  CHECK(band_label(4.0) == "theta");
  CHECK(band_label(7.999) == "theta");
  CHECK(band_label(8.0) == "alpha");
  CHECK(band_label(11.999) == "alpha");
  CHECK(band_label(12.0) == "beta");
  CHECK(band_label(29.999) == "beta");
  CHECK(band_label(30.0) == "gamma");
  CHECK(band_label(59.999) == "gamma");
  CHECK(band_label(60.0) == "high");
  CHECK(band_label(250.0) == "high");
}

TEST_CASE("band table drops light clusters and keeps the max channel weight") {
  ClusterReport strong;
  strong.psi_mean = 0.105;
  strong.log_mod_mean = 0.25;
  strong.weight_mean = Eigen::Vector2d(0.3, 0.8);
  strong.count = 42;
  ClusterReport weak;
  weak.psi_mean = 0.3;
  weak.log_mod_mean = 0.5;
  weak.weight_mean = Eigen::Vector2d(0.05, 0.02);
  weak.count = 7;

  const std::vector<BandRow> rows = band_table({strong, weak}, 100.0, 0.1, "rest");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].band == "alpha");
  CHECK(rows[0].task == "rest");
  CHECK(rows[0].psi_hz == doctest::Approx(10.5));
  CHECK(rows[0].weight == 0.8);
  CHECK(rows[0].count == 42);

  // Everything passes with the threshold at zero.
  CHECK(band_table({strong, weak}, 100.0, 0.0).size() == 2);
  CHECK_THROWS_AS(band_table({strong}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(band_table({strong}, -1.0), std::invalid_argument);
}

TEST_CASE("band table csv has the fixed schema byte for byte") {
  BandRow a;
  a.band = "alpha";
  a.task = "rest";
  a.psi_hz = 10.5;
  a.log_mod = 0.25;
  a.weight = 0.8;
  a.count = 42;
  BandRow b;
  b.band = "gamma";
  b.task = "rest";
  b.psi_hz = 40.123456;
  b.log_mod = 1.0 / 3.0;
  b.weight = 0.125;
  b.count = 7;
  CHECK(band_table_csv({a, b}) ==
        "Band,Task,Psi_Hz,L,Lambda,Count\n"
        "alpha,rest,10.5,0.25,0.8,42\n"
        "gamma,rest,40.1235,0.333333,0.125,7\n");
  CHECK(band_table_csv({}) == "Band,Task,Psi_Hz,L,Lambda,Count\n");
}

TEST_CASE("cluster reports serialize to json and csv") {
  ClusterReport rep;
  rep.psi_mean = 0.1;
  rep.psi_sd = 0.01;
  rep.psi_hz = 10.0;
  rep.log_mod_mean = 0.5;
  rep.log_mod_sd = 0.05;
  rep.weight_mean = Eigen::Vector2d(0.6, 0.8);
  rep.weight_sd = Eigen::Vector2d(0.01, 0.02);
  rep.count = 13;
  rep.band = "alpha";

  const nlohmann::json doc = nlohmann::json::parse(report_to_json({rep}));
  REQUIRE(doc.contains("clusters"));
  REQUIRE(doc["clusters"].size() == 1);
  const nlohmann::json& c = doc["clusters"][0];
  CHECK(c["psi_mean"].get<double>() == 0.1);
  CHECK(c["band"].get<std::string>() == "alpha");
  CHECK(c["psi_hz"].get<double>() == 10.0);
  CHECK(c["count"].get<int>() == 13);
  CHECK(c["weight_mean"].get<std::vector<double>>() == std::vector<double>{0.6, 0.8});

  // Without a band the Hz fields stay out of the document.
  ClusterReport bare = rep;
  bare.band.clear();
  const nlohmann::json doc2 = nlohmann::json::parse(report_to_json({bare}));
  CHECK_FALSE(doc2["clusters"][0].contains("band"));
  CHECK_FALSE(doc2["clusters"][0].contains("psi_hz"));

  const std::string csv = report_to_csv({rep});
  CHECK(csv ==
        "cluster,count,band,psi_mean,psi_sd,psi_hz,log_mod_mean,log_mod_sd,"
        "weight_mean_1,weight_sd_1,weight_mean_2,weight_sd_2\n"
        "1,13,alpha,0.10000000000000001,0.01,10,0.5,0.050000000000000003,"
        "0.59999999999999998,0.01,0.80000000000000004,0.02\n");
}

TEST_CASE("spectra csv is long format with 1-based channels") {
  SpectralMatrix s;
  s.freq = 0.125;
  s.values.resize(2, 2);
  s.values << std::complex<double>(1.0, 0.0), std::complex<double>(0.5, 0.25),
      std::complex<double>(0.5, -0.25), std::complex<double>(2.0, 0.0);
  CHECK(spectra_to_csv({s}) ==
        "freq,i,j,re,im\n"
        "0.125,1,1,1,0\n"
        "0.125,1,2,0.5,0.25\n"
        "0.125,2,1,0.5,-0.25\n"
        "0.125,2,2,2,0\n");
}

TEST_CASE("mean spectral matrix averages the retained samples") {
  Eigen::MatrixXd lam1(2, 1), lam2(2, 2);
  lam1 << 0.8, 0.6;
  lam2 << 0.6, 0.8, 0.8, 0.6;
  ChainTrace t0, t1;
  t0.channels = 2;
  t1.channels = 2;
  t0.records.push_back(make_record(0, 1.0, {0.1}, {0.3}, lam1, 0.04));
  t0.records.push_back(make_record(1, 2.0, {0.2, 0.4}, {0.7, 0.9}, lam2, 0.06));
  t1.records.push_back(make_record(0, 3.0, {0.3}, {0.5}, lam1, 0.08));

  const std::vector<std::pair<int, int>> retained{{0, 1}, {1, 0}};
  Eigen::VectorXd grid(3);
  grid << 0.1, 0.25, 0.4;
  const std::vector<SpectralMatrix> mean = mean_spectral_matrix({t0, t1}, retained, grid);
  REQUIRE(mean.size() == 3);

  MixtureModel m1;
  m1.kernels = {Ar2Kernel{0.2, 0.7}, Ar2Kernel{0.4, 0.9}};
  m1.weights = lam2;
  m1.noise_var = 0.06;
  MixtureModel m2;
  m2.kernels = {Ar2Kernel{0.3, 0.5}};
  m2.weights = lam1;
  m2.noise_var = 0.08;
  for (int g = 0; g < 3; ++g) {
    CHECK(mean[static_cast<std::size_t>(g)].freq == grid(g));
    const Eigen::MatrixXcd want =
        0.5 * (spectral_matrix(m1, grid(g)).values + spectral_matrix(m2, grid(g)).values);
    const Eigen::MatrixXcd got = mean[static_cast<std::size_t>(g)].values;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        CHECK(std::abs(got(i, j) - want(i, j)) <= 1e-13 * (1.0 + std::abs(want(i, j))));
  }

  CHECK_THROWS_AS(mean_spectral_matrix({t0, t1}, {}, grid), std::invalid_argument);
}
