// Batch front end. Five subcommands cover the full workflow:
//
//   simulate   scenario data + its exact spectrum
//   fit        Metropolis-within-Gibbs chains on a CSV series
//   summarize  cluster reports, band table, mean spectrum, model file
//   evaluate   replicated IAE study against the periodogram baseline
//   measures   coherence / PDC grids from a fitted model file
//
// Every command resolves its configuration from flags plus an optional JSON
// config file whose values override the flags, writes the resolved config
// beside its outputs, and stages everything as temp files renamed into place
// only after the whole command succeeds, so errors never leave partial
// output behind. Exit codes: 0 success, 2 usage, 3 data, 4 numeric.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mbmard/dp_sampler.hpp"
#include "mbmard/errors.hpp"
#include "mbmard/mixture_model.hpp"
#include "mbmard/parallel.hpp"
#include "mbmard/posterior_summary.hpp"
#include "mbmard/simkit.hpp"
#include "mbmard/whittle_data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mbmard;

namespace {

// Bad flag values or combinations noticed after parsing; exits like a CLI11
// parse error would.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// One command's output directory. Files are staged as <name>.tmp and renamed
// into place together by commit(); uncommitted temp files are removed on
// destruction.
class StagedDir {
 public:
  explicit StagedDir(const std::string& dir) : dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (committed_) return;
    for (const auto& entry : staged_) {
      std::error_code ec;
      fs::remove(entry.first, ec);
    }
  }

  // Registers `name` and returns the temp path a writer should produce.
  std::string stage(const std::string& name) {
    fs::path tmp = dir_ / (name + ".tmp");
    staged_.emplace_back(tmp, dir_ / name);
    names_.push_back(name);
    return tmp.string();
  }

  void add_text(const std::string& name, const std::string& content) {
    const std::string tmp = stage(name);
    std::ofstream f(tmp, std::ios::trunc | std::ios::binary);
    if (!f) throw DataError("cannot write " + tmp);
    f << content;
    f.flush();
    if (!f) throw DataError("write failed for " + tmp);
  }

  // Names staged so far, the manifest payload.
  const std::vector<std::string>& names() const { return names_; }

  void commit() {
    for (const auto& entry : staged_) fs::rename(entry.first, entry.second);
    committed_ = true;
  }

 private:
  fs::path dir_;
  std::vector<std::pair<fs::path, fs::path>> staged_;
  std::vector<std::string> names_;
  bool committed_ = false;
};

std::string manifest_json(const std::string& command, const std::vector<std::string>& files) {
  json m;
  m["command"] = command;
  m["files"] = files;
  return m.dump(2) + "\n";
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Applies the JSON config file at `path` (when given) on top of the parsed
// flags: any key present in the file overwrites the struct field bound to it.
// Unknown keys and command mismatches are rejected so stale files fail loudly.
template <class Fields>
void apply_config_file(const std::string& command, const std::string& path, Fields&& with_fields) {
  if (path.empty()) return;
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  if (!doc.is_object()) throw DataError(path + ": expected a JSON object");
  if (doc.contains("command") && doc["command"].get<std::string>() != command)
    throw DataError(path + ": config is for command '" + doc["command"].get<std::string>() +
                    "', not '" + command + "'");
  std::set<std::string> known{"command"};
  try {
    with_fields([&](const char* key, auto& value) {
      known.insert(key);
      if (doc.contains(key)) value = doc.at(key).template get<std::decay_t<decltype(value)>>();
    });
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  for (const auto& item : doc.items())
    if (!known.count(item.key())) throw DataError(path + ": unknown key '" + item.key() + "'");
}

// The fully resolved configuration a command ran with; written beside its
// outputs so rerunning with --config <that file> reproduces them bitwise.
template <class Fields>
json resolved_config(const std::string& command, Fields&& with_fields) {
  json out;
  out["command"] = command;
  with_fields([&](const char* key, auto& value) { out[key] = value; });
  return out;
}

ScenarioSpec load_scenario(const std::string& name, const std::string& file) {
  if (!file.empty()) return scenario_from_json(read_text_file(file));
  if (name == "ar2mix") return scenario1();
  if (name == "misspec") return scenario2();
  throw UsageError("unknown scenario '" + name + "' (expected ar2mix or misspec)");
}

void require_even_length(int t_len) {
  if (t_len < 256 || t_len % 2 != 0)
    throw UsageError("--T must be even and at least 256, got " + std::to_string(t_len));
}

Eigen::VectorXd frequency_grid(int points) {
  if (points < 2) throw UsageError("--grid-points must be at least 2");
  return Eigen::VectorXd::LinSpaced(points, 0.0, 0.5);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateCfg {
  std::string scenario = "ar2mix";
  std::string scenario_file;
  std::string out;
  int t_len = 1000;
  std::uint64_t seed = 1;
  int grid_points = 512;
  std::string config;
};

template <class F>
void simulate_fields(SimulateCfg& c, F&& f) {
  f("scenario", c.scenario);
  f("scenario_file", c.scenario_file);
  f("out", c.out);
  f("T", c.t_len);
  f("seed", c.seed);
  f("grid_points", c.grid_points);
}

int cmd_simulate(SimulateCfg c) {
  apply_config_file("simulate", c.config, [&](auto&& f) { simulate_fields(c, f); });
  if (c.out.empty()) throw UsageError("simulate: --out is required");
  require_even_length(c.t_len);
  const Eigen::VectorXd freqs = frequency_grid(c.grid_points);
  const json resolved = resolved_config("simulate", [&](auto&& f) { simulate_fields(c, f); });

  const ScenarioSpec spec = load_scenario(c.scenario, c.scenario_file);
  const ScenarioData data = gen_scenario(spec, c.t_len, c.seed);
  const std::vector<SpectralMatrix> truth = data.truth.grid(freqs, false);

  StagedDir out(c.out);
  write_series_csv(data.series, out.stage("series.csv"));
  out.add_text("true_spectrum.csv", spectra_to_csv(truth));
  out.add_text("scenario.json", scenario_to_json(spec) + "\n");
  out.add_text("config.json", resolved.dump(2) + "\n");
  out.add_text("manifest.json", manifest_json("simulate", out.names()));
  out.commit();
  std::printf("simulate: %s, %d samples x %d channels -> %s\n", spec.name.c_str(), c.t_len,
              static_cast<int>(spec.mixing.rows()), c.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// fit

struct FitCfg {
  std::string data;
  std::string out;
  int iterations = 50000;
  int chains = 3;
  std::uint64_t seed = 1;
  std::string psi_prior = "uniform";      // uniform | beta22
  std::string logmod_prior = "jeffreys";  // jeffreys | uniform
  std::string k_prior = "dp";             // dp | uniform
  int k_max = 30;
  double alpha_shape = 0.1;
  double alpha_rate = 0.1;
  int truncation = 50;
  double l_min = 1e-4;
  double l_max = 2.0;
  double noise_floor = 1e-6;
  std::string escobar_count = "components";  // components | fourier
  double psi_step = 0.2;
  double logmod_step = 0.15;
  double noise_step = 0.15;
  double stick_step = 0.3;
  int k0 = 3;
  double log_mod0 = 0.5;
  double noise0 = 0.1;
  double alpha0 = 1.0;
  bool raw = false;
  int threads = 0;
  std::string config;
};

template <class F>
void fit_fields(FitCfg& c, F&& f) {
  f("data", c.data);
  f("out", c.out);
  f("iterations", c.iterations);
  f("chains", c.chains);
  f("seed", c.seed);
  f("psi_prior", c.psi_prior);
  f("logmod_prior", c.logmod_prior);
  f("k_prior", c.k_prior);
  f("k_max", c.k_max);
  f("alpha_shape", c.alpha_shape);
  f("alpha_rate", c.alpha_rate);
  f("truncation", c.truncation);
  f("l_min", c.l_min);
  f("l_max", c.l_max);
  f("noise_floor", c.noise_floor);
  f("escobar_count", c.escobar_count);
  f("psi_step", c.psi_step);
  f("logmod_step", c.logmod_step);
  f("noise_step", c.noise_step);
  f("stick_step", c.stick_step);
  f("k0", c.k0);
  f("log_mod0", c.log_mod0);
  f("noise0", c.noise0);
  f("alpha0", c.alpha0);
  f("raw", c.raw);
  f("threads", c.threads);
}

SamplerConfig sampler_config(const FitCfg& c) {
  SamplerConfig cfg;
  if (c.iterations < 1) throw UsageError("--iterations must be positive");
  if (c.chains < 1) throw UsageError("--chains must be positive");
  cfg.iterations = c.iterations;
  cfg.chains = c.chains;
  cfg.seed = c.seed;

  PriorConfig& prior = cfg.prior;
  if (c.psi_prior == "uniform")
    prior.psi_prior = PriorConfig::PsiPrior::kUniform;
  else if (c.psi_prior == "beta22")
    prior.psi_prior = PriorConfig::PsiPrior::kBeta22;
  else
    throw UsageError("--psi-prior must be uniform or beta22");
  if (c.logmod_prior == "jeffreys")
    prior.logmod_prior = PriorConfig::LogModPrior::kJeffreys;
  else if (c.logmod_prior == "uniform")
    prior.logmod_prior = PriorConfig::LogModPrior::kUniform;
  else
    throw UsageError("--logmod-prior must be jeffreys or uniform");
  if (c.k_prior == "dp")
    prior.k_prior = PriorConfig::KPrior::kDpInduced;
  else if (c.k_prior == "uniform")
    prior.k_prior = PriorConfig::KPrior::kDiscreteUniform;
  else
    throw UsageError("--k-prior must be dp or uniform");
  if (c.escobar_count == "components")
    prior.escobar_count = PriorConfig::EscobarCount::kComponents;
  else if (c.escobar_count == "fourier")
    prior.escobar_count = PriorConfig::EscobarCount::kFourier;
  else
    throw UsageError("--escobar-count must be components or fourier");
  if (c.k_max < 1) throw UsageError("--k-max must be positive");
  if (c.truncation < 2) throw UsageError("--truncation must be at least 2");
  if (!(c.l_min > 0.0) || !(c.l_max > c.l_min))
    throw UsageError("log-modulus bounds need 0 < l_min < l_max");
  if (!(c.alpha_shape > 0.0) || !(c.alpha_rate > 0.0))
    throw UsageError("alpha prior parameters must be positive");
  if (!(c.noise_floor > 0.0)) throw UsageError("--noise-floor must be positive");
  prior.k_max = c.k_max;
  prior.alpha_shape = c.alpha_shape;
  prior.alpha_rate = c.alpha_rate;
  prior.truncation_v = c.truncation;
  prior.l_min = c.l_min;
  prior.l_max = c.l_max;
  prior.noise_floor = c.noise_floor;

  ProposalConfig& prop = cfg.proposal;
  if (!(c.psi_step > 0.0) || !(c.logmod_step > 0.0) || !(c.noise_step > 0.0) ||
      !(c.stick_step > 0.0))
    throw UsageError("proposal step sizes must be positive");
  prop.psi_step_frac = c.psi_step;
  prop.logmod_step = c.logmod_step;
  prop.noise_step = c.noise_step;
  prop.stick_step = c.stick_step;

  InitConfig& init = cfg.init;
  if (c.k0 < 1) throw UsageError("--k0 must be positive");
  if (!(c.log_mod0 > 0.0) || !(c.noise0 > 0.0) || !(c.alpha0 > 0.0))
    throw UsageError("initial values must be positive");
  init.k0 = c.k0;
  init.log_mod0 = c.log_mod0;
  init.noise0 = c.noise0;
  init.alpha0 = c.alpha0;
  return cfg;
}

int cmd_fit(FitCfg c) {
  apply_config_file("fit", c.config, [&](auto&& f) { fit_fields(c, f); });
  if (c.data.empty()) throw UsageError("fit: --data is required");
  if (c.out.empty()) throw UsageError("fit: --out is required");
  const SamplerConfig cfg = sampler_config(c);
  if (c.threads > 0) set_thread_count(c.threads);
  const json resolved = resolved_config("fit", [&](auto&& f) { fit_fields(c, f); });

  MultiChannelSeries series = read_series_csv(c.data);
  if (!c.raw) series = standardize(series);
  const FourierData fd = dft(series);
  std::printf("fit: %d channels, %d frequencies, %d chains x %d iterations\n",
              static_cast<int>(fd.coeffs.rows()), static_cast<int>(fd.freqs.size()), cfg.chains,
              cfg.iterations);
  std::fflush(stdout);
  const std::vector<ChainTrace> traces = run_chains(fd, cfg);

  StagedDir out(c.out);
  for (int ch = 0; ch < cfg.chains; ++ch)
    write_trace_csv(traces[static_cast<std::size_t>(ch)],
                    out.stage("trace_" + std::to_string(ch) + ".csv"));
  out.add_text("config.json", resolved.dump(2) + "\n");
  out.add_text("manifest.json", manifest_json("fit", out.names()));
  out.commit();
  std::printf("fit: wrote %d trace files -> %s\n", cfg.chains, c.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// summarize

struct SummarizeCfg {
  std::string traces;
  std::string out;
  int burnin = -1;  // negative: resolve to half the shortest chain
  double quantile = 0.95;
  double min_weight = 0.1;
  double sampling_rate = 0.0;
  bool eeg_preset = false;
  int grid_points = 512;
  int restarts = 10;
  std::uint64_t cluster_seed = 1;
  std::string criterion = "icl";  // icl | bic
  std::string task;
  std::string config;
};

template <class F>
void summarize_fields(SummarizeCfg& c, F&& f) {
  f("traces", c.traces);
  f("out", c.out);
  f("burnin", c.burnin);
  f("quantile", c.quantile);
  f("min_weight", c.min_weight);
  f("sampling_rate", c.sampling_rate);
  f("eeg_preset", c.eeg_preset);
  f("grid_points", c.grid_points);
  f("restarts", c.restarts);
  f("cluster_seed", c.cluster_seed);
  f("criterion", c.criterion);
  f("task", c.task);
}

// trace_<index>.csv files under `dir`, ordered by index.
std::vector<std::string> trace_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<std::pair<long, std::string>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() < 11 || name.rfind("trace_", 0) != 0 ||
        name.substr(name.size() - 4) != ".csv")
      continue;
    const std::string digits = name.substr(6, name.size() - 10);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) continue;
    found.emplace_back(std::stol(digits), entry.path().string());
  }
  if (found.empty()) throw DataError("no trace_<n>.csv files in " + dir);
  std::sort(found.begin(), found.end());
  std::vector<std::string> paths;
  paths.reserve(found.size());
  for (auto& f : found) paths.push_back(std::move(f.second));
  return paths;
}

// Posterior cluster means assembled into a proper model: one kernel per
// cluster, weight columns from the cluster channel means with rows projected
// back onto the unit-sum-of-squares constraint, noise at the retained mean.
MixtureModel assemble_model(const std::vector<ClusterReport>& report, double noise_mean) {
  if (report.empty()) throw DataError("no clusters to assemble into a model");
  const Eigen::Index n = report.front().weight_mean.size();
  MixtureModel m;
  m.noise_var = noise_mean;
  m.weights.resize(n, static_cast<Eigen::Index>(report.size()));
  for (std::size_t c = 0; c < report.size(); ++c) {
    m.kernels.push_back(Ar2Kernel{report[c].psi_mean, report[c].log_mod_mean});
    m.weights.col(static_cast<Eigen::Index>(c)) = report[c].weight_mean;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = m.weights.row(i).norm();
    if (!(norm > 1e-9))
      throw NumericError("assembled model has a degenerate weight row for channel " +
                         std::to_string(i + 1));
    m.weights.row(i) /= norm;
  }
  canonicalize(m);
  return m;
}

std::string nodes_csv(const std::vector<ClusterReport>& report) {
  std::string out = "channel,cluster,weight\n";
  for (std::size_t c = 0; c < report.size(); ++c)
    for (Eigen::Index i = 0; i < report[c].weight_mean.size(); ++i) {
      out += std::to_string(i + 1);
      out += ',';
      out += std::to_string(c + 1);
      out += ',';
      out += fmt17(report[c].weight_mean(i));
      out += '\n';
    }
  return out;
}

int cmd_summarize(SummarizeCfg c) {
  apply_config_file("summarize", c.config, [&](auto&& f) { summarize_fields(c, f); });
  if (c.traces.empty()) throw UsageError("summarize: --traces is required");
  if (c.out.empty()) throw UsageError("summarize: --out is required");
  if (!(c.quantile >= 0.0 && c.quantile < 1.0)) throw UsageError("--quantile must lie in [0, 1)");
  if (c.min_weight < 0.0) throw UsageError("--min-weight must be nonnegative");
  if (c.sampling_rate < 0.0) throw UsageError("--sampling-rate must be positive");
  if (c.restarts < 1) throw UsageError("--restarts must be positive");
  if (c.criterion != "icl" && c.criterion != "bic")
    throw UsageError("--criterion must be icl or bic");
  if (c.eeg_preset && c.sampling_rate == 0.0) c.sampling_rate = 256.0;
  const Eigen::VectorXd freqs = frequency_grid(c.grid_points);

  std::vector<ChainTrace> traces;
  int shortest = 0;
  for (const std::string& path : trace_files(c.traces)) {
    traces.push_back(read_trace_csv(path));
    const int len = static_cast<int>(traces.back().records.size());
    shortest = traces.size() == 1 ? len : std::min(shortest, len);
  }
  if (c.burnin < 0) c.burnin = shortest / 2;
  if (c.burnin >= shortest)
    throw DataError("burn-in " + std::to_string(c.burnin) + " >= recorded iterations " +
                    std::to_string(shortest));
  const json resolved = resolved_config("summarize", [&](auto&& f) { summarize_fields(c, f); });

  const StackedSamples stacked = filter_top(traces, c.burnin, c.quantile);
  ClusterConfig cc;
  cc.criterion =
      c.criterion == "bic" ? ClusterConfig::Criterion::kBic : ClusterConfig::Criterion::kIcl;
  cc.restarts = c.restarts;
  cc.seed = c.cluster_seed;
  const std::vector<ClusterReport> report = cluster_components(stacked, c.sampling_rate, cc);
  const std::vector<SpectralMatrix> mean_spec = mean_spectral_matrix(traces, stacked.retained, freqs);

  double noise_mean = 0.0;
  for (const auto& idx : stacked.retained)
    noise_mean += traces[static_cast<std::size_t>(idx.first)]
                      .records[static_cast<std::size_t>(idx.second)]
                      .noise_var;
  noise_mean /= static_cast<double>(stacked.retained.size());

  StagedDir out(c.out);
  out.add_text("clusters.json", report_to_json(report));
  out.add_text("clusters.csv", report_to_csv(report));
  if (c.sampling_rate > 0.0)
    out.add_text("band_table.csv",
                 band_table_csv(band_table(report, c.sampling_rate, c.min_weight, c.task)));
  out.add_text("mean_spectrum.csv", spectra_to_csv(mean_spec));
  out.add_text("nodes.csv", nodes_csv(report));
  out.add_text("model.json", to_json(assemble_model(report, noise_mean)));
  out.add_text("config.json", resolved.dump(2) + "\n");
  out.add_text("manifest.json", manifest_json("summarize", out.names()));
  out.commit();
  std::printf("summarize: %d retained draws, %d clusters -> %s\n",
              static_cast<int>(stacked.retained.size()), static_cast<int>(report.size()),
              c.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateCfg {
  std::string scenario = "ar2mix";
  std::string scenario_file;
  std::string out;
  int t_len = 1000;
  int replicates = 20;
  int iterations = 4000;
  int chains = 1;
  int burnin = 2000;
  double quantile = 0.95;
  std::uint64_t seed = 1;
  int halfwidth = 0;
  int grid_points = 512;
  int threads = 0;
  std::string config;
};

template <class F>
void evaluate_fields(EvaluateCfg& c, F&& f) {
  f("scenario", c.scenario);
  f("scenario_file", c.scenario_file);
  f("out", c.out);
  f("T", c.t_len);
  f("replicates", c.replicates);
  f("iterations", c.iterations);
  f("chains", c.chains);
  f("burnin", c.burnin);
  f("quantile", c.quantile);
  f("seed", c.seed);
  f("halfwidth", c.halfwidth);
  f("grid_points", c.grid_points);
  f("threads", c.threads);
}

int cmd_evaluate(EvaluateCfg c) {
  apply_config_file("evaluate", c.config, [&](auto&& f) { evaluate_fields(c, f); });
  if (c.out.empty()) throw UsageError("evaluate: --out is required");
  require_even_length(c.t_len);
  if (c.replicates < 1) throw UsageError("--replicates must be positive");
  if (c.iterations < 1 || c.chains < 1) throw UsageError("iterations and chains must be positive");
  if (c.burnin < 0 || c.burnin >= c.iterations)
    throw UsageError("--burnin must lie in [0, iterations)");
  if (!(c.quantile >= 0.0 && c.quantile < 1.0)) throw UsageError("--quantile must lie in [0, 1)");
  if (c.halfwidth < 0) throw UsageError("--halfwidth must be nonnegative");
  const Eigen::VectorXd freqs = frequency_grid(c.grid_points);
  if (c.threads > 0) set_thread_count(c.threads);
  const json resolved = resolved_config("evaluate", [&](auto&& f) { evaluate_fields(c, f); });

  const ScenarioSpec spec = load_scenario(c.scenario, c.scenario_file);
  std::string csv = "replicate,method,iae\n";
  std::vector<double> fit_errors, base_errors;
  for (int rep = 0; rep < c.replicates; ++rep) {
    // Adjacent raw seeds land in unrelated mixed streams, so the generator
    // and the sampler never share a sequence.
    const std::uint64_t data_seed = c.seed + 2ull * static_cast<std::uint64_t>(rep);
    const ScenarioData data = gen_scenario(spec, c.t_len, data_seed);
    const FourierData fd = dft(standardize(data.series));

    SamplerConfig cfg;
    cfg.iterations = c.iterations;
    cfg.chains = c.chains;
    cfg.seed = data_seed + 1;
    const std::vector<ChainTrace> traces = run_chains(fd, cfg);
    const StackedSamples stacked = filter_top(traces, c.burnin, c.quantile);
    const std::vector<SpectralMatrix> est = mean_spectral_matrix(traces, stacked.retained, freqs);
    const double fit_iae = iae(est, data.truth, true);

    const std::vector<SpectralMatrix> base = pad_spectrum_grid(periodogram_baseline(fd, c.halfwidth));
    const double base_iae = iae(base, data.truth, true);

    fit_errors.push_back(fit_iae);
    base_errors.push_back(base_iae);
    csv += std::to_string(rep + 1) + ",mbmard," + fmt17(fit_iae) + "\n";
    csv += std::to_string(rep + 1) + ",periodogram," + fmt17(base_iae) + "\n";
    std::fprintf(stderr, "replicate %d/%d: mbmard %.4g, periodogram %.4g\n", rep + 1,
                 c.replicates, fit_iae, base_iae);
  }

  StagedDir out(c.out);
  out.add_text("iae.csv", csv);
  out.add_text("config.json", resolved.dump(2) + "\n");
  out.add_text("manifest.json", manifest_json("evaluate", out.names()));
  out.commit();
  std::printf("evaluate: %d replicates, median IAE mbmard %.6g, periodogram %.6g -> %s\n",
              c.replicates, median(fit_errors), median(base_errors), c.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// measures

struct MeasuresCfg {
  std::string model;
  std::string out;
  int grid_points = 512;
  std::vector<std::string> coh_pairs;  // "a-b", 1-based channels; empty = all
  std::vector<std::string> pdc_pairs;  // "channel-component"; empty = all
  std::string config;
};

template <class F>
void measures_fields(MeasuresCfg& c, F&& f) {
  f("model", c.model);
  f("out", c.out);
  f("grid_points", c.grid_points);
  f("coh_pairs", c.coh_pairs);
  f("pdc_pairs", c.pdc_pairs);
}

// "a-b" with 1-based indices; bounds come from the loaded model.
std::pair<int, int> parse_pair(const std::string& token, int max_a, int max_b) {
  const std::size_t dash = token.find('-');
  if (dash == std::string::npos || dash == 0 || dash + 1 >= token.size())
    throw UsageError("pair '" + token + "' is not of the form a-b");
  int a = 0, b = 0;
  try {
    std::size_t used = 0;
    a = std::stoi(token.substr(0, dash), &used);
    if (used != dash) throw std::invalid_argument(token);
    const std::string rest = token.substr(dash + 1);
    b = std::stoi(rest, &used);
    if (used != rest.size()) throw std::invalid_argument(token);
  } catch (const std::exception&) {
    throw UsageError("pair '" + token + "' is not of the form a-b");
  }
  if (a < 1 || a > max_a || b < 1 || b > max_b)
    throw DataError("pair '" + token + "' is out of range (" + std::to_string(max_a) + " x " +
                    std::to_string(max_b) + ")");
  return {a - 1, b - 1};
}

int cmd_measures(MeasuresCfg c) {
  apply_config_file("measures", c.config, [&](auto&& f) { measures_fields(c, f); });
  if (c.model.empty()) throw UsageError("measures: --model is required");
  if (c.out.empty()) throw UsageError("measures: --out is required");
  const Eigen::VectorXd freqs = frequency_grid(c.grid_points);
  const json resolved = resolved_config("measures", [&](auto&& f) { measures_fields(c, f); });

  const MixtureModel m = model_from_json(read_text_file(c.model));
  const int n = m.channels();
  const int k = m.components();

  std::vector<std::pair<int, int>> coh;
  if (c.coh_pairs.empty()) {
    for (int a = 0; a < n; ++a)
      for (int b = a; b < n; ++b) coh.emplace_back(a, b);
  } else {
    for (const std::string& token : c.coh_pairs) coh.push_back(parse_pair(token, n, n));
  }
  std::vector<std::pair<int, int>> pdc;
  if (c.pdc_pairs.empty()) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) pdc.emplace_back(i, j);
  } else {
    for (const std::string& token : c.pdc_pairs) pdc.push_back(parse_pair(token, n, k));
  }

  std::string coh_csv = "freq,a,b,coherence\n";
  for (const auto& pair : coh)
    for (Eigen::Index q = 0; q < freqs.size(); ++q) {
      coh_csv += fmt17(freqs(q)) + "," + std::to_string(pair.first + 1) + "," +
                 std::to_string(pair.second + 1) + "," +
                 fmt17(coherence(m, pair.first, pair.second, freqs(q))) + "\n";
    }
  std::string pdc_csv = "freq,channel,component,pdc\n";
  for (const auto& pair : pdc)
    for (Eigen::Index q = 0; q < freqs.size(); ++q) {
      pdc_csv += fmt17(freqs(q)) + "," + std::to_string(pair.first + 1) + "," +
                 std::to_string(pair.second + 1) + "," +
                 fmt17(pdc_latent_to_signal(m, pair.first, pair.second, freqs(q))) + "\n";
    }
  // Channel-to-channel PDC is frequency-free: the identity pattern.
  std::string sig_csv = "a,b,pdc\n";
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      sig_csv += std::to_string(a + 1) + "," + std::to_string(b + 1) + "," +
                 fmt17(pdc_signal_to_signal(m, a, b, 0.25)) + "\n";

  StagedDir out(c.out);
  out.add_text("coherence.csv", coh_csv);
  out.add_text("pdc_latent.csv", pdc_csv);
  out.add_text("pdc_signal.csv", sig_csv);
  out.add_text("config.json", resolved.dump(2) + "\n");
  out.add_text("manifest.json", manifest_json("measures", out.names()));
  out.commit();
  std::printf("measures: %d coherence pairs, %d pdc pairs on %d frequencies -> %s\n",
              static_cast<int>(coh.size()), static_cast<int>(pdc.size()), c.grid_points,
              c.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("MBMARD_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) set_thread_count(static_cast<int>(v));
  }

  CLI::App app{
      "mbmard: spectral decomposition of multivariate time series into "
      "latent AR(2) oscillations"};
  app.require_subcommand(1);
  std::function<int()> run;

  SimulateCfg sim;
  CLI::App* s = app.add_subcommand("simulate", "Generate scenario data and its true spectrum");
  s->add_option("--scenario", sim.scenario, "Built-in scenario: ar2mix or misspec")
      ->capture_default_str();
  s->add_option("--scenario-file", sim.scenario_file, "JSON scenario spec (overrides --scenario)");
  s->add_option("--out", sim.out, "Output directory");
  s->add_option("--T", sim.t_len, "Series length, even and >= 256")->capture_default_str();
  s->add_option("--seed", sim.seed, "Generator seed")->capture_default_str();
  s->add_option("--grid-points", sim.grid_points, "True-spectrum grid size on [0, 0.5]")
      ->capture_default_str();
  s->add_option("--config", sim.config, "JSON config file; its values override flags");
  s->callback([&] { run = [&] { return cmd_simulate(sim); }; });

  FitCfg fit;
  CLI::App* f = app.add_subcommand("fit", "Run the posterior sampler on a CSV series");
  f->add_option("--data", fit.data, "Input series CSV (rows = time, columns = channels)");
  f->add_option("--out", fit.out, "Output directory");
  f->add_option("--iterations", fit.iterations, "Iterations per chain")->capture_default_str();
  f->add_option("--chains", fit.chains, "Independent chains")->capture_default_str();
  f->add_option("--seed", fit.seed, "Sampler seed; chain c uses stream c")->capture_default_str();
  f->add_option("--psi-prior", fit.psi_prior, "Peak-location prior: uniform or beta22")
      ->capture_default_str();
  f->add_option("--logmod-prior", fit.logmod_prior, "Bandwidth prior: jeffreys or uniform")
      ->capture_default_str();
  f->add_option("--k-prior", fit.k_prior, "Component-count prior: dp or uniform")
      ->capture_default_str();
  f->add_option("--k-max", fit.k_max, "Component cap under the uniform count prior")
      ->capture_default_str();
  f->add_option("--alpha-shape", fit.alpha_shape, "Gamma shape of the DP precision prior")
      ->capture_default_str();
  f->add_option("--alpha-rate", fit.alpha_rate, "Gamma rate of the DP precision prior")
      ->capture_default_str();
  f->add_option("--truncation", fit.truncation, "Stick-breaking truncation level")
      ->capture_default_str();
  f->add_option("--l-min", fit.l_min, "Lower log-modulus bound")->capture_default_str();
  f->add_option("--l-max", fit.l_max, "Upper log-modulus bound (uniform prior only)")
      ->capture_default_str();
  f->add_option("--noise-floor", fit.noise_floor, "Lower bound of the noise level")
      ->capture_default_str();
  f->add_option("--escobar-count", fit.escobar_count,
                "Sample-size role in the precision update: components or fourier")
      ->capture_default_str();
  f->add_option("--psi-step", fit.psi_step, "Peak proposal sd as a fraction of the subinterval")
      ->capture_default_str();
  f->add_option("--logmod-step", fit.logmod_step, "Log-modulus proposal sd (log scale)")
      ->capture_default_str();
  f->add_option("--noise-step", fit.noise_step, "Noise proposal sd (log scale)")
      ->capture_default_str();
  f->add_option("--stick-step", fit.stick_step, "Stick/atom proposal sd (logit scale)")
      ->capture_default_str();
  f->add_option("--k0", fit.k0, "Initial component count")->capture_default_str();
  f->add_option("--log-mod0", fit.log_mod0, "Initial log-modulus")->capture_default_str();
  f->add_option("--noise0", fit.noise0, "Initial noise level")->capture_default_str();
  f->add_option("--alpha0", fit.alpha0, "Initial DP precision")->capture_default_str();
  f->add_flag("--raw", fit.raw, "Skip per-channel standardization");
  f->add_option("--threads", fit.threads, "Worker threads (default: MBMARD_THREADS or 1)");
  f->add_option("--config", fit.config, "JSON config file; its values override flags");
  f->callback([&] { run = [&] { return cmd_fit(fit); }; });

  SummarizeCfg sum;
  CLI::App* u = app.add_subcommand("summarize", "Cluster traces into an oscillation report");
  u->add_option("--traces", sum.traces, "Directory holding trace_<n>.csv files");
  u->add_option("--out", sum.out, "Output directory");
  u->add_option("--burnin", sum.burnin,
                "Iterations to discard per chain (default: half the shortest chain)");
  u->add_option("--quantile", sum.quantile, "Pooled log-likelihood quantile kept")
      ->capture_default_str();
  u->add_option("--min-weight", sum.min_weight, "Band-table cutoff on the largest channel weight")
      ->capture_default_str();
  CLI::Option* rate =
      u->add_option("--sampling-rate", sum.sampling_rate, "Sampling rate in Hz for band labels");
  CLI::Option* eeg = u->add_flag("--eeg-preset", sum.eeg_preset, "Use the 256 Hz EEG rate");
  rate->excludes(eeg);
  eeg->excludes(rate);
  u->add_option("--grid-points", sum.grid_points, "Mean-spectrum grid size on [0, 0.5]")
      ->capture_default_str();
  u->add_option("--restarts", sum.restarts, "EM restarts per candidate cluster count")
      ->capture_default_str();
  u->add_option("--cluster-seed", sum.cluster_seed, "EM initialization seed")
      ->capture_default_str();
  u->add_option("--criterion", sum.criterion, "Cluster-count criterion: icl or bic")
      ->capture_default_str();
  u->add_option("--task", sum.task, "Label written to the band table's Task column");
  u->add_option("--config", sum.config, "JSON config file; its values override flags");
  u->callback([&] { run = [&] { return cmd_summarize(sum); }; });

  EvaluateCfg ev;
  CLI::App* e = app.add_subcommand("evaluate",
                                   "Replicated IAE study against the periodogram baseline");
  e->add_option("--scenario", ev.scenario, "Built-in scenario: ar2mix or misspec")
      ->capture_default_str();
  e->add_option("--scenario-file", ev.scenario_file, "JSON scenario spec (overrides --scenario)");
  e->add_option("--out", ev.out, "Output directory");
  e->add_option("--T", ev.t_len, "Series length per replicate")->capture_default_str();
  e->add_option("--replicates", ev.replicates, "Independent replicates")->capture_default_str();
  e->add_option("--iterations", ev.iterations, "Sampler iterations per replicate")
      ->capture_default_str();
  e->add_option("--chains", ev.chains, "Chains per replicate")->capture_default_str();
  e->add_option("--burnin", ev.burnin, "Iterations discarded per chain")->capture_default_str();
  e->add_option("--quantile", ev.quantile, "Pooled log-likelihood quantile kept")
      ->capture_default_str();
  e->add_option("--seed", ev.seed, "Base seed; replicate r derives its own pair")
      ->capture_default_str();
  e->add_option("--halfwidth", ev.halfwidth, "Periodogram box-smoothing halfwidth (0 = raw)")
      ->capture_default_str();
  e->add_option("--grid-points", ev.grid_points, "IAE grid size on [0, 0.5]")
      ->capture_default_str();
  e->add_option("--threads", ev.threads, "Worker threads (default: MBMARD_THREADS or 1)");
  e->add_option("--config", ev.config, "JSON config file; its values override flags");
  e->callback([&] { run = [&] { return cmd_evaluate(ev); }; });

  MeasuresCfg me;
  CLI::App* x = app.add_subcommand("measures", "Coherence and PDC grids from a model file");
  x->add_option("--model", me.model, "Fitted model JSON (summarize writes model.json)");
  x->add_option("--out", me.out, "Output directory");
  x->add_option("--grid-points", me.grid_points, "Frequency grid size on [0, 0.5]")
      ->capture_default_str();
  x->add_option("--coh-pairs", me.coh_pairs,
                "Channel pairs a-b for coherence (default: all unordered pairs)")
      ->delimiter(',');
  x->add_option("--pdc-pairs", me.pdc_pairs,
                "channel-component pairs for PDC (default: the full grid)")
      ->delimiter(',');
  x->add_option("--config", me.config, "JSON config file; its values override flags");
  x->callback([&] { run = [&] { return cmd_measures(me); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    return run ? run() : 2;
  } catch (const UsageError& err) {
    std::fprintf(stderr, "mbmard: %s\n", err.what());
    return 2;
  } catch (const DataError& err) {
    std::fprintf(stderr, "mbmard: data error: %s\n", err.what());
    return 3;
  } catch (const NumericError& err) {
    std::fprintf(stderr, "mbmard: numeric failure: %s\n", err.what());
    return 4;
  } catch (const fs::filesystem_error& err) {
    std::fprintf(stderr, "mbmard: data error: %s\n", err.what());
    return 3;
  } catch (const std::invalid_argument& err) {
    std::fprintf(stderr, "mbmard: data error: %s\n", err.what());
    return 3;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "mbmard: internal failure: %s\n", err.what());
    return 4;
  }
}
