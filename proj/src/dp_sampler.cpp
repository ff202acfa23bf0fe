#include "mbmard/dp_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mbmard/errors.hpp"
#include "mbmard/parallel.hpp"
#include "mbmard/spectral_kernel.hpp"

namespace mbmard {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logit(double p) { return std::log(p / (1.0 - p)); }
double inv_logit(double z) { return 1.0 / (1.0 + std::exp(-z)); }

bool mh_accept(Rng& rng, double log_acc) {
  // log(u) is finite, so a NaN log_acc rejects and +inf accepts.
  return std::log(rng.uniform()) < log_acc;
}

// Probability that the death move applied to a state with cutoffs `cuts`
// deletes interior cutoff m. Each flanking subinterval is selected with
// probability 1/k and then picks this shared edge with probability 1/2, or
// surely when its other edge is a domain boundary.
double edge_delete_prob(const Eigen::VectorXd& cuts, int m) {
  const int k = static_cast<int>(cuts.size()) - 1;
  const double from_left = (m - 1 == 0) ? 1.0 : 0.5;
  const double from_right = (m == k - 1) ? 1.0 : 0.5;
  return (from_left + from_right) / k;
}

Eigen::VectorXd insert_at(const Eigen::VectorXd& x, int pos, double value) {
  Eigen::VectorXd y(x.size() + 1);
  y.head(pos) = x.head(pos);
  y(pos) = value;
  y.tail(x.size() - pos) = x.tail(x.size() - pos);
  return y;
}

Eigen::VectorXd erase_at(const Eigen::VectorXd& x, int pos) {
  Eigen::VectorXd y(x.size() - 1);
  y.head(pos) = x.head(pos);
  y.tail(x.size() - pos - 1) = x.tail(x.size() - pos - 1);
  return y;
}

// Entry pos replaced by the pair (lo, hi).
Eigen::VectorXd split_at(const Eigen::VectorXd& x, int pos, double lo, double hi) {
  Eigen::VectorXd y(x.size() + 1);
  y.head(pos) = x.head(pos);
  y(pos) = lo;
  y(pos + 1) = hi;
  y.tail(x.size() - pos - 1) = x.tail(x.size() - pos - 1);
  return y;
}

// Entries pos and pos + 1 replaced by a single value.
Eigen::VectorXd merge_at(const Eigen::VectorXd& x, int pos, double value) {
  Eigen::VectorXd y(x.size() - 1);
  y.head(pos) = x.head(pos);
  y(pos) = value;
  y.tail(x.size() - pos - 2) = x.tail(x.size() - pos - 2);
  return y;
}

// Weight-matrix row i for k bins: stick weights fold into the bin their atom
// lands in, then the elementwise square root.
void lambda_row(const Eigen::MatrixXd& sticks, const Eigen::MatrixXd& atoms,
                int row, int k, Eigen::RowVectorXd& out) {
  const int v = static_cast<int>(sticks.cols());
  out.setZero(k);
  double remain = 1.0;
  for (int h = 0; h < v; ++h) {
    const double w = (h + 1 == v) ? remain : sticks(row, h) * remain;
    int bin = static_cast<int>(std::ceil(atoms(row, h) * k)) - 1;
    bin = std::clamp(bin, 0, k - 1);
    out(bin) += w;
    remain *= 1.0 - sticks(row, h);
  }
  out = out.array().sqrt();
}

// Reflects x into [a, b] by folding at both walls; the reflected walk is a
// symmetric proposal so no acceptance correction is needed.
double reflect_into(double x, double a, double b) {
  const double span = 2.0 * (b - a);
  double y = std::fmod(x - a, span);
  if (y < 0.0) y += span;
  return a + std::min(y, span - y);
}

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

Eigen::MatrixXd weights_from_sticks(const Eigen::MatrixXd& sticks,
                                    const Eigen::MatrixXd& atoms, int k) {
  if (sticks.rows() != atoms.rows() || sticks.cols() != atoms.cols())
    throw std::invalid_argument("sticks and atoms must have matching shapes");
  if (k < 1) throw std::invalid_argument("component count must be at least 1");
  const int n = static_cast<int>(sticks.rows());
  Eigen::MatrixXd lambda(n, k);
  Eigen::RowVectorXd row;
  for (int i = 0; i < n; ++i) {
    lambda_row(sticks, atoms, i, k, row);
    lambda.row(i) = row;
  }
  return lambda;
}

int k_cap(const PriorConfig& prior) {
  return prior.k_prior == PriorConfig::KPrior::kDiscreteUniform ? prior.k_max
                                                                : prior.truncation_v;
}

void validate_state(const ChainState& s, const PriorConfig& prior) {
  auto fail = [](const std::string& what) {
    throw std::logic_error("invalid chain state: " + what);
  };
  const int v = prior.truncation_v;
  if (s.sticks.cols() != v || s.atoms.cols() != v) fail("truncation level mismatch");
  if (s.sticks.rows() != s.atoms.rows() || s.sticks.rows() < 1) fail("stick/atom shapes");
  if (s.k < 1 || s.k > k_cap(prior)) fail("component count outside prior support");
  if (s.cutoffs.size() != s.k + 1) fail("cutoff count");
  if (s.cutoffs(0) != 0.0 || s.cutoffs(s.k) != 0.5) fail("cutoff endpoints");
  for (int j = 0; j < s.k; ++j)
    if (!(s.cutoffs(j) < s.cutoffs(j + 1))) fail("cutoffs not strictly ascending");
  if (s.psi.size() != s.k || s.log_mod.size() != s.k) fail("kernel parameter counts");
  for (int j = 0; j < s.k; ++j) {
    if (!(s.psi(j) > s.cutoffs(j) && s.psi(j) < s.cutoffs(j + 1)))
      fail("peak location outside its subinterval");
    if (!std::isfinite(s.log_mod(j))) fail("log modulus not finite");
    if (prior.logmod_prior == PriorConfig::LogModPrior::kJeffreys) {
      if (s.log_mod(j) < prior.l_min) fail("log modulus below prior support");
    } else {
      if (!(s.log_mod(j) > 0.0 && s.log_mod(j) < prior.l_max))
        fail("log modulus outside prior support");
    }
  }
  if (!(s.noise_var > prior.noise_floor) || !std::isfinite(s.noise_var))
    fail("noise level outside support");
  if (!(s.alpha > 0.0) || !std::isfinite(s.alpha)) fail("concentration not positive");
  for (int i = 0; i < s.sticks.rows(); ++i) {
    for (int h = 0; h < v; ++h) {
      const double st = s.sticks(i, h);
      if (h + 1 == v) {
        if (st != 1.0) fail("last stick fraction must be 1");
      } else if (!(st > 0.0 && st < 1.0)) {
        fail("stick fraction outside (0, 1)");
      }
      const double at = s.atoms(i, h);
      if (!(at > 0.0 && at < 1.0)) fail("atom outside (0, 1)");
    }
  }
}

double psi_log_prior(double psi, double a, double b, const PriorConfig& prior) {
  if (!(psi > a && psi < b)) return kNegInf;
  const double w = b - a;
  if (prior.psi_prior == PriorConfig::PsiPrior::kUniform) return -std::log(w);
  const double u = (psi - a) / w;
  return std::log(6.0) + std::log(u) + std::log1p(-u) - std::log(w);
}

double logmod_log_prior(double log_mod, const PriorConfig& prior) {
  if (prior.logmod_prior == PriorConfig::LogModPrior::kJeffreys) {
    if (log_mod < prior.l_min) return kNegInf;
    return std::log(prior.l_min) - 2.0 * std::log(log_mod);
  }
  if (!(log_mod > 0.0 && log_mod < prior.l_max)) return kNegInf;
  return -std::log(prior.l_max);
}

double sample_psi_prior(double a, double b, const PriorConfig& prior, Rng& rng) {
  if (prior.psi_prior == PriorConfig::PsiPrior::kUniform) return rng.uniform(a, b);
  return a + (b - a) * rng.beta(2.0, 2.0);
}

double sample_logmod_prior(const PriorConfig& prior, Rng& rng) {
  if (prior.logmod_prior == PriorConfig::LogModPrior::kJeffreys)
    return prior.l_min / rng.uniform();
  return rng.uniform(0.0, prior.l_max);
}

void birth_death_move(ChainState& s, Eigen::MatrixXd& lambda, double& loglik,
                      const LoglikFn& fn, const PriorConfig& prior, Rng& rng) {
  // The fresh kernel parameters on both sides of a split (and the fresh
  // merged component of the reverse) are drawn from their priors, so their
  // densities cancel out of the acceptance ratio. Both component-count
  // priors are flat inside their support, contributing nothing either. What
  // remains is the cutoff bookkeeping: 2 k^2 w S, with w the width of the
  // split subinterval and S the probability that the matching death selects
  // the new cutoff.
  const bool try_birth = rng.uniform() < 0.5;
  if (try_birth) {
    if (s.k >= k_cap(prior)) return;
    const int l = static_cast<int>(rng.integer(static_cast<std::uint64_t>(s.k)));
    const double a = s.cutoffs(l), b = s.cutoffs(l + 1);
    const double u = rng.uniform(a, b);
    const double psi_lo = sample_psi_prior(a, u, prior, rng);
    const double psi_hi = sample_psi_prior(u, b, prior, rng);
    const double lm_lo = sample_logmod_prior(prior, rng);
    const double lm_hi = sample_logmod_prior(prior, rng);
    if (!(u > a && u < b && psi_lo > a && psi_lo < u && psi_hi > u && psi_hi < b))
      return;  // floating-point degenerate split
    ChainState prop = s;
    prop.k = s.k + 1;
    prop.cutoffs = insert_at(s.cutoffs, l + 1, u);
    prop.psi = split_at(s.psi, l, psi_lo, psi_hi);
    prop.log_mod = split_at(s.log_mod, l, lm_lo, lm_hi);
    Eigen::MatrixXd lam_prop = weights_from_sticks(prop.sticks, prop.atoms, prop.k);
    const double ll_prop = fn(prop, lam_prop);
    const double log_acc = (ll_prop - loglik) + std::log(2.0) +
                           2.0 * std::log(static_cast<double>(s.k)) + std::log(b - a) +
                           std::log(edge_delete_prob(prop.cutoffs, l + 1));
    if (mh_accept(rng, log_acc)) {
      s = std::move(prop);
      lambda = std::move(lam_prop);
      loglik = ll_prop;
    }
  } else {
    if (s.k <= 1) return;
    const int l = static_cast<int>(rng.integer(static_cast<std::uint64_t>(s.k)));
    const bool left_interior = l >= 1;
    const bool right_interior = l + 1 <= s.k - 1;
    int m;
    if (left_interior && right_interior)
      m = rng.uniform() < 0.5 ? l : l + 1;
    else
      m = left_interior ? l : l + 1;
    const double a = s.cutoffs(m - 1), b = s.cutoffs(m + 1);
    const double psi_new = sample_psi_prior(a, b, prior, rng);
    const double lm_new = sample_logmod_prior(prior, rng);
    if (!(psi_new > a && psi_new < b)) return;
    ChainState prop = s;
    prop.k = s.k - 1;
    prop.cutoffs = erase_at(s.cutoffs, m);
    prop.psi = merge_at(s.psi, m - 1, psi_new);
    prop.log_mod = merge_at(s.log_mod, m - 1, lm_new);
    Eigen::MatrixXd lam_prop = weights_from_sticks(prop.sticks, prop.atoms, prop.k);
    const double ll_prop = fn(prop, lam_prop);
    const double log_acc = (ll_prop - loglik) -
                           (std::log(2.0) + 2.0 * std::log(static_cast<double>(s.k - 1)) +
                            std::log(b - a) + std::log(edge_delete_prob(s.cutoffs, m)));
    if (mh_accept(rng, log_acc)) {
      s = std::move(prop);
      lambda = std::move(lam_prop);
      loglik = ll_prop;
    }
  }
}

void relocate_move(ChainState& s, Eigen::MatrixXd& lambda, double& loglik, const LoglikFn& fn,
                   const PriorConfig& prior, Rng& rng) {
  // Death-then-birth composite at fixed K that keeps every fitted component
  // except the one it moves. The death half deletes interval l's component
  // together with the cutoff shared with a neighbour, whose component
  // survives unchanged inside the merged subinterval; the birth half splits
  // any subinterval of that intermediate state at a uniform point, keeps the
  // resident component on its own side, and draws one fresh component from
  // the prior for the empty side. Both halves pass through the same
  // intermediate state, so its likelihood cancels, and the moved component's
  // bandwidth prior cancels against the fresh-draw densities of the forward
  // and reverse proposals. What survives is the segment-prior change of the
  // re-binned components, the two uniform cutoff draws, and the 1/2-or-1
  // edge-selection probabilities:
  //   log r = dloglik + dseg + log(b - a) - log W + log(e_y / e_x).
  // The weight matrix depends only on (sticks, atoms, K), so it is
  // untouched. A duplicated component parked on an already-served spectral
  // peak can teleport straight into an unserved band this way: deleting it
  // barely costs likelihood because its twin still covers the peak, and no
  // random walk through the likelihood valley between peaks is needed.
  if (s.k < 2) return;
  const int l = static_cast<int>(rng.integer(static_cast<std::uint64_t>(s.k)));
  const bool left_interior = l >= 1;
  const bool right_interior = l + 1 <= s.k - 1;
  int m;
  double e_x;
  if (left_interior && right_interior) {
    m = rng.uniform() < 0.5 ? l : l + 1;
    e_x = 0.5;
  } else {
    m = left_interior ? l : l + 1;
    e_x = 1.0;
  }
  const double w_merged = s.cutoffs(m + 1) - s.cutoffs(m - 1);
  const Eigen::VectorXd cut_mid = erase_at(s.cutoffs, m);
  const Eigen::VectorXd psi_mid = erase_at(s.psi, l);
  const Eigen::VectorXd lm_mid = erase_at(s.log_mod, l);
  const int l2 = static_cast<int>(rng.integer(static_cast<std::uint64_t>(s.k - 1)));
  const double a = cut_mid(l2), b = cut_mid(l2 + 1);
  const double u = rng.uniform(a, b);
  const double psi_keep = psi_mid(l2);
  if (!(u > a && u < b) || u == psi_keep) return;  // floating-point degenerate split
  const bool keep_low = psi_keep < u;
  const double fresh_lo = keep_low ? u : a;
  const double fresh_hi = keep_low ? b : u;
  const double psi_new = sample_psi_prior(fresh_lo, fresh_hi, prior, rng);
  const double lm_new = sample_logmod_prior(prior, rng);
  if (!(psi_new > fresh_lo && psi_new < fresh_hi)) return;
  const int new_pos = keep_low ? l2 + 1 : l2;
  ChainState prop = s;
  prop.cutoffs = insert_at(cut_mid, l2 + 1, u);
  prop.psi = insert_at(psi_mid, new_pos, psi_new);
  prop.log_mod = insert_at(lm_mid, new_pos, lm_new);
  // Reverse death must pick the fresh component's interval and the edge at
  // u; u is always interior, so the factor is 1/2 only when the interval's
  // other edge is interior too.
  const double e_y = (new_pos >= 1 && new_pos + 1 <= s.k - 1) ? 0.5 : 1.0;
  double dseg = 0.0;
  for (int j = 0; j < s.k; ++j)
    dseg += psi_log_prior(prop.psi(j), prop.cutoffs(j), prop.cutoffs(j + 1), prior) -
            psi_log_prior(s.psi(j), s.cutoffs(j), s.cutoffs(j + 1), prior);
  // The moved component's own segment terms swap against the fresh-draw
  // densities of the forward and reverse proposals.
  dseg += psi_log_prior(s.psi(l), s.cutoffs(l), s.cutoffs(l + 1), prior) -
          psi_log_prior(psi_new, fresh_lo, fresh_hi, prior);
  const double ll_prop = fn(prop, lambda);
  const double log_acc = (ll_prop - loglik) + dseg + std::log(b - a) - std::log(w_merged) +
                         std::log(e_y) - std::log(e_x);
  if (mh_accept(rng, log_acc)) {
    s = std::move(prop);
    loglik = ll_prop;
  }
}

void update_cutoffs(ChainState& s, const PriorConfig& prior, Rng& rng) {
  for (int m = 1; m < s.k; ++m) {
    const double lo = s.psi(m - 1), hi = s.psi(m);
    const double cand = rng.uniform(lo, hi);
    if (!(cand > lo && cand < hi)) continue;
    const double old = s.cutoffs(m);
    // Independence proposal between the flanking peaks; its density does not
    // depend on the current cutoff, and the likelihood is cutoff-free, so
    // only the prior of the two flanked peaks enters.
    const double log_acc = psi_log_prior(s.psi(m - 1), s.cutoffs(m - 1), cand, prior) +
                           psi_log_prior(s.psi(m), cand, s.cutoffs(m + 1), prior) -
                           psi_log_prior(s.psi(m - 1), s.cutoffs(m - 1), old, prior) -
                           psi_log_prior(s.psi(m), old, s.cutoffs(m + 1), prior);
    if (mh_accept(rng, log_acc)) s.cutoffs(m) = cand;
  }
}

void update_psi(ChainState& s, const Eigen::MatrixXd& lambda, double& loglik,
                const LoglikFn& fn, const PriorConfig& prior,
                const ProposalConfig& prop, Rng& rng) {
  for (int j = 0; j < s.k; ++j) {
    const double a = s.cutoffs(j), b = s.cutoffs(j + 1);
    const double sd = prop.psi_step_frac * (b - a);
    const double cur = s.psi(j);
    const double cand = reflect_into(cur + sd * rng.normal(), a, b);
    if (!(cand > a && cand < b)) continue;
    const double prior_diff = psi_log_prior(cand, a, b, prior) - psi_log_prior(cur, a, b, prior);
    s.psi(j) = cand;
    const double ll_cand = fn(s, lambda);
    if (mh_accept(rng, ll_cand - loglik + prior_diff))
      loglik = ll_cand;
    else
      s.psi(j) = cur;
  }
}

void update_log_mod(ChainState& s, const Eigen::MatrixXd& lambda, double& loglik,
                    const LoglikFn& fn, const PriorConfig& prior,
                    const ProposalConfig& prop, Rng& rng) {
  for (int j = 0; j < s.k; ++j) {
    const double cur = s.log_mod(j);
    const double cand = cur * std::exp(prop.logmod_step * rng.normal());
    const double lp_cand = logmod_log_prior(cand, prior);
    if (lp_cand == kNegInf) continue;
    // log-scale walk: prior ratio plus the log(cand/cur) Jacobian
    const double prior_diff = lp_cand - logmod_log_prior(cur, prior) + std::log(cand / cur);
    s.log_mod(j) = cand;
    const double ll_cand = fn(s, lambda);
    if (mh_accept(rng, ll_cand - loglik + prior_diff))
      loglik = ll_cand;
    else
      s.log_mod(j) = cur;
  }
}

void update_sticks(ChainState& s, Eigen::MatrixXd& lambda, double& loglik,
                   const LoglikFn& fn, const PriorConfig& prior,
                   const ProposalConfig& prop, Rng& rng) {
  (void)prior;
  const int n = static_cast<int>(s.sticks.rows());
  const int v = static_cast<int>(s.sticks.cols());
  Eigen::RowVectorXd old_row(v), old_lam, cand_lam;
  for (int i = 0; i < n; ++i) {
    old_row = s.sticks.row(i);
    double log_ratio = 0.0;
    bool in_range = true;
    for (int h = 0; h + 1 < v; ++h) {
      const double cur = old_row(h);
      const double cand = inv_logit(logit(cur) + prop.stick_step * rng.normal());
      if (!(cand > 0.0 && cand < 1.0)) {
        in_range = false;
        break;
      }
      // Beta(1, alpha) prior and the logit-walk Jacobian
      log_ratio += (s.alpha - 1.0) * (std::log1p(-cand) - std::log1p(-cur));
      log_ratio += std::log(cand * (1.0 - cand)) - std::log(cur * (1.0 - cur));
      s.sticks(i, h) = cand;
    }
    if (!in_range) {
      s.sticks.row(i) = old_row;
      continue;
    }
    lambda_row(s.sticks, s.atoms, i, s.k, cand_lam);
    old_lam = lambda.row(i);
    lambda.row(i) = cand_lam;
    const double ll_cand = fn(s, lambda);
    if (mh_accept(rng, ll_cand - loglik + log_ratio)) {
      loglik = ll_cand;
    } else {
      s.sticks.row(i) = old_row;
      lambda.row(i) = old_lam;
    }
  }
}

void update_atoms(ChainState& s, Eigen::MatrixXd& lambda, double& loglik,
                  const LoglikFn& fn, const PriorConfig& prior,
                  const ProposalConfig& prop, Rng& rng) {
  (void)prior;
  const int n = static_cast<int>(s.atoms.rows());
  const int v = static_cast<int>(s.atoms.cols());
  Eigen::RowVectorXd old_row(v), old_lam, cand_lam;
  for (int i = 0; i < n; ++i) {
    old_row = s.atoms.row(i);
    double log_ratio = 0.0;  // flat prior on (0, 1): logit-walk Jacobian only
    bool in_range = true;
    for (int h = 0; h < v; ++h) {
      const double cur = old_row(h);
      const double cand = inv_logit(logit(cur) + prop.stick_step * rng.normal());
      if (!(cand > 0.0 && cand < 1.0)) {
        in_range = false;
        break;
      }
      log_ratio += std::log(cand * (1.0 - cand)) - std::log(cur * (1.0 - cur));
      s.atoms(i, h) = cand;
    }
    if (!in_range) {
      s.atoms.row(i) = old_row;
      continue;
    }
    lambda_row(s.sticks, s.atoms, i, s.k, cand_lam);
    old_lam = lambda.row(i);
    lambda.row(i) = cand_lam;
    const double ll_cand = fn(s, lambda);
    if (mh_accept(rng, ll_cand - loglik + log_ratio)) {
      loglik = ll_cand;
    } else {
      s.atoms.row(i) = old_row;
      lambda.row(i) = old_lam;
    }
  }
}

void update_noise(ChainState& s, const Eigen::MatrixXd& lambda, double& loglik,
                  const LoglikFn& fn, const PriorConfig& prior,
                  const ProposalConfig& prop, Rng& rng) {
  const double cur = s.noise_var;
  const double cand = cur * std::exp(prop.noise_step * rng.normal());
  if (!(cand > prior.noise_floor)) return;
  // 1/sigma^2 prior: flat in log scale, so the walk Jacobian cancels it.
  s.noise_var = cand;
  const double ll_cand = fn(s, lambda);
  if (mh_accept(rng, ll_cand - loglik))
    loglik = ll_cand;
  else
    s.noise_var = cur;
}

void update_alpha(ChainState& s, const PriorConfig& prior, int n_eff, Rng& rng) {
  if (n_eff < 1) throw std::invalid_argument("Escobar-West update needs n_eff >= 1");
  const double a = prior.alpha_shape, b = prior.alpha_rate;
  const double eta = rng.beta(s.alpha + 1.0, static_cast<double>(n_eff));
  const double rate = b - std::log(eta);
  const double odds =
      (a + s.k - 1.0) / (static_cast<double>(n_eff) * rate);
  const double shape = rng.uniform() < odds / (1.0 + odds) ? a + s.k : a + s.k - 1.0;
  s.alpha = rng.gamma(shape, rate);
}

ChainState initial_state(int n_channels, const SamplerConfig& cfg, Rng& rng) {
  if (n_channels < 1) throw std::invalid_argument("need at least one channel");
  const PriorConfig& prior = cfg.prior;
  const int v = prior.truncation_v;
  if (v < 2) throw std::invalid_argument("truncation level must be at least 2");
  ChainState s;
  s.k = std::clamp(cfg.init.k0, 1, k_cap(prior));
  s.noise_var = cfg.init.noise0;
  s.alpha = cfg.init.alpha0;
  s.cutoffs = Eigen::VectorXd::LinSpaced(s.k + 1, 0.0, 0.5);
  s.psi.resize(s.k);
  for (int j = 0; j < s.k; ++j) s.psi(j) = 0.5 * (s.cutoffs(j) + s.cutoffs(j + 1));
  s.log_mod = Eigen::VectorXd::Constant(s.k, cfg.init.log_mod0);
  s.sticks.resize(n_channels, v);
  s.atoms.resize(n_channels, v);
  for (int i = 0; i < n_channels; ++i) {
    for (int h = 0; h < v; ++h) {
      s.sticks(i, h) = (h + 1 == v)
                           ? 1.0
                           : std::clamp(rng.beta(1.0, cfg.init.alpha0), 1e-12, 1.0 - 1e-12);
      s.atoms(i, h) = rng.uniform();
    }
  }
  validate_state(s, prior);
  return s;
}

namespace {

// Whittle log-likelihood specialized for the sampler loop. For k <= n the
// n x n spectral matrix S = noise I + Lambda G Lambda^T is handled through
// its k x k capacitance form W = I + G^{1/2} Lambda^T Lambda G^{1/2} / noise:
// log det S = n log noise + log det W and the quadratic form shrinks the
// same way, so per-frequency work is O(k^3) with no heap traffic. W >= I
// keeps the Cholesky diagonal at or above 1, so the determinant accumulates
// as a product with a single log per frequency.
class WhittleEvaluator {
 public:
  explicit WhittleEvaluator(const FourierData& data)
      : n_(static_cast<int>(data.coeffs.rows())),
        m_(static_cast<int>(data.coeffs.cols())),
        dre_(data.coeffs.real()),
        dim_(data.coeffs.imag()) {
    if (n_ < 1 || m_ < 1) throw DataError("empty Fourier data");
    dd_.resize(m_);
    for (int m = 0; m < m_; ++m)
      dd_(m) = dre_.col(m).squaredNorm() + dim_.col(m).squaredNorm();
    const Eigen::ArrayXd w = data.freqs.array();
    c1_ = (kTwoPi * w).cos();
    s1_ = (kTwoPi * w).sin();
    c2_ = (2.0 * kTwoPi * w).cos();
    s2_ = (2.0 * kTwoPi * w).sin();
  }

  double loglik(const ChainState& s, const Eigen::MatrixXd& lambda) {
    const int k = s.k;
    if (g_.rows() != m_ || g_.cols() != k) g_.resize(m_, k);
    for (int j = 0; j < k; ++j)
      kernel_density_tabled(Ar2Kernel{s.psi(j), s.log_mod(j)}, c1_, s1_, c2_, s2_,
                            g_.col(j).array());
    const double total = k <= n_ ? capacitance_path(k, lambda, s.noise_var)
                                 : direct_path(k, lambda, s.noise_var);
    if (!std::isfinite(total)) throw NumericError("whittle log-likelihood is not finite");
    return total;
  }

 private:
  // In-place lower Cholesky of the k x k column-major buffer (lower triangle
  // in, factor out); returns log det, or NaN when a pivot fails.
  static double chol_logdet(double* a, int k) {
    double prod = 1.0, logacc = 0.0;
    for (int c = 0; c < k; ++c) {
      double* col = a + static_cast<std::ptrdiff_t>(c) * k;
      double d = col[c];
      for (int j = 0; j < c; ++j) {
        const double l = a[static_cast<std::ptrdiff_t>(j) * k + c];
        d -= l * l;
      }
      if (!(d > 0.0)) return std::numeric_limits<double>::quiet_NaN();
      const double root = std::sqrt(d);
      col[c] = root;
      prod *= root;
      if (prod > 1e280 || prod < 1e-280) {
        logacc += std::log(prod);
        prod = 1.0;
      }
      const double inv = 1.0 / root;
      for (int r = c + 1; r < k; ++r) {
        double x = col[r];
        for (int j = 0; j < c; ++j)
          x -= a[static_cast<std::ptrdiff_t>(j) * k + c] *
               a[static_cast<std::ptrdiff_t>(j) * k + r];
        col[r] = x * inv;
      }
    }
    return 2.0 * (logacc + std::log(prod));
  }

  // x := L^{-1} x for the factor left by chol_logdet; the full quadratic
  // form never needs the transposed solve since b^T W^{-1} b = |L^{-1} b|^2.
  static void forward_solve(const double* a, int k, double* x) {
    for (int c = 0; c < k; ++c) {
      double v = x[c];
      for (int j = 0; j < c; ++j) v -= a[static_cast<std::ptrdiff_t>(j) * k + c] * x[j];
      x[c] = v / a[static_cast<std::ptrdiff_t>(c) * k + c];
    }
  }

  double capacitance_path(int k, const Eigen::MatrixXd& lambda, double noise) {
    bn_.noalias() = lambda.transpose() * lambda;
    bn_ /= noise;
    ure_.noalias() = lambda.transpose() * dre_;
    uim_.noalias() = lambda.transpose() * dim_;
    const double inv_noise = 1.0 / noise;
    const double base = n_ * std::log(noise);
    ensure_scratch(k);
    double total = 0.0;
    for (int m = 0; m < m_; ++m) {
      for (int j = 0; j < k; ++j) sq_[j] = std::sqrt(g_(m, j));
      for (int c = 0; c < k; ++c) {
        const double sc = sq_[c];
        double* col = w_.data() + static_cast<std::ptrdiff_t>(c) * k;
        for (int r = c; r < k; ++r) col[r] = sq_[r] * sc * bn_(r, c);
        col[c] += 1.0;
      }
      const double logdet = chol_logdet(w_.data(), k);
      if (std::isnan(logdet)) throw NumericError("spectral matrix lost positive definiteness");
      for (int j = 0; j < k; ++j) {
        t1_[j] = sq_[j] * ure_(j, m);
        t2_[j] = sq_[j] * uim_(j, m);
      }
      forward_solve(w_.data(), k, t1_.data());
      forward_solve(w_.data(), k, t2_.data());
      double q = 0.0;
      for (int j = 0; j < k; ++j) q += t1_[j] * t1_[j] + t2_[j] * t2_[j];
      total += base + logdet + inv_noise * dd_(m) - inv_noise * inv_noise * q;
    }
    return -total;
  }

  double direct_path(int k, const Eigen::MatrixXd& lambda, double noise) {
    ensure_scratch(n_);
    lg_.resize(n_, k);
    double total = 0.0;
    for (int m = 0; m < m_; ++m) {
      for (int j = 0; j < k; ++j) lg_.col(j) = lambda.col(j) * g_(m, j);
      sfull_.noalias() = lg_ * lambda.transpose();
      for (int c = 0; c < n_; ++c) {
        double* col = w_.data() + static_cast<std::ptrdiff_t>(c) * n_;
        for (int r = c; r < n_; ++r) col[r] = sfull_(r, c);
        col[c] += noise;
      }
      const double logdet = chol_logdet(w_.data(), n_);
      if (std::isnan(logdet)) throw NumericError("spectral matrix lost positive definiteness");
      for (int i = 0; i < n_; ++i) {
        t1_[i] = dre_(i, m);
        t2_[i] = dim_(i, m);
      }
      forward_solve(w_.data(), n_, t1_.data());
      forward_solve(w_.data(), n_, t2_.data());
      double q = 0.0;
      for (int i = 0; i < n_; ++i) q += t1_[i] * t1_[i] + t2_[i] * t2_[i];
      total += logdet + q;
    }
    return -total;
  }

  void ensure_scratch(int k) {
    if (static_cast<int>(sq_.size()) < k) {
      sq_.resize(k);
      t1_.resize(k);
      t2_.resize(k);
      w_.resize(static_cast<std::size_t>(k) * k);
    }
  }

  int n_, m_;
  Eigen::MatrixXd dre_, dim_;        // n x M, split periodogram coefficients
  Eigen::VectorXd dd_;               // per-frequency |d|^2
  Eigen::ArrayXd c1_, s1_, c2_, s2_; // trig tables of the frequency grid
  Eigen::MatrixXd g_;                // M x k kernel densities
  Eigen::MatrixXd bn_, ure_, uim_, lg_, sfull_;
  std::vector<double> w_, sq_, t1_, t2_;
};

}  // namespace

ChainTrace run_chain_with(int n_channels, const LoglikFn& fn, const SamplerConfig& cfg,
                          int chain_id, int fourier_count,
                          const std::function<void(const ChainState&)>& on_iteration) {
  const PriorConfig& prior = cfg.prior;
  const bool count_fourier = prior.escobar_count == PriorConfig::EscobarCount::kFourier;
  if (count_fourier && fourier_count < 1)
    throw std::invalid_argument("Fourier-bin concentration update needs the bin count");
  Rng rng(cfg.seed, static_cast<std::uint64_t>(chain_id));
  ChainState s = initial_state(n_channels, cfg, rng);
  Eigen::MatrixXd lambda = weights_from_sticks(s.sticks, s.atoms, s.k);
  double ll = fn(s, lambda);
  ChainTrace trace;
  trace.channels = n_channels;
  trace.records.reserve(cfg.iterations);
  for (int it = 0; it < cfg.iterations; ++it) {
    birth_death_move(s, lambda, ll, fn, prior, rng);
    relocate_move(s, lambda, ll, fn, prior, rng);
    update_cutoffs(s, prior, rng);
    update_psi(s, lambda, ll, fn, prior, cfg.proposal, rng);
    update_log_mod(s, lambda, ll, fn, prior, cfg.proposal, rng);
    update_sticks(s, lambda, ll, fn, prior, cfg.proposal, rng);
    update_atoms(s, lambda, ll, fn, prior, cfg.proposal, rng);
    update_noise(s, lambda, ll, fn, prior, cfg.proposal, rng);
    update_alpha(s, prior, count_fourier ? fourier_count : s.k, rng);
    if (!std::isfinite(ll)) throw NumericError("chain log-likelihood diverged");
    TraceRecord rec;
    rec.iter = it;
    rec.k = s.k;
    rec.loglik = ll;
    rec.noise_var = s.noise_var;
    rec.alpha = s.alpha;
    rec.psi = s.psi;
    rec.log_mod = s.log_mod;
    rec.lambda = lambda;
    trace.records.push_back(std::move(rec));
    if (on_iteration) on_iteration(s);
  }
  return trace;
}

ChainTrace run_chain(const FourierData& data, const SamplerConfig& cfg, int chain_id) {
  WhittleEvaluator eval(data);
  const LoglikFn fn = [&eval](const ChainState& s, const Eigen::MatrixXd& lambda) {
    return eval.loglik(s, lambda);
  };
  return run_chain_with(static_cast<int>(data.coeffs.rows()), fn, cfg, chain_id,
                        static_cast<int>(data.coeffs.cols()));
}

std::vector<ChainTrace> run_chains(const FourierData& data, const SamplerConfig& cfg) {
  if (cfg.chains < 1) throw std::invalid_argument("need at least one chain");
  std::vector<ChainTrace> out(cfg.chains);
  parallel_chunks(cfg.chains, [&](int c) { out[c] = run_chain(data, cfg, c); });
  return out;
}

void write_trace_csv(const ChainTrace& t, const std::string& path) {
  int kmax = 1;
  for (const TraceRecord& r : t.records) kmax = std::max(kmax, r.k);
  const int n = t.channels;
  nlohmann::json header;
  header["format"] = "mbmard-trace";
  header["version"] = 1;
  header["channels"] = n;
  header["iterations"] = t.records.size();
  header["k_max_recorded"] = kmax;
  header["columns"] =
      "iter,k,loglik,noise_var,alpha,psi*kmax,log_mod*kmax,lambda*(channels x kmax, "
      "channel-major), zero-padded past each row's k";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open trace file for writing: " + path);
  out << "# " << header.dump() << "\n";
  out << "iter,k,loglik,noise_var,alpha";
  for (int j = 1; j <= kmax; ++j) out << ",psi_" << j;
  for (int j = 1; j <= kmax; ++j) out << ",log_mod_" << j;
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= kmax; ++j) out << ",lambda_" << i << "_" << j;
  out << "\n";
  for (const TraceRecord& r : t.records) {
    out << r.iter << ',' << r.k << ',' << fmt_double(r.loglik) << ','
        << fmt_double(r.noise_var) << ',' << fmt_double(r.alpha);
    for (int j = 0; j < kmax; ++j)
      out << ',' << (j < r.k ? fmt_double(r.psi(j)) : "0");
    for (int j = 0; j < kmax; ++j)
      out << ',' << (j < r.k ? fmt_double(r.log_mod(j)) : "0");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < kmax; ++j)
        out << ',' << (j < r.k ? fmt_double(r.lambda(i, j)) : "0");
    out << "\n";
  }
  if (!out) throw DataError("failed while writing trace file: " + path);
}

ChainTrace read_trace_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open trace file: " + path);
  std::string line;
  if (!std::getline(in, line) || line.empty() || line[0] != '#')
    throw DataError("trace file has no header line: " + path);
  const nlohmann::json header = nlohmann::json::parse(line.substr(1), nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "mbmard-trace")
    throw DataError("unrecognized trace header: " + path);
  const int n = header.value("channels", 0);
  const int kmax = header.value("k_max_recorded", 0);
  if (n < 1 || kmax < 1) throw DataError("trace header has bad dimensions: " + path);
  if (!std::getline(in, line)) throw DataError("trace file has no column row: " + path);
  const int ncols = 5 + 2 * kmax + n * kmax;
  ChainTrace t;
  t.channels = n;
  std::vector<double> vals;
  vals.reserve(ncols);
  int row = 2;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    vals.clear();
    const char* p = line.c_str();
    while (true) {
      char* rest = nullptr;
      const double x = std::strtod(p, &rest);
      if (rest == p) throw DataError("trace row " + std::to_string(row) + ": bad number");
      vals.push_back(x);
      p = rest;
      if (*p == ',') {
        ++p;
      } else if (*p == '\0' || *p == '\r') {
        break;
      } else {
        throw DataError("trace row " + std::to_string(row) + ": stray characters");
      }
    }
    if (static_cast<int>(vals.size()) != ncols)
      throw DataError("trace row " + std::to_string(row) + " has " +
                      std::to_string(vals.size()) + " fields, expected " +
                      std::to_string(ncols));
    TraceRecord r;
    r.iter = static_cast<int>(vals[0]);
    r.k = static_cast<int>(vals[1]);
    if (r.k < 1 || r.k > kmax)
      throw DataError("trace row " + std::to_string(row) + ": component count out of range");
    r.loglik = vals[2];
    r.noise_var = vals[3];
    r.alpha = vals[4];
    r.psi.resize(r.k);
    r.log_mod.resize(r.k);
    r.lambda.resize(n, r.k);
    for (int j = 0; j < r.k; ++j) r.psi(j) = vals[5 + j];
    for (int j = 0; j < r.k; ++j) r.log_mod(j) = vals[5 + kmax + j];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < r.k; ++j) r.lambda(i, j) = vals[5 + 2 * kmax + i * kmax + j];
    t.records.push_back(std::move(r));
  }
  return t;
}

}  // namespace mbmard
