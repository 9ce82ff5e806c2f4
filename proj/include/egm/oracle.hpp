#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "egm/common.hpp"
#include "egm/energy.hpp"
#include "egm/estimators.hpp"
#include "egm/path.hpp"

namespace egm {
namespace oracle {

inline constexpr int kMaxEnumMasks = 12;

/// Enumerates all V^m completions of the masked positions of x (data tokens
/// only), invoking fn(completion) for each.
template <class Fn>
void for_each_completion(const MixedState& x, TokenId mask, int vocab, Fn&& fn) {
  std::vector<int> masked;
  for (int i = 0; i < int(x.disc.size()); ++i)
    if (x.disc[i] == mask) masked.push_back(i);
  int m = int(masked.size());
  if (m > kMaxEnumMasks) throw std::invalid_argument("completion enumeration: too many masks");
  int64_t total = 1;
  for (int i = 0; i < m; ++i) total *= vocab;
  MixedState c = x;
  for (int64_t code = 0; code < total; ++code) {
    int64_t rem = code;
    for (int i = 0; i < m; ++i) {
      c.disc[masked[i]] = static_cast<TokenId>(rem % vocab);
      rem /= vocab;
    }
    fn(const_cast<const MixedState&>(c));
  }
}

/// Exact marginal rate table at (x_t, t) for a purely discrete task by full
/// posterior enumeration: weights prop. to exp(-E_1(x1)) because p_{t|1} is
/// constant across completions under masked diffusion.
inline GeneratorEstimate exact_marginal_rates(const PathBundle& path, const EnergySpec& spec,
                                              const MixedState& x_t, double t) {
  if (spec.d_cont() != 0)
    throw std::invalid_argument("exact_marginal_rates: only purely discrete tasks enumerate");
  path.check_state(x_t, "exact_marginal_rates");
  std::vector<double> log_w;
  std::vector<MixedState> completions;
  for_each_completion(x_t, path.mask_token(), path.vocab, [&](const MixedState& c) {
    completions.push_back(c);
    log_w.push_back(-energy(spec, c));
  });
  double mx = *std::max_element(log_w.begin(), log_w.end());
  double z = 0.0;
  for (double lw : log_w) z += std::exp(lw - mx);

  GeneratorEstimate g = zero_generator(path.d_disc, path.vocab, 0);
  double rate_const =
      path.schedule.kappa_dot(t) / std::max(1.0 - path.schedule.kappa(t), kOneMinusTFloor);
  for (size_t k = 0; k < completions.size(); ++k) {
    double w = std::exp(log_w[k] - mx) / z;
    for (int i = 0; i < path.d_disc; ++i)
      if (x_t.disc[i] == path.mask_token())
        g.rate(i, completions[k].disc[i], path.vocab) += w * rate_const;
  }
  return g;
}

namespace detail_oracle {

// log of integral exp(-(x1-mu)^2/(2 g)) * kernel_{r|1}(x_r | x1) dx1 for one
// continuous coordinate, where kernel is the path's forward noising kernel.
inline double log_conv1d(const PathBundle& path, double x_r, double r, double mu, double g) {
  if (path.cont == ContPath::VE) {
    double vr = square(path.schedule.ve_sigma(r));
    return 0.5 * std::log(g / (g + vr)) - square(x_r - mu) / (2.0 * (g + vr));
  }
  double v = square(1.0 - r) / (r * r);
  return -std::log(r) + 0.5 * std::log(g / (g + v)) - square(x_r / r - mu) / (2.0 * (g + v));
}

inline double log_mask_mass(const PathBundle& path, TokenId tok, TokenId data_tok, double r) {
  double kappa = path.schedule.kappa(r);
  if (tok == path.mask_token()) return std::log(1.0 - kappa);
  if (tok == data_tok) return std::log(kappa);
  return -kInf;
}

}  // namespace detail_oracle

/// Exact intermediate energy E_r(x_r) = -log integral p_{r|1}(x_r|x1)
/// exp(-E_1(x1)) dx1. Supported: purely discrete tasks by enumeration,
/// JointMoG and GB-RBM by closed-form Gaussian convolution.
inline double exact_intermediate_energy(const PathBundle& path, const EnergySpec& spec,
                                        const MixedState& x_r, double r) {
  path.check_state(x_r, "exact_intermediate_energy");
  if (!(r > 0.0 && r <= 1.0))
    throw std::invalid_argument("exact_intermediate_energy: r must be in (0,1]");
  double kappa = path.schedule.kappa(r);

  if (spec.d_cont() == 0) {
    int m = count_masked(x_r, path.mask_token());
    if (r >= 1.0 && m > 0) return kInf;  // masked state has zero mass at r=1
    int u = spec.d_disc() - m;
    std::vector<double> terms;
    for_each_completion(x_r, path.mask_token(), path.vocab,
                        [&](const MixedState& c) { terms.push_back(-energy(spec, c)); });
    double mx = *std::max_element(terms.begin(), terms.end());
    double z = 0.0;
    for (double v : terms) z += std::exp(v - mx);
    double log_sum = mx + std::log(z);
    double log_kernel = u * std::log(kappa) + (m > 0 ? m * std::log(1.0 - kappa) : 0.0);
    return -(log_kernel + log_sum);
  }

  if (spec.task == Task::JointMoG) {
    double g = square(spec.mog_sigma);
    double log_p = 0.0;
    for (int i = 0; i < spec.mog_pairs; ++i) {
      double terms[2];
      for (int b = 0; b < 2; ++b) {
        double lm = detail_oracle::log_mask_mass(path, x_r.disc[i], TokenId(b), r);
        terms[b] = lm + detail_oracle::log_conv1d(path, x_r.cont[i], r, pm_of(TokenId(b)), g);
      }
      log_p += log_mean_exp(terms) + std::log(2.0);  // plain sum over the two branches
    }
    return -log_p;
  }

  if (spec.task == Task::GBRBM) {
    double g = spec.rbm_sigma / 2.0;
    std::vector<double> terms;
    for (int code = 0; code < 8; ++code) {
      int x2[3] = {code & 1, (code >> 1) & 1, (code >> 2) & 1};
      double lt = 0.0;
      for (int j = 0; j < 3; ++j) {
        lt += spec.rbm_b[j] * x2[j];
        lt += detail_oracle::log_mask_mass(path, x_r.disc[j], TokenId(x2[j]), r);
      }
      double mu[2];
      for (int c = 0; c < 2; ++c) {
        mu[c] = spec.rbm_a[c];
        for (int j = 0; j < 3; ++j) mu[c] += 0.5 * spec.rbm_w[c][j] * x2[j];
        // completed square: exp(-E) = exp(<b,x2> + (|mu|^2-|a|^2)/Sigma) exp(-|x1-mu|^2/Sigma)
        lt += (square(mu[c]) - square(spec.rbm_a[c])) / spec.rbm_sigma;
        lt += detail_oracle::log_conv1d(path, x_r.cont[c], r, mu[c], g);
      }
      terms.push_back(lt);
    }
    return -(log_mean_exp(terms) + std::log(8.0));
  }

  throw std::invalid_argument("exact_intermediate_energy: unsupported task");
}

struct ConsistencyResult {
  double max_dev = 0.0;  // sup-norm deviation |E[u_{t|r}] - u_{t|1}|
  double mc_se = 0.0;    // 0 for exact routes
};

/// Verifies E_{x_r ~ p_{r|1,t}}[u_{t|r}(x_t|x_r)] = u_{t|1}(x_t|x1):
/// analytically via the Gaussian posterior mean for CondOT, by token
/// enumeration for masked diffusion, by self-normalized MC for VE.
inline ConsistencyResult check_consistency_eq13(const PathBundle& path, double t, double r,
                                                const MixedState& x1, const MixedState& x_t,
                                                int64_t n_mc, uint64_t seed = 7) {
  if (!(0.0 < t && t < r && r <= 1.0))
    throw std::invalid_argument("check_consistency_eq13: need 0 < t < r <= 1");
  ConsistencyResult res;
  GeneratorEstimate u_t1 = cond_generator_t1(path, x_t, x1, t);

  if (path.has_disc()) {
    double kt = path.schedule.kappa(t), kr = path.schedule.kappa(r);
    double rate_tr = path.schedule.kappa_dot(t) / (kr - kt);
    for (int i = 0; i < path.d_disc; ++i) {
      double expect[3] = {0.0, 0.0, 0.0};  // rates toward tokens 0..V-1 (V=2 here)
      if (x_t.disc[i] == path.mask_token()) {
        double p_keep = (1.0 - kt / kr) * kr;  // x_r = x1's token, then re-masked by t
        double p_mask = 1.0 - kr;
        double z = p_keep + p_mask;
        expect[x1.disc[i]] = (p_keep / z) * rate_tr;
      }
      for (int y = 0; y < path.vocab; ++y)
        res.max_dev = std::max(res.max_dev, std::abs(expect[y] - u_t1.rate(i, y, path.vocab)));
    }
  }

  if (path.has_cont()) {
    if (path.cont == ContPath::CondOT) {
      double sbar = detail::condot_sigma_bar(t, r);
      double coef = detail::condot_sigma_bar_dot(t, r) / (2.0 * sbar);
      for (int i = 0; i < path.d_cont; ++i) {
        double mu = (t * square(1.0 - r) / (r * square(1.0 - t))) * x_t.cont[i] +
                    (r * sbar / square(1.0 - t)) * x1.cont[i];
        double e_u = mu / r + coef * (x_t.cont[i] - (t / r) * mu);
        res.max_dev = std::max(res.max_dev, std::abs(e_u - u_t1.drift[i]));
      }
    } else {
      // VE: x_r ~ p_{r|1}(.|x1) weighted by p_{t|r}(x_t|x_r); block SE of the
      // ratio estimator over 10 blocks.
      Rng rng(seed);
      const int blocks = 10;
      int64_t per = n_mc / blocks;
      double sr = path.schedule.ve_sigma(r), st = path.schedule.ve_sigma(t);
      double var_tr = st * st - sr * sr;
      double coef = st * path.schedule.ve_sigma_dot(t) / var_tr;
      for (int i = 0; i < path.d_cont; ++i) {
        std::vector<double> block_means(blocks);
        for (int b = 0; b < blocks; ++b) {
          double num = 0.0, den = 0.0;
          for (int64_t k = 0; k < per; ++k) {
            double xr = x1.cont[i] + sr * rng.normal();
            double w = std::exp(-square(x_t.cont[i] - xr) / (2.0 * var_tr));
            num += w * coef * (x_t.cont[i] - xr);
            den += w;
          }
          block_means[b] = num / den;
        }
        double mean = 0.0;
        for (double v : block_means) mean += v / blocks;
        double var = 0.0;
        for (double v : block_means) var += square(v - mean) / (blocks - 1);
        double se = std::sqrt(var / blocks);
        res.max_dev = std::max(res.max_dev, std::abs(mean - u_t1.drift[i]));
        res.mc_se = std::max(res.mc_se, se);
      }
    }
  }
  return res;
}

struct ChapmanKolmogorovResult {
  double token_dev = 0.0;  // exact composed-vs-direct keep probability gap
  double mean_dev = 0.0, var_dev = 0.0;
  double mean_se = 0.0, var_se = 0.0;
};

/// Compares composing p_{r|1} then p_{t|r} against direct p_{t|1}: exact mass
/// for a single token, MC moments per continuous coordinate.
inline ChapmanKolmogorovResult check_chapman_kolmogorov(const PathBundle& path, double t, double r,
                                                        const MixedState& x1, int64_t n_mc,
                                                        uint64_t seed = 11) {
  if (!(0.0 < t && t < r && r <= 1.0))
    throw std::invalid_argument("check_chapman_kolmogorov: need 0 < t < r <= 1");
  ChapmanKolmogorovResult res;
  if (path.has_disc()) {
    double composed = path.schedule.kappa(r) * (path.schedule.kappa(t) / path.schedule.kappa(r));
    res.token_dev = std::abs(composed - path.schedule.kappa(t));
  }
  if (path.has_cont()) {
    // single representative coordinate; kernels are iid across coordinates
    Rng rng(seed);
    double direct_mean = 0.0, direct_var = 0.0;
    std::vector<double> xs(n_mc);
    double x1c = x1.cont.empty() ? 0.0 : x1.cont[0];
    if (path.cont == ContPath::CondOT) {
      direct_mean = t * x1c;
      direct_var = square(1.0 - t);
      double sd_r = 1.0 - r, sd_tr = std::sqrt(detail::condot_sigma_bar(t, r));
      for (auto& x : xs) {
        double xr = r * x1c + sd_r * rng.normal();
        x = (t / r) * xr + sd_tr * rng.normal();
      }
    } else {
      direct_mean = x1c;
      direct_var = square(path.schedule.ve_sigma(t));
      double sd_r = path.schedule.ve_sigma(r);
      double sd_tr = std::sqrt(square(path.schedule.ve_sigma(t)) - sd_r * sd_r);
      for (auto& x : xs) {
        double xr = x1c + sd_r * rng.normal();
        x = xr + sd_tr * rng.normal();
      }
    }
    double mean = 0.0;
    for (double x : xs) mean += x / double(n_mc);
    double var = 0.0;
    for (double x : xs) var += square(x - mean) / double(n_mc - 1);
    res.mean_dev = std::abs(mean - direct_mean);
    res.var_dev = std::abs(var - direct_var);
    res.mean_se = std::sqrt(var / double(n_mc));
    res.var_se = var * std::sqrt(2.0 / double(n_mc - 1));
  }
  return res;
}

struct ConvergenceRow {
  int K;
  double mean_err;   // mean over seeds of sup-norm error
  double max_err;
  double mse;        // mean squared sup-norm error
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;
  double loglog_slope = 0.0;  // slope of log(mse) vs log(K)
};

/// SNIS-vs-exact error table over K, with the fitted log-log slope of the
/// squared error (expected near -1: variance decays as O(1/K)).
inline ConvergenceReport snis_convergence_report(const PathBundle& path, const EnergySpec& spec,
                                                 const MixedState& x_t, double t,
                                                 const std::vector<int>& Ks, int seeds,
                                                 uint64_t seed0 = 1234) {
  GeneratorEstimate exact = exact_marginal_rates(path, spec, x_t, t);
  auto energy1 = [&](const MixedState& s) { return energy(spec, s); };
  ConvergenceReport rep;
  for (int K : Ks) {
    ConvergenceRow row{K, 0.0, 0.0, 0.0};
    for (int s = 0; s < seeds; ++s) {
      Rng rng(mix_seed({seed0, uint64_t(K), uint64_t(s)}));
      EstimatorResult est = snis_generator(path, x_t, t, K, rng, energy1);
      double err = 0.0;
      for (size_t i = 0; i < exact.rates.size(); ++i)
        err = std::max(err, std::abs(est.f.rates[i] - exact.rates[i]));
      row.mean_err += err / seeds;
      row.max_err = std::max(row.max_err, err);
      row.mse += err * err / seeds;
    }
    rep.rows.push_back(row);
  }
  // least-squares slope in log-log space
  int n = int(rep.rows.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& row : rep.rows) {
    double lx = std::log(double(row.K)), ly = std::log(row.mse);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  rep.loglog_slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return rep;
}

}  // namespace oracle
}  // namespace egm
