#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "egm/common.hpp"
#include "egm/path.hpp"

namespace egm {

/// log((1/K) sum exp(v_i)) by max-shift; exact for K=1. All -inf inputs give
/// -inf (empty weight mass), never NaN.
inline double log_mean_exp(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("log_mean_exp: empty input");
  double mx = -kInf;
  for (double v : values) mx = std::max(mx, v);
  if (mx == -kInf) return -kInf;
  if (std::isinf(mx)) throw std::invalid_argument("log_mean_exp: +inf input");
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - mx);
  return mx + std::log(acc / double(values.size()));
}

/// Normalized ESS = (sum w)^2 / (sum w^2) / n, computed in log space.
inline double normalized_ess(std::span<const double> log_weights) {
  if (log_weights.empty()) throw std::invalid_argument("normalized_ess: empty input");
  double mx = -kInf;
  for (double v : log_weights) mx = std::max(mx, v);
  if (!std::isfinite(mx))
    throw std::invalid_argument("normalized_ess: weights not finite after max-shift");
  double s1 = 0.0, s2 = 0.0;
  for (double v : log_weights) {
    double w = std::exp(v - mx);
    s1 += w;
    s2 += w * w;
  }
  return s1 * s1 / s2 / double(log_weights.size());
}

struct EstimatorOptions {
  double rate_clip = kInf;        // per-position row L2 clip
  double drift_clip = kInf;       // drift vector L2 clip
  bool uniform_on_degenerate = false;  // fall back to unweighted mean instead of throwing
};

struct EstimatorResult {
  GeneratorEstimate f;
  double ess = 1.0;     // normalized ESS of the weights actually used
  bool degenerate = false;
};

inline void clip_generator(GeneratorEstimate& g, int vocab, double rate_clip, double drift_clip) {
  if (vocab > 0 && std::isfinite(rate_clip)) {
    int d_disc = int(g.rates.size()) / vocab;
    for (int i = 0; i < d_disc; ++i) {
      double n2 = 0.0;
      for (int y = 0; y < vocab; ++y) n2 += square(g.rates[i * vocab + y]);
      double n = std::sqrt(n2);
      if (n > rate_clip)
        for (int y = 0; y < vocab; ++y) g.rates[i * vocab + y] *= rate_clip / n;
    }
  }
  if (!g.drift.empty() && std::isfinite(drift_clip)) {
    double n2 = 0.0;
    for (double v : g.drift) n2 += v * v;
    double n = std::sqrt(n2);
    if (n > drift_clip)
      for (double& v : g.drift) v *= drift_clip / n;
  }
}

enum class CondMode { T1, TR };

/// Self-normalized weighted average of conditional generators over an
/// explicit sample set: F = sum_k softmax(log_w)_k * F_{t|1 or t|r}^{s_k}(x_t).
/// The same samples normalize numerator and denominator (shared-sample SNIS).
inline EstimatorResult combine_conditional_generators(
    const PathBundle& path, const MixedState& x_t, double t, double r, CondMode mode,
    std::span<const MixedState> samples, std::span<const double> log_w,
    const EstimatorOptions& opts = {}) {
  if (samples.empty() || samples.size() != log_w.size())
    throw std::invalid_argument("combine_conditional_generators: bad sample/weight sizes");
  const int K = int(samples.size());

  EstimatorResult out;
  out.f = zero_generator(path.d_disc, path.vocab, path.has_cont() ? path.d_cont : 0);

  double mx = -kInf;
  for (double v : log_w) mx = std::max(mx, v);
  std::vector<double> w(K);
  if (mx == -kInf) {
    if (!opts.uniform_on_degenerate)
      throw DegenerateWeightsError("all importance weights vanished");
    out.degenerate = true;
    std::fill(w.begin(), w.end(), 1.0);
  } else {
    for (int k = 0; k < K; ++k) w[k] = std::exp(log_w[k] - mx);
  }
  double wsum = 0.0, wsq = 0.0;
  for (double v : w) {
    wsum += v;
    wsq += v * v;
  }
  out.ess = wsum * wsum / wsq / double(K);

  // Rate factor shared by every sample (same (t, r) for all of them).
  double rate_const = 0.0;
  if (path.has_disc()) {
    if (mode == CondMode::T1) {
      if (t >= 1.0) throw SingularTimeError("combine: t must be < 1");
      rate_const = path.schedule.kappa_dot(t) /
                   std::max(1.0 - path.schedule.kappa(t), kOneMinusTFloor);
    } else {
      if (!(t < r && r <= 1.0)) throw SingularTimeError("combine: need t < r <= 1");
      rate_const = path.schedule.kappa_dot(t) /
                   std::max(path.schedule.kappa(r) - path.schedule.kappa(t), kOneMinusTFloor);
    }
  }
  double ot_denom = 0.0, ve_ratio = 0.0, tr_coef = 0.0;
  if (path.has_cont()) {
    if (mode == CondMode::T1) {
      if (path.cont == ContPath::CondOT)
        ot_denom = std::max(1.0 - t, kOneMinusTFloor);
      else
        ve_ratio = path.schedule.ve_sigma_dot(t) / path.schedule.ve_sigma(t);
    } else {
      if (path.cont == ContPath::CondOT) {
        double var = detail::condot_sigma_bar(t, r);
        if (var <= 0.0) throw std::invalid_argument("combine: sigma_bar <= 0");
        tr_coef = detail::condot_sigma_bar_dot(t, r) / (2.0 * var);
      } else {
        double st = path.schedule.ve_sigma(t), sr = path.schedule.ve_sigma(r);
        tr_coef = st * path.schedule.ve_sigma_dot(t) / (st * st - sr * sr);
      }
    }
  }

  for (int k = 0; k < K; ++k) {
    double wk = w[k] / wsum;
    if (wk == 0.0) continue;
    const MixedState& s = samples[k];
    if (path.has_disc()) {
      for (int i = 0; i < path.d_disc; ++i) {
        if (x_t.disc[i] != path.mask_token()) continue;
        TokenId tok = s.disc[i];
        if (tok == path.mask_token()) continue;  // TR sample still masked: zero rates
        out.f.rate(i, tok, path.vocab) += wk * rate_const;
      }
    }
    if (path.has_cont()) {
      for (int i = 0; i < path.d_cont; ++i) {
        double d;
        if (mode == CondMode::T1) {
          d = path.cont == ContPath::CondOT ? (s.cont[i] - x_t.cont[i]) / ot_denom
                                            : ve_ratio * (x_t.cont[i] - s.cont[i]);
        } else {
          d = path.cont == ContPath::CondOT
                  ? s.cont[i] / r + tr_coef * (x_t.cont[i] - (t / r) * s.cont[i])
                  : tr_coef * (x_t.cont[i] - s.cont[i]);
        }
        out.f.drift[i] += wk * d;
      }
    }
  }
  clip_generator(out.f, path.vocab, opts.rate_clip, opts.drift_clip);
  return out;
}

/// SNIS estimate of the marginal generator at (x_t, t): K proposals from
/// q_{1|t} with weights softmax(-E_1).
template <class EnergyFn>
EstimatorResult snis_generator(const PathBundle& path, const MixedState& x_t, double t, int K,
                               Rng& rng, EnergyFn&& energy1, const EstimatorOptions& opts = {}) {
  if (K < 1) throw std::invalid_argument("snis_generator: K must be >= 1");
  ProposalBatch prop = proposal_1_given_t(path, x_t, t, K, rng);
  std::vector<double> log_w(K);
  for (int k = 0; k < K; ++k) log_w[k] = -energy1(prop.samples[k]);
  return combine_conditional_generators(path, x_t, t, 1.0, CondMode::T1, prop.samples, log_w,
                                        opts);
}

/// NEM regression target: E_hat_r = -log (1/K) sum exp(-E_1(x1_i)) -
/// log Z_{1|r}(x_r), with x1_i ~ q_{1|r}(.|x_r). Throws on fully degenerate
/// weights unless told otherwise (then returns +inf for the caller to clip).
template <class EnergyFn>
double intermediate_energy_target(const PathBundle& path, const MixedState& x_r, double r, int K,
                                  Rng& rng, EnergyFn&& energy1, bool throw_on_degenerate = true) {
  if (K < 1) throw std::invalid_argument("intermediate_energy_target: K must be >= 1");
  if (!(r > 0.0 && r <= 1.0))
    throw std::invalid_argument("intermediate_energy_target: r must be in (0,1]");
  ProposalBatch prop = proposal_1_given_t(path, x_r, r, K, rng);
  std::vector<double> neg_e(K);
  for (int k = 0; k < K; ++k) neg_e[k] = -energy1(prop.samples[k]);
  double lme = log_mean_exp(neg_e);
  if (lme == -kInf) {
    if (throw_on_degenerate)
      throw DegenerateWeightsError("intermediate_energy_target: all completions have +inf energy");
    return kInf;
  }
  return -lme - log_Z_1_given_r(path, x_r, r);
}

/// Bootstrapped estimate of the marginal generator: K proposals x_r from
/// q_{r|t} weighted by softmax(-E_r) where E_r comes from the intermediate
/// energy model (batch callback); at r=1 the caller passes the true energy.
template <class BatchNegLogW>
EstimatorResult bootstrap_generator(const PathBundle& path, const MixedState& x_t, double t,
                                    double r, int K, Rng& rng, BatchNegLogW&& energy_r,
                                    const EstimatorOptions& opts = {}) {
  if (K < 1) throw std::invalid_argument("bootstrap_generator: K must be >= 1");
  ProposalBatch prop = proposal_r_given_t(path, x_t, t, r, K, rng);
  std::vector<double> e_r = energy_r(prop.samples, r);
  if (int(e_r.size()) != K) throw std::logic_error("bootstrap_generator: bad energy batch size");
  std::vector<double> log_w(K);
  for (int k = 0; k < K; ++k) log_w[k] = -e_r[k];
  return combine_conditional_generators(path, x_t, t, r, CondMode::TR, prop.samples, log_w, opts);
}

}  // namespace egm
