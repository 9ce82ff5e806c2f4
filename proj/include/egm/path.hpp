#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "egm/common.hpp"
#include "egm/energy.hpp"
#include "egm/state.hpp"

namespace egm {

enum class ContPath { None, CondOT, VE };

inline ContPath cont_path_from_name(const std::string& s) {
  if (s == "none") return ContPath::None;
  if (s == "condot") return ContPath::CondOT;
  if (s == "ve") return ContPath::VE;
  throw std::invalid_argument("unknown continuous path: " + s);
}

/// Noising schedules. The masked path uses the linear schedule kappa_t = t;
/// CondOT uses alpha_t = t implicitly; VE interpolates sigma_max -> sigma_min
/// exponentially.
struct Schedule {
  double sigma_min = 0.01;
  double sigma_max = 2.0;

  double kappa(double t) const { return t; }
  double kappa_dot(double /*t*/) const { return 1.0; }

  double ve_sigma(double t) const {
    return sigma_max * std::pow(sigma_min / sigma_max, t);
  }
  double ve_sigma_dot(double t) const {
    return ve_sigma(t) * std::log(sigma_min / sigma_max);
  }
};

/// Per-position jump rate table plus continuous drift: the linear
/// parametrization F_t(x). Row i holds the rates toward each data token at
/// position i; rows at unmasked positions are zero.
struct GeneratorEstimate {
  std::vector<double> rates;  // d_disc * vocab, row-major
  std::vector<double> drift;  // d_cont

  double& rate(int pos, int token, int vocab) { return rates[pos * vocab + token]; }
  double rate(int pos, int token, int vocab) const { return rates[pos * vocab + token]; }
};

inline GeneratorEstimate zero_generator(int d_disc, int vocab, int d_cont) {
  GeneratorEstimate g;
  g.rates.assign(size_t(d_disc) * vocab, 0.0);
  g.drift.assign(d_cont, 0.0);
  return g;
}

/// A conditional probability path family on a mixed state space: masked
/// diffusion on the token part (when d_disc > 0) and CondOT or VE on the
/// continuous part. All kernels factorize per coordinate.
struct PathBundle {
  int d_disc = 0;
  int vocab = 0;  // data tokens 0..vocab-1, mask token = vocab
  int d_cont = 0;
  ContPath cont = ContPath::None;
  Schedule schedule;

  TokenId mask_token() const { return static_cast<TokenId>(vocab); }
  bool has_disc() const { return d_disc > 0; }
  bool has_cont() const { return cont != ContPath::None && d_cont > 0; }

  void check_state(const MixedState& x, const char* who) const {
    if (int(x.disc.size()) != d_disc || int(x.cont.size()) != (has_cont() ? d_cont : 0))
      throw std::invalid_argument(std::string(who) + ": state dims do not match path");
  }

  static PathBundle for_task(const EnergySpec& spec, ContPath cont_kind,
                             double sigma_min = 0.01, double sigma_max = 2.0) {
    PathBundle p;
    p.d_disc = spec.d_disc();
    p.vocab = p.d_disc > 0 ? spec.vocab() : 0;
    p.d_cont = spec.d_cont();
    p.cont = p.d_cont > 0 ? cont_kind : ContPath::None;
    if (p.d_cont > 0 && cont_kind == ContPath::None)
      throw std::invalid_argument("task has a continuous part but no continuous path given");
    p.schedule.sigma_min = sigma_min;
    p.schedule.sigma_max = sigma_max;
    return p;
  }
};

namespace detail {

inline double gauss_logpdf(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * M_PI * var) - square(x - mean) / (2.0 * var);
}

// Backward kernel variance of CondOT: sigma_bar_t = (1-t)^2 - (t/r)^2 (1-r)^2.
inline double condot_sigma_bar(double t, double r) {
  return square(1.0 - t) - square(t / r) * square(1.0 - r);
}

inline double condot_sigma_bar_dot(double t, double r) {
  return -2.0 * (1.0 - t) - 2.0 * t * square((1.0 - r) / r);
}

}  // namespace detail

/// Draws x_t ~ p_{t|1}(.|x1) coordinate-wise.
/// Masked: keep token w.p. kappa_t else MASK. CondOT: N(t x1, (1-t)^2).
/// VE: N(x1, sigma_t^2).
inline MixedState sample_t_given_1(const PathBundle& path, const MixedState& x1, double t,
                                   Rng& rng) {
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("sample_t_given_1: t outside [0,1]");
  path.check_state(x1, "sample_t_given_1");
  if (has_mask(x1, path.mask_token()))
    throw std::invalid_argument("sample_t_given_1: x1 contains mask tokens");
  MixedState x = x1;
  if (path.has_disc()) {
    double kappa = path.schedule.kappa(t);
    for (auto& tok : x.disc)
      if (!rng.bernoulli(kappa)) tok = path.mask_token();
  }
  if (path.has_cont()) {
    if (path.cont == ContPath::CondOT) {
      double sd = 1.0 - t;
      for (int i = 0; i < path.d_cont; ++i) x.cont[i] = t * x1.cont[i] + sd * rng.normal();
    } else {
      double sd = path.schedule.ve_sigma(t);
      for (int i = 0; i < path.d_cont; ++i) x.cont[i] = x1.cont[i] + sd * rng.normal();
    }
  }
  return x;
}

/// Conditional generator F_{t|1}^{x1}(x_t): unmask rates kappa_dot/(1-kappa)
/// toward x1's token at masked positions; CondOT drift (x1-x)/(1-t); VE drift
/// (sigma_dot/sigma)(x - x1).
inline GeneratorEstimate cond_generator_t1(const PathBundle& path, const MixedState& x_t,
                                           const MixedState& x1, double t) {
  if (t >= 1.0) throw SingularTimeError("cond_generator_t1: t must be < 1");
  path.check_state(x_t, "cond_generator_t1");
  path.check_state(x1, "cond_generator_t1");
  GeneratorEstimate g = zero_generator(path.d_disc, path.vocab, path.has_cont() ? path.d_cont : 0);
  if (path.has_disc()) {
    double denom = std::max(1.0 - path.schedule.kappa(t), kOneMinusTFloor);
    double rate = path.schedule.kappa_dot(t) / denom;
    for (int i = 0; i < path.d_disc; ++i)
      if (x_t.disc[i] == path.mask_token()) g.rate(i, x1.disc[i], path.vocab) = rate;
  }
  if (path.has_cont()) {
    if (path.cont == ContPath::CondOT) {
      double denom = std::max(1.0 - t, kOneMinusTFloor);
      for (int i = 0; i < path.d_cont; ++i)
        g.drift[i] = (x1.cont[i] - x_t.cont[i]) / denom;
    } else {
      double ratio = path.schedule.ve_sigma_dot(t) / path.schedule.ve_sigma(t);
      for (int i = 0; i < path.d_cont; ++i)
        g.drift[i] = ratio * (x_t.cont[i] - x1.cont[i]);
    }
  }
  return g;
}

struct ProposalBatch {
  std::vector<MixedState> samples;
  std::vector<double> log_q;
};

/// Proposal q_{1|t}(.|x_t) proportional to p_{t|1}(x_t|.): uniform over data
/// tokens at masked positions (copy elsewhere); CondOT N(x/t, ((1-t)/t)^2);
/// VE N(x, sigma_t^2).
inline ProposalBatch proposal_1_given_t(const PathBundle& path, const MixedState& x_t, double t,
                                        int K, Rng& rng) {
  if (K < 1) throw std::invalid_argument("proposal_1_given_t: K must be >= 1");
  path.check_state(x_t, "proposal_1_given_t");
  if (path.has_cont() && path.cont == ContPath::CondOT && t <= 0.0)
    throw SingularTimeError("proposal_1_given_t: CondOT proposal singular at t=0");
  ProposalBatch out;
  out.samples.assign(K, x_t);
  out.log_q.assign(K, 0.0);
  double log_unif = path.has_disc() ? -std::log(double(path.vocab)) : 0.0;
  for (int k = 0; k < K; ++k) {
    MixedState& s = out.samples[k];
    double lq = 0.0;
    if (path.has_disc()) {
      for (int i = 0; i < path.d_disc; ++i) {
        if (s.disc[i] == path.mask_token()) {
          s.disc[i] = static_cast<TokenId>(rng.uniform_int(path.vocab));
          lq += log_unif;
        }
      }
    }
    if (path.has_cont()) {
      if (path.cont == ContPath::CondOT) {
        double sd = (1.0 - t) / t;
        for (int i = 0; i < path.d_cont; ++i) {
          double mean = x_t.cont[i] / t;
          s.cont[i] = mean + sd * rng.normal();
          lq += detail::gauss_logpdf(s.cont[i], mean, sd * sd);
        }
      } else {
        double sd = path.schedule.ve_sigma(t);
        for (int i = 0; i < path.d_cont; ++i) {
          s.cont[i] = x_t.cont[i] + sd * rng.normal();
          lq += detail::gauss_logpdf(s.cont[i], x_t.cont[i], sd * sd);
        }
      }
    }
    out.log_q[k] = lq;
  }
  return out;
}

/// Samples x_t ~ p_{t|r}(.|x_r), the backward kernel (0 < t < r <= 1).
/// Masked: keep w.p. kappa_t/kappa_r else MASK. CondOT: N((t/r)x_r,
/// sigma_bar_t). VE: N(x_r, sigma_t^2 - sigma_r^2).
inline MixedState backward_kernel_sample(const PathBundle& path, const MixedState& x_r, double r,
                                         double t, Rng& rng) {
  if (!(t > 0.0 && t < r && r <= 1.0))
    throw std::invalid_argument("backward_kernel_sample: need 0 < t < r <= 1");
  path.check_state(x_r, "backward_kernel_sample");
  MixedState x = x_r;
  if (path.has_disc()) {
    double keep = path.schedule.kappa(t) / path.schedule.kappa(r);
    for (auto& tok : x.disc)
      if (tok != path.mask_token() && !rng.bernoulli(keep)) tok = path.mask_token();
  }
  if (path.has_cont()) {
    if (path.cont == ContPath::CondOT) {
      double var = detail::condot_sigma_bar(t, r);
      double sd = std::sqrt(var);
      for (int i = 0; i < path.d_cont; ++i) x.cont[i] = (t / r) * x_r.cont[i] + sd * rng.normal();
    } else {
      double var = square(path.schedule.ve_sigma(t)) - square(path.schedule.ve_sigma(r));
      double sd = std::sqrt(var);
      for (int i = 0; i < path.d_cont; ++i) x.cont[i] = x_r.cont[i] + sd * rng.normal();
    }
  }
  return x;
}

/// log p_{t|r}(x_t|x_r): exact Gaussian log-density for the continuous part,
/// log probability mass for tokens (-inf for impossible transitions).
inline double backward_kernel_logpdf(const PathBundle& path, const MixedState& x_t,
                                     const MixedState& x_r, double t, double r) {
  if (!(t > 0.0 && t < r && r <= 1.0))
    throw std::invalid_argument("backward_kernel_logpdf: need 0 < t < r <= 1");
  path.check_state(x_t, "backward_kernel_logpdf");
  path.check_state(x_r, "backward_kernel_logpdf");
  double lp = 0.0;
  if (path.has_disc()) {
    double keep = path.schedule.kappa(t) / path.schedule.kappa(r);
    for (int i = 0; i < path.d_disc; ++i) {
      TokenId a = x_r.disc[i], b = x_t.disc[i];
      if (a == path.mask_token()) {
        if (b != path.mask_token()) return -kInf;  // masked tokens stay masked backward
      } else if (b == a) {
        lp += std::log(keep);
      } else if (b == path.mask_token()) {
        lp += std::log(1.0 - keep);
      } else {
        return -kInf;
      }
    }
  }
  if (path.has_cont()) {
    if (path.cont == ContPath::CondOT) {
      double var = detail::condot_sigma_bar(t, r);
      for (int i = 0; i < path.d_cont; ++i)
        lp += detail::gauss_logpdf(x_t.cont[i], (t / r) * x_r.cont[i], var);
    } else {
      double var = square(path.schedule.ve_sigma(t)) - square(path.schedule.ve_sigma(r));
      for (int i = 0; i < path.d_cont; ++i)
        lp += detail::gauss_logpdf(x_t.cont[i], x_r.cont[i], var);
    }
  }
  return lp;
}

/// Conditional generator F_{t|r}^{x_r}(x_t) of the backward-consistent path.
/// Masked: rate kappa_dot/(kappa_r - kappa_t) toward x_r's token where x_t is
/// masked and x_r is not. CondOT: (1/r)x_r + (sbar_dot/2 sbar)(x_t-(t/r)x_r).
/// VE: sigma_t*sigma_dot_t/(sigma_t^2 - sigma_r^2) (x_t - x_r).
inline GeneratorEstimate cond_generator_tr(const PathBundle& path, const MixedState& x_t,
                                           const MixedState& x_r, double t, double r) {
  if (!(t < r && r <= 1.0)) throw SingularTimeError("cond_generator_tr: need t < r <= 1");
  path.check_state(x_t, "cond_generator_tr");
  path.check_state(x_r, "cond_generator_tr");
  GeneratorEstimate g = zero_generator(path.d_disc, path.vocab, path.has_cont() ? path.d_cont : 0);
  if (path.has_disc()) {
    double gap = path.schedule.kappa(r) - path.schedule.kappa(t);
    double rate = path.schedule.kappa_dot(t) / std::max(gap, kOneMinusTFloor);
    for (int i = 0; i < path.d_disc; ++i)
      if (x_t.disc[i] == path.mask_token() && x_r.disc[i] != path.mask_token())
        g.rate(i, x_r.disc[i], path.vocab) = rate;
  }
  if (path.has_cont()) {
    if (path.cont == ContPath::CondOT) {
      double var = detail::condot_sigma_bar(t, r);
      if (var <= 0.0) throw std::invalid_argument("cond_generator_tr: sigma_bar <= 0");
      double coef = detail::condot_sigma_bar_dot(t, r) / (2.0 * var);
      for (int i = 0; i < path.d_cont; ++i)
        g.drift[i] = x_r.cont[i] / r + coef * (x_t.cont[i] - (t / r) * x_r.cont[i]);
    } else {
      double st = path.schedule.ve_sigma(t), sr = path.schedule.ve_sigma(r);
      double var = st * st - sr * sr;
      if (var <= 0.0) throw std::invalid_argument("cond_generator_tr: VE variance <= 0");
      double coef = st * path.schedule.ve_sigma_dot(t) / var;
      for (int i = 0; i < path.d_cont; ++i) g.drift[i] = coef * (x_t.cont[i] - x_r.cont[i]);
    }
  }
  return g;
}

/// Proposal q_{r|t}(.|x_t) proportional to p_{t|r}(x_t|.). Unmasked tokens are
/// copied; a masked token draws from Cat(1 - kappa_t/kappa_r per data token,
/// 1 for MASK). CondOT: N((r/t)x_t, (r/t)^2 sigma_bar_t). VE: N(x_t,
/// sigma_t^2 - sigma_r^2).
inline ProposalBatch proposal_r_given_t(const PathBundle& path, const MixedState& x_t, double t,
                                        double r, int K, Rng& rng) {
  if (!(t > 0.0 && t < r && r <= 1.0))
    throw std::invalid_argument("proposal_r_given_t: need 0 < t < r <= 1");
  if (K < 1) throw std::invalid_argument("proposal_r_given_t: K must be >= 1");
  path.check_state(x_t, "proposal_r_given_t");
  ProposalBatch out;
  out.samples.assign(K, x_t);
  out.log_q.assign(K, 0.0);

  double unmask_w = 0.0, total_w = 1.0;
  if (path.has_disc()) {
    unmask_w = 1.0 - path.schedule.kappa(t) / path.schedule.kappa(r);
    total_w = 1.0 + path.vocab * unmask_w;
  }
  double cont_sd = 0.0;
  if (path.has_cont())
    cont_sd = path.cont == ContPath::CondOT
                  ? (r / t) * std::sqrt(detail::condot_sigma_bar(t, r))
                  : std::sqrt(square(path.schedule.ve_sigma(t)) - square(path.schedule.ve_sigma(r)));

  for (int k = 0; k < K; ++k) {
    MixedState& s = out.samples[k];
    double lq = 0.0;
    if (path.has_disc()) {
      for (int i = 0; i < path.d_disc; ++i) {
        if (s.disc[i] != path.mask_token()) continue;
        double u = rng.uniform() * total_w;
        if (u < path.vocab * unmask_w) {
          s.disc[i] = static_cast<TokenId>(std::min<int>(int(u / unmask_w), path.vocab - 1));
          lq += std::log(unmask_w / total_w);
        } else {
          lq += std::log(1.0 / total_w);
        }
      }
    }
    if (path.has_cont()) {
      for (int i = 0; i < path.d_cont; ++i) {
        double mean = path.cont == ContPath::CondOT ? (r / t) * x_t.cont[i] : x_t.cont[i];
        s.cont[i] = mean + cont_sd * rng.normal();
        lq += detail::gauss_logpdf(s.cont[i], mean, cont_sd * cont_sd);
      }
    }
    out.log_q[k] = lq;
  }
  return out;
}

/// Normalizer of q_{1|r}: masked tokens contribute log(V (1-kappa_r)),
/// unmasked log(kappa_r); CondOT contributes -d_cont log r; VE contributes 0.
inline double log_Z_1_given_r(const PathBundle& path, const MixedState& x_r, double r) {
  if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("log_Z_1_given_r: r must be in (0,1]");
  path.check_state(x_r, "log_Z_1_given_r");
  double lz = 0.0;
  if (path.has_disc()) {
    double kappa = path.schedule.kappa(r);
    for (TokenId tok : x_r.disc)
      lz += tok == path.mask_token() ? std::log(path.vocab * (1.0 - kappa)) : std::log(kappa);
  }
  if (path.has_cont() && path.cont == ContPath::CondOT) lz -= path.d_cont * std::log(r);
  return lz;
}

/// Prior at t=0: all-MASK tokens; CondOT N(0, I); VE N(0, sigma_max^2 I).
inline MixedState sample_prior(const PathBundle& path, Rng& rng) {
  MixedState x;
  x.disc.assign(path.d_disc, path.mask_token());
  if (path.has_cont()) {
    x.cont.resize(path.d_cont);
    double sd = path.cont == ContPath::CondOT ? 1.0 : path.schedule.sigma_max;
    for (auto& v : x.cont) v = sd * rng.normal();
  }
  return x;
}

}  // namespace egm
