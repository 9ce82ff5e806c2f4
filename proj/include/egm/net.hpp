#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "egm/common.hpp"
#include "egm/path.hpp"
#include "egm/state.hpp"

namespace egm {

/// Sinusoidal time embedding: [sin(w_k t)..., cos(w_k t)...] with geometric
/// frequencies w_k = 10^4^(-2k/dim).
inline Eigen::VectorXd time_embed(double t, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("time_embed: dim must be even");
  Eigen::VectorXd out(dim);
  int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    double w = std::pow(1e4, -2.0 * k / double(dim));
    out[k] = std::sin(w * t);
    out[half + k] = std::cos(w * t);
  }
  return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
         x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

/// Architecture descriptor: token/continuous/time input encoding, a GELU MLP
/// trunk (optionally residual), and any of a denoiser head (d_disc x V
/// logits), a drift head (R^{d_cont}) and a scalar head.
struct NetArch {
  int d_disc = 0, vocab = 0;
  int d_cont = 0;
  int token_embed = 4, cont_embed = 64, time_embed_dim = 128;
  int hidden = 256, layers = 3;
  bool residual = false;
  bool denoiser_head = false, drift_head = false, scalar_head = false;

  int input_dim() const {
    return d_disc * token_embed + (d_cont > 0 ? cont_embed : 0) + time_embed_dim;
  }

  struct Tensor {
    std::string name;
    int rows, cols;
    int64_t offset;
  };

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> ts;
    int64_t off = 0;
    auto add = [&](const std::string& name, int r, int c) {
      ts.push_back({name, r, c, off});
      off += int64_t(r) * c;
    };
    if (d_disc > 0) add("tok_embed", token_embed, vocab + 1);
    if (d_cont > 0) {
      add("cont_w", cont_embed, d_cont);
      add("cont_b", cont_embed, 1);
    }
    add("trunk_w0", hidden, input_dim());
    add("trunk_b0", hidden, 1);
    for (int l = 1; l < layers; ++l) {
      add("trunk_w" + std::to_string(l), hidden, hidden);
      add("trunk_b" + std::to_string(l), hidden, 1);
    }
    if (denoiser_head) {
      add("den_w", d_disc * vocab, hidden);
      add("den_b", d_disc * vocab, 1);
    }
    if (drift_head) {
      add("drift_w", d_cont, hidden);
      add("drift_b", d_cont, 1);
    }
    if (scalar_head) {
      add("scalar_w", 1, hidden);
      add("scalar_b", 1, 1);
    }
    return ts;
  }

  int64_t param_count() const {
    auto ts = tensors();
    return ts.empty() ? 0 : ts.back().offset + int64_t(ts.back().rows) * ts.back().cols;
  }

  static NetArch sampler(const PathBundle& path, int hidden, int layers, bool residual,
                         int tok_e = 4, int cont_e = 64, int time_e = 128) {
    NetArch a;
    a.d_disc = path.d_disc;
    a.vocab = path.vocab;
    a.d_cont = path.has_cont() ? path.d_cont : 0;
    a.token_embed = tok_e;
    a.cont_embed = cont_e;
    a.time_embed_dim = time_e;
    a.hidden = hidden;
    a.layers = layers;
    a.residual = residual;
    a.denoiser_head = a.d_disc > 0;
    a.drift_head = a.d_cont > 0;
    return a;
  }

  static NetArch energy(const PathBundle& path, int hidden, int layers, bool residual,
                        int tok_e = 4, int cont_e = 64, int time_e = 128) {
    NetArch a = sampler(path, hidden, layers, residual, tok_e, cont_e, time_e);
    a.denoiser_head = false;
    a.drift_head = false;
    a.scalar_head = true;
    return a;
  }

  bool operator==(const NetArch&) const = default;
};

namespace netdetail {

inline Eigen::Map<const Eigen::MatrixXd> view(const Eigen::VectorXd& w, const NetArch::Tensor& t) {
  return Eigen::Map<const Eigen::MatrixXd>(w.data() + t.offset, t.rows, t.cols);
}

inline Eigen::Map<Eigen::MatrixXd> view(Eigen::VectorXd& w, const NetArch::Tensor& t) {
  return Eigen::Map<Eigen::MatrixXd>(w.data() + t.offset, t.rows, t.cols);
}

struct TensorIndex {
  std::vector<NetArch::Tensor> ts;
  const NetArch::Tensor& operator[](const std::string& name) const {
    for (const auto& t : ts)
      if (t.name == name) return t;
    throw std::logic_error("unknown tensor: " + name);
  }
};

}  // namespace netdetail

/// Flat parameter vector with the gradient buffer, AdamW moments and EMA
/// shadow that every trainable network carries.
struct NetworkParams {
  NetArch arch;
  Eigen::VectorXd w, grad, m, v, ema;
  int64_t step = 0;
  int64_t skipped_steps = 0;

  NetworkParams() = default;
  explicit NetworkParams(const NetArch& a) { reset(a); }

  void reset(const NetArch& a) {
    arch = a;
    int64_t n = a.param_count();
    w = Eigen::VectorXd::Zero(n);
    grad = Eigen::VectorXd::Zero(n);
    m = Eigen::VectorXd::Zero(n);
    v = Eigen::VectorXd::Zero(n);
    ema = Eigen::VectorXd::Zero(n);
    step = 0;
    skipped_steps = 0;
  }

  /// Fan-in uniform init for embeddings and trunk; output heads start at
  /// zero so the denoiser opens uniform and the drift opens at zero.
  void init(uint64_t seed) {
    Rng rng(seed);
    for (const auto& t : arch.tensors()) {
      auto mview = netdetail::view(w, t);
      bool is_bias = t.cols == 1 && t.name != "tok_embed";
      bool is_head = t.name.rfind("den_", 0) == 0 || t.name.rfind("drift_", 0) == 0 ||
                     t.name.rfind("scalar_", 0) == 0;
      if (is_head || is_bias) {
        mview.setZero();
      } else {
        double s = 1.0 / std::sqrt(double(t.name == "tok_embed" ? arch.token_embed : t.cols));
        for (int c = 0; c < t.cols; ++c)
          for (int r = 0; r < t.rows; ++r) mview(r, c) = s * (2.0 * rng.uniform() - 1.0);
      }
    }
    ema = w;
  }

  void zero_grad() { grad.setZero(); }
};

struct NetOutput {
  Eigen::MatrixXd probs;      // (d_disc*vocab) x N, softmax per position
  Eigen::MatrixXd drift;      // d_cont x N
  Eigen::RowVectorXd scalar;  // 1 x N
};

struct NetCache {
  Eigen::MatrixXd input;               // I x N
  std::vector<Eigen::MatrixXd> pre;    // layers of pre-activations
  std::vector<Eigen::MatrixXd> act;    // layers of activations
  std::vector<const MixedState*> xs;   // borrowed batch
  Eigen::MatrixXd cont_in;             // d_cont x N
};

namespace netdetail {

inline void build_input(const NetArch& arch, std::span<const MixedState* const> xs,
                        std::span<const double> ts, const Eigen::VectorXd& w,
                        const TensorIndex& idx, Eigen::MatrixXd& X, Eigen::MatrixXd& cont_in) {
  const int N = int(xs.size());
  X.resize(arch.input_dim(), N);
  int tok_rows = arch.d_disc * arch.token_embed;
  if (arch.d_disc > 0) {
    auto emb = view(w, idx["tok_embed"]);
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < arch.d_disc; ++i)
        X.col(n).segment(i * arch.token_embed, arch.token_embed) = emb.col(xs[n]->disc[i]);
  }
  if (arch.d_cont > 0) {
    cont_in.resize(arch.d_cont, N);
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < arch.d_cont; ++i) cont_in(i, n) = xs[n]->cont[i];
    X.middleRows(tok_rows, arch.cont_embed).noalias() = view(w, idx["cont_w"]) * cont_in;
    X.middleRows(tok_rows, arch.cont_embed).colwise() +=
        Eigen::VectorXd(view(w, idx["cont_b"]).col(0));
  }
  int time_off = tok_rows + (arch.d_cont > 0 ? arch.cont_embed : 0);
  // distinct times are rare inside one batch call; memoize the last one
  double last_t = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd te;
  for (int n = 0; n < N; ++n) {
    if (ts[n] != last_t) {
      te = time_embed(ts[n], arch.time_embed_dim);
      last_t = ts[n];
    }
    X.col(n).segment(time_off, arch.time_embed_dim) = te;
  }
}

}  // namespace netdetail

/// Deterministic batched forward pass. Pass a cache to enable backward().
inline void net_forward(const NetArch& arch, const Eigen::VectorXd& w,
                        std::span<const MixedState* const> xs, std::span<const double> ts,
                        NetOutput& out, NetCache* cache = nullptr) {
  if (xs.size() != ts.size()) throw std::invalid_argument("net_forward: batch size mismatch");
  const int N = int(xs.size());
  netdetail::TensorIndex idx{arch.tensors()};
  for (const auto& s : xs)
    if (int(s->disc.size()) != arch.d_disc || int(s->cont.size()) != arch.d_cont)
      throw std::invalid_argument("net_forward: state dims do not match arch");

  NetCache local;
  NetCache& c = cache ? *cache : local;
  c.xs.assign(xs.begin(), xs.end());
  netdetail::build_input(arch, xs, ts, w, idx, c.input, c.cont_in);

  c.pre.resize(arch.layers);
  c.act.resize(arch.layers);
  const Eigen::MatrixXd* h = &c.input;
  for (int l = 0; l < arch.layers; ++l) {
    const auto& wt = idx["trunk_w" + std::to_string(l)];
    const auto& bt = idx["trunk_b" + std::to_string(l)];
    c.pre[l].noalias() = netdetail::view(w, wt) * (*h);
    c.pre[l].colwise() += Eigen::VectorXd(netdetail::view(w, bt).col(0));
    c.act[l] = c.pre[l].unaryExpr([](double x) { return gelu(x); });
    if (arch.residual && l >= 1) c.act[l] += *h;
    h = &c.act[l];
  }

  if (arch.denoiser_head) {
    out.probs.noalias() = netdetail::view(w, idx["den_w"]) * (*h);
    out.probs.colwise() += Eigen::VectorXd(netdetail::view(w, idx["den_b"]).col(0));
    // per-position softmax over the vocab block
    for (int n = 0; n < N; ++n) {
      for (int i = 0; i < arch.d_disc; ++i) {
        auto block = out.probs.col(n).segment(i * arch.vocab, arch.vocab);
        double mx = block.maxCoeff();
        block = (block.array() - mx).exp();
        block /= block.sum();
      }
    }
  }
  if (arch.drift_head) {
    out.drift.noalias() = netdetail::view(w, idx["drift_w"]) * (*h);
    out.drift.colwise() += Eigen::VectorXd(netdetail::view(w, idx["drift_b"]).col(0));
  }
  if (arch.scalar_head) {
    out.scalar.noalias() = netdetail::view(w, idx["scalar_w"]).row(0) * (*h);
    out.scalar.array() += netdetail::view(w, idx["scalar_b"])(0, 0);
  }
}

/// Reverse-mode gradients of a scalar loss with adjoints given w.r.t. the
/// head outputs (dprobs is w.r.t. post-softmax probabilities). Accumulates
/// into grad. Requires the cache of the matching forward call.
inline void net_backward(const NetArch& arch, const Eigen::VectorXd& w, const NetCache& cache,
                         const NetOutput& out, const Eigen::MatrixXd* dprobs,
                         const Eigen::MatrixXd* ddrift, const Eigen::RowVectorXd* dscalar,
                         Eigen::VectorXd& grad) {
  if (cache.xs.empty()) throw std::logic_error("net_backward: forward cache missing");
  const int N = int(cache.xs.size());
  netdetail::TensorIndex idx{arch.tensors()};
  const Eigen::MatrixXd& top = arch.layers > 0 ? cache.act.back() : cache.input;

  Eigen::MatrixXd dtop = Eigen::MatrixXd::Zero(top.rows(), N);
  if (dprobs) {
    // softmax backward per position block
    Eigen::MatrixXd dlogits(arch.d_disc * arch.vocab, N);
    for (int n = 0; n < N; ++n) {
      for (int i = 0; i < arch.d_disc; ++i) {
        auto p = out.probs.col(n).segment(i * arch.vocab, arch.vocab);
        auto dp = dprobs->col(n).segment(i * arch.vocab, arch.vocab);
        double dot = p.dot(dp);
        dlogits.col(n).segment(i * arch.vocab, arch.vocab) =
            p.array() * (dp.array() - dot);
      }
    }
    const auto& wt = idx["den_w"];
    netdetail::view(grad, wt).noalias() += dlogits * top.transpose();
    netdetail::view(grad, idx["den_b"]).col(0) += dlogits.rowwise().sum();
    dtop.noalias() += netdetail::view(w, wt).transpose() * dlogits;
  }
  if (ddrift) {
    const auto& wt = idx["drift_w"];
    netdetail::view(grad, wt).noalias() += (*ddrift) * top.transpose();
    netdetail::view(grad, idx["drift_b"]).col(0) += ddrift->rowwise().sum();
    dtop.noalias() += netdetail::view(w, wt).transpose() * (*ddrift);
  }
  if (dscalar) {
    const auto& wt = idx["scalar_w"];
    netdetail::view(grad, wt).noalias() += (*dscalar) * top.transpose();
    netdetail::view(grad, idx["scalar_b"])(0, 0) += dscalar->sum();
    dtop.noalias() += netdetail::view(w, wt).transpose() * (*dscalar);
  }

  // trunk backward
  Eigen::MatrixXd dh = std::move(dtop);
  for (int l = arch.layers - 1; l >= 0; --l) {
    Eigen::MatrixXd dpre = dh.cwiseProduct(cache.pre[l].unaryExpr([](double x) {
      return gelu_grad(x);
    }));
    const Eigen::MatrixXd& below = l == 0 ? cache.input : cache.act[l - 1];
    const auto& wt = idx["trunk_w" + std::to_string(l)];
    netdetail::view(grad, wt).noalias() += dpre * below.transpose();
    netdetail::view(grad, idx["trunk_b" + std::to_string(l)]).col(0) += dpre.rowwise().sum();
    Eigen::MatrixXd dbelow;
    dbelow.noalias() = netdetail::view(w, wt).transpose() * dpre;
    if (arch.residual && l >= 1) dbelow += dh;  // skip connection
    dh = std::move(dbelow);
  }

  // input embedding backward
  int tok_rows = arch.d_disc * arch.token_embed;
  if (arch.d_disc > 0) {
    auto demb = netdetail::view(grad, idx["tok_embed"]);
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < arch.d_disc; ++i)
        demb.col(cache.xs[n]->disc[i]) +=
            dh.col(n).segment(i * arch.token_embed, arch.token_embed);
  }
  if (arch.d_cont > 0) {
    auto dcont = dh.middleRows(tok_rows, arch.cont_embed);
    netdetail::view(grad, idx["cont_w"]).noalias() += dcont * cache.cont_in.transpose();
    netdetail::view(grad, idx["cont_b"]).col(0) += dcont.rowwise().sum();
  }
}

// convenience overloads
inline void net_forward(const NetArch& arch, const Eigen::VectorXd& w,
                        const std::vector<MixedState>& xs, std::span<const double> ts,
                        NetOutput& out, NetCache* cache = nullptr) {
  std::vector<const MixedState*> ptrs(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) ptrs[i] = &xs[i];
  net_forward(arch, w, std::span<const MixedState* const>(ptrs), ts, out, cache);
}

inline void net_forward(const NetArch& arch, const Eigen::VectorXd& w,
                        const std::vector<MixedState>& xs, double t, NetOutput& out,
                        NetCache* cache = nullptr) {
  std::vector<double> ts(xs.size(), t);
  net_forward(arch, w, xs, ts, out, cache);
}

inline NetOutput net_forward_one(const NetArch& arch, const Eigen::VectorXd& w,
                                 const MixedState& x, double t, NetCache* cache = nullptr) {
  NetOutput out;
  const MixedState* p = &x;
  net_forward(arch, w, std::span<const MixedState* const>(&p, 1), std::span<const double>(&t, 1),
              out, cache);
  return out;
}

/// Masked positions get rate rows kappa_dot/(1-kappa) * denoiser probs;
/// unmasked positions stay zero.
inline GeneratorEstimate denoiser_to_rates(const PathBundle& path,
                                           const Eigen::Ref<const Eigen::VectorXd>& probs,
                                           const MixedState& x_t, double t) {
  if (t >= 1.0) throw SingularTimeError("denoiser_to_rates: t must be < 1");
  GeneratorEstimate g = zero_generator(path.d_disc, path.vocab, 0);
  double factor =
      path.schedule.kappa_dot(t) / std::max(1.0 - path.schedule.kappa(t), kOneMinusTFloor);
  for (int i = 0; i < path.d_disc; ++i)
    if (x_t.disc[i] == path.mask_token())
      for (int y = 0; y < path.vocab; ++y)
        g.rate(i, y, path.vocab) = factor * probs[i * path.vocab + y];
  return g;
}

/// Decoupled-weight-decay Adam with bias correction. Steps are skipped (and
/// counted) when the gradient has a non-finite entry. Clears the gradient.
inline bool adamw_step(NetworkParams& np, double lr, double beta1 = 0.9, double beta2 = 0.999,
                       double eps = 1e-8, double weight_decay = 0.0) {
  if (!np.grad.allFinite()) {
    ++np.skipped_steps;
    np.zero_grad();
    return false;
  }
  ++np.step;
  np.m = beta1 * np.m + (1.0 - beta1) * np.grad;
  np.v = beta2 * np.v + (1.0 - beta2) * np.grad.cwiseProduct(np.grad);
  double c1 = 1.0 - std::pow(beta1, double(np.step));
  double c2 = 1.0 - std::pow(beta2, double(np.step));
  Eigen::VectorXd update =
      (np.m / c1).cwiseQuotient(((np.v / c2).cwiseSqrt().array() + eps).matrix());
  if (weight_decay != 0.0) update += weight_decay * np.w;
  np.w -= lr * update;
  np.zero_grad();
  return true;
}

inline double cosine_lr(int64_t step, int64_t total, double lr_max = 1e-3, double lr_min = 1e-5) {
  if (total <= 0) return lr_max;
  double s = std::clamp(double(step) / double(total), 0.0, 1.0);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * s));
}

inline void ema_update(Eigen::VectorXd& shadow, const Eigen::VectorXd& params, double decay) {
  if (shadow.size() != params.size()) throw std::invalid_argument("ema_update: length mismatch");
  shadow = decay * shadow + (1.0 - decay) * params;
}

}  // namespace egm
